//! Temporal feature extractor, graph stage and the assembled network.

pub mod config;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod network;

pub use config::{
    window_count, AttentionSettings, GnnSettings, GraphChoice, InputMode, ModelConfig, ModelDims, TemporalLearnerConfig,
    WindowSettings,
};
pub use graph::{GraphDefinition, GraphPreset, MONTAGE_32};
pub use layers::Mode;
pub use network::{AtDgnn, ModelState};
