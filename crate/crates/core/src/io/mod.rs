//! On-disk formats: the EEG container, synthetic recordings and TOML configs.

pub mod checkpoint;
pub mod config;
pub mod container;
pub mod synth;

pub use checkpoint::Checkpoint;
pub use config::{load_toml, ExperimentConfig};
pub use container::{read_container, read_manifest, write_atomic, write_container, Manifest};
pub use synth::{generate_synthetic, SynthOutput, SynthSpec};
