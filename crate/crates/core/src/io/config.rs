use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{AblationConfig, Dimension, SegmentConfig, TrainSchedule};
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub target_rate_hz: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { low_hz: 1.0, high_hz: 50.0, target_rate_hz: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSettings {
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub seed: u64,
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings { outer_folds: 10, inner_folds: 4, seed: 0 }
    }
}

/// Everything that affects an experiment's numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub preprocess: PreprocessConfig,
    pub segments: SegmentConfig,
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub cv: CvSettings,
    pub dimensions: Vec<Dimension>,
    /// Variants run by the ablation sweep, each compared against `model`.
    pub ablations: Vec<AblationConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            preprocess: PreprocessConfig::default(),
            segments: SegmentConfig::default(),
            model: ModelConfig::default(),
            schedule: TrainSchedule::default(),
            cv: CvSettings::default(),
            dimensions: vec![Dimension::Arousal, Dimension::Valence],
            ablations: Vec::new(),
        }
    }
}

pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
