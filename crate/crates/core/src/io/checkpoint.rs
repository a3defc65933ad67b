use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{Dimension, SegmentConfig};
use crate::model::{AtDgnn, ModelConfig, ModelState};

pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with what is needed to rebuild its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub model: ModelConfig,
    pub segments: SegmentConfig,
    pub dimension: Dimension,
    pub electrodes: Vec<String>,
    pub input_channels: usize,
    pub input_len: usize,
    pub state: ModelState,
}

impl Checkpoint {
    pub fn capture(model: &mut AtDgnn, segments: &SegmentConfig, dimension: Dimension, electrodes: &[String]) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            segments: segments.clone(),
            dimension,
            electrodes: electrodes.to_vec(),
            input_channels: model.dims.input_channels,
            input_len: model.dims.input_len,
            state: model.state(),
        }
    }

    pub fn restore(&self) -> Result<AtDgnn> {
        let dims = self.model.resolve(self.input_channels, self.input_len, &self.electrodes)?;
        let mut model = AtDgnn::new(&self.model, &dims, 0);
        model.load_state(&self.state)?;
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Corruption(format!("checkpoint encoding: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct VersionOnly {
            format_version: u32,
        }
        let v: VersionOnly =
            serde_json::from_str(text).map_err(|e| Error::Corruption(format!("checkpoint is not valid JSON: {e}")))?;
        if v.format_version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: v.format_version, supported: CHECKPOINT_VERSION });
        }
        serde_json::from_str(text).map_err(|e| Error::Corruption(format!("malformed checkpoint: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
