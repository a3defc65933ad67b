use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::InputMode;
use crate::signal::{band_decompose, stack_bands, BandDefinition, EegRecording, TrialLabels};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dimension {
    Arousal,
    Valence,
}

impl Dimension {
    pub fn label(self, l: &TrialLabels) -> usize {
        match self {
            Dimension::Arousal => l.arousal as usize,
            Dimension::Valence => l.valence as usize,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dimension::Arousal => "arousal",
            Dimension::Valence => "valence",
        }
    }
}

/// How trials are cut into fixed-length network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    pub segment_seconds: f64,
    pub hop_seconds: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig { segment_seconds: 4.0, hop_seconds: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub trial: usize,
    /// Channel-major `E × T` values.
    pub data: Vec<f64>,
    pub labels: TrialLabels,
}

/// Fixed-length segments of every trial of one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub input_channels: usize,
    pub input_len: usize,
    /// Electrode identity of each fused channel.
    pub electrodes: Vec<String>,
    pub trial_count: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Segments every trial; in band-stacked mode the five default bands are
    /// split first and stacked on the channel axis.
    pub fn from_recording(rec: &EegRecording, seg: &SegmentConfig, mode: InputMode) -> Result<Self> {
        rec.validate()?;
        let electrodes = rec.channel_names.clone();
        let source = match mode {
            InputMode::Broadband => rec.clone(),
            InputMode::BandStacked => stack_bands(&band_decompose(rec, &BandDefinition::defaults())?)?,
        };
        let fs = source.sample_rate_hz;
        let len = (seg.segment_seconds * fs).round() as usize;
        let hop = (seg.hop_seconds * fs).round() as usize;
        if len == 0 || hop == 0 {
            return Err(Error::Config(format!("segment {len} / hop {hop} samples must be positive")));
        }
        let mut samples = Vec::new();
        for (trial, &(s, e)) in source.trial_boundaries.iter().enumerate() {
            if e - s < len {
                return Err(Error::Validation(format!(
                    "trial {trial} has {} samples, shorter than one {len}-sample segment",
                    e - s
                )));
            }
            let mut start = s;
            while start + len <= e {
                let mut data = Vec::with_capacity(source.channel_count() * len);
                for ch in &source.samples {
                    data.extend_from_slice(&ch[start..start + len]);
                }
                samples.push(Sample { trial, data, labels: source.labels[trial] });
                start += hop;
            }
        }
        Ok(Dataset {
            input_channels: source.channel_count(),
            input_len: len,
            electrodes,
            trial_count: source.trial_count(),
            samples,
        })
    }

    pub fn samples_of<'a>(&'a self, trials: &'a [usize]) -> impl Iterator<Item = &'a Sample> + 'a {
        self.samples.iter().filter(move |s| trials.contains(&s.trial))
    }
}
