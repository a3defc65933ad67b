use serde::{Deserialize, Serialize};

use super::graph::{GraphDefinition, GraphPreset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TemporalLearnerConfig {
    /// Kernel length of scale `i` is `round(scale_coefficients[i] * fs)`.
    /// An empty list removes the learner.
    pub scale_coefficients: Vec<f64>,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub out_channels_per_scale: usize,
}

impl Default for TemporalLearnerConfig {
    fn default() -> Self {
        TemporalLearnerConfig {
            scale_coefficients: vec![0.5, 0.25, 0.125],
            pool_kernel: 4,
            pool_stride: 4,
            out_channels_per_scale: 8,
        }
    }
}

impl TemporalLearnerConfig {
    /// Halving coefficients 0.5, 0.25, ... for `layers` scales.
    pub fn halving_scales(layers: usize) -> Vec<f64> {
        (0..layers).map(|i| 0.5 / f64::powi(2.0, i as i32)).collect()
    }

    pub fn kernel_lengths(&self, fs: f64) -> Result<Vec<usize>> {
        self.scale_coefficients
            .iter()
            .map(|&a| {
                let k = (a * fs).round();
                if k >= 1.0 {
                    Ok(k as usize)
                } else {
                    Err(Error::Config(format!("scale coefficient {a} gives an empty kernel at {fs} Hz")))
                }
            })
            .collect()
    }

    pub fn feature_count(&self) -> usize {
        self.scale_coefficients.len() * self.out_channels_per_scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSettings {
    /// When false the whole sequence is a single window.
    pub enabled: bool,
    /// Window length in samples of the learner output; `round(fs / 2)` when unset.
    pub size: Option<usize>,
    /// Defaults to half the window.
    pub stride: Option<usize>,
}

impl Default for WindowSettings {
    fn default() -> Self {
        WindowSettings { enabled: true, size: None, stride: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionSettings {
    pub enabled: bool,
    pub heads: usize,
}

impl Default for AttentionSettings {
    fn default() -> Self {
        AttentionSettings { enabled: true, heads: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GnnSettings {
    pub layers: usize,
    pub hidden: usize,
    /// Rectify the similarity before normalising; the raw variant can
    /// produce non-positive degrees.
    pub rectify_similarity: bool,
}

impl Default for GnnSettings {
    fn default() -> Self {
        GnnSettings { layers: 3, hidden: 32, rectify_similarity: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphChoice {
    Preset(GraphPreset),
    Custom(GraphDefinition),
}

impl GraphChoice {
    pub fn definition(&self) -> GraphDefinition {
        match self {
            GraphChoice::Preset(p) => GraphDefinition::preset(*p),
            GraphChoice::Custom(g) => g.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputMode {
    Broadband,
    BandStacked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Rate of the network input.
    pub sample_rate_hz: f64,
    pub input_mode: InputMode,
    pub temporal: TemporalLearnerConfig,
    pub window: WindowSettings,
    pub attention: AttentionSettings,
    /// Channel count after fusion; must equal the graph's electrode count.
    pub fusion_channels: usize,
    pub graph: GraphChoice,
    pub gnn: GnnSettings,
    pub dropout: f64,
    pub classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sample_rate_hz: 200.0,
            input_mode: InputMode::Broadband,
            temporal: TemporalLearnerConfig::default(),
            window: WindowSettings::default(),
            attention: AttentionSettings::default(),
            fusion_channels: 32,
            graph: GraphChoice::Preset(GraphPreset::General),
            gnn: GnnSettings::default(),
            dropout: 0.5,
            classes: 2,
        }
    }
}

/// Every size the network needs, derived from a config and the input layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelDims {
    pub input_channels: usize,
    pub input_len: usize,
    pub kernel_lengths: Vec<usize>,
    /// Channel count and length after the temporal learner.
    pub channels: usize,
    pub seq_len: usize,
    pub window: usize,
    pub stride: usize,
    pub window_count: usize,
    pub heads: usize,
    pub fused_len: usize,
    pub fusion_channels: usize,
    pub permutation: Vec<usize>,
    pub group_sizes: Vec<usize>,
    pub gnn_widths: Vec<usize>,
    pub classes: usize,
}

/// Number of windows of length `w` at stride `s` that fit in `l` samples.
pub fn window_count(l: usize, w: usize, s: usize) -> usize {
    if w == 0 || s == 0 || w > l {
        0
    } else {
        (l - w) / s + 1
    }
}

impl ModelConfig {
    /// Validates the full dimension chain for inputs of `input_channels`
    /// rows and `input_len` samples whose underlying electrodes are
    /// `electrodes` (one name per fused channel).
    pub fn resolve(&self, input_channels: usize, input_len: usize, electrodes: &[String]) -> Result<ModelDims> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return cfg(format!("sample rate {} is not positive", self.sample_rate_hz));
        }
        if input_channels == 0 || input_len == 0 {
            return cfg("input has no channels or samples".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return cfg(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.classes < 2 {
            return cfg("at least two classes are needed".into());
        }
        let t = &self.temporal;
        let kernel_lengths = t.kernel_lengths(self.sample_rate_hz)?;
        let (channels, seq_len) = if kernel_lengths.is_empty() {
            (input_channels, input_len)
        } else {
            if t.pool_kernel == 0 || t.pool_stride == 0 || t.out_channels_per_scale == 0 {
                return cfg("pool sizes and out_channels_per_scale must be positive".into());
            }
            let kmax = *kernel_lengths.iter().max().unwrap_or(&1);
            if input_len < kmax || input_len < t.pool_kernel {
                return cfg(format!("input length {input_len} is shorter than kernel {kmax} or the pool"));
            }
            (t.feature_count(), (input_len - t.pool_kernel) / t.pool_stride + 1)
        };

        let (window, stride) = if self.window.enabled {
            let w = self.window.size.unwrap_or((self.sample_rate_hz / 2.0).round() as usize);
            (w, self.window.stride.unwrap_or((w / 2).max(1)))
        } else {
            (seq_len, seq_len)
        };
        let n = window_count(seq_len, window, stride);
        if n == 0 {
            return cfg(format!("window {window} / stride {stride} does not fit sequence of {seq_len}"));
        }

        let heads = self.attention.heads;
        if self.attention.enabled && (heads == 0 || channels % heads != 0) {
            return cfg(format!("{channels} feature channels are not divisible by {heads} heads"));
        }

        let graph = self.graph.definition();
        if graph.electrode_count() != self.fusion_channels || electrodes.len() != self.fusion_channels {
            return Err(Error::Validation(format!(
                "graph {:?} has {} electrodes, fusion produces {} channels, recording has {} electrodes",
                graph.name,
                graph.electrode_count(),
                self.fusion_channels,
                electrodes.len()
            )));
        }
        let permutation = graph.permutation(electrodes)?;

        let fused_len = n * window;
        let mut gnn_widths = vec![fused_len];
        if self.gnn.layers > 0 && self.gnn.hidden == 0 {
            return cfg("graph hidden width must be positive".into());
        }
        gnn_widths.extend(std::iter::repeat(self.gnn.hidden).take(self.gnn.layers));

        Ok(ModelDims {
            input_channels,
            input_len,
            kernel_lengths,
            channels,
            seq_len,
            window,
            stride,
            window_count: n,
            heads,
            fused_len,
            fusion_channels: self.fusion_channels,
            permutation,
            group_sizes: graph.group_sizes(),
            gnn_widths,
            classes: self.classes,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::graph::MONTAGE_32;

    fn montage() -> Vec<String> {
        MONTAGE_32.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn default_kernels_and_lengths() {
        let c = ModelConfig::default();
        assert_eq!(c.temporal.kernel_lengths(200.0).unwrap(), vec![100, 50, 25]);
        let d = c.resolve(32, 1600, &montage()).unwrap();
        assert_eq!(d.seq_len, 400);
        assert_eq!((d.window, d.stride, d.window_count), (100, 50, 7));
        assert_eq!(d.channels, 24);
        assert_eq!(d.group_sizes.len(), 11);
        assert_eq!(d.gnn_widths, vec![700, 32, 32, 32]);
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_count(800, 100, 50), 15);
        assert_eq!(window_count(100, 100, 50), 1);
        assert_eq!(window_count(107, 100, 50), 1);
        assert_eq!(window_count(99, 100, 50), 0);
    }

    #[test]
    fn ablation_shapes_resolve() {
        let mut c = ModelConfig::default();
        c.temporal.scale_coefficients.clear();
        c.gnn.layers = 0;
        let d = c.resolve(32, 800, &montage()).unwrap();
        assert_eq!((d.channels, d.seq_len, d.window_count), (32, 800, 15));
        assert_eq!(d.gnn_widths, vec![1500]);
        c.window.enabled = false;
        let d = c.resolve(32, 800, &montage()).unwrap();
        assert_eq!((d.window, d.window_count), (800, 1));
        assert_eq!(TemporalLearnerConfig::halving_scales(4), vec![0.5, 0.25, 0.125, 0.0625]);
    }

    #[test]
    fn chain_errors() {
        let mut c = ModelConfig::default();
        assert!(matches!(c.resolve(32, 80, &montage()), Err(Error::Config(_))));
        c.attention.heads = 5;
        assert!(matches!(c.resolve(32, 1600, &montage()), Err(Error::Config(_))));
        let c = ModelConfig::default();
        assert!(matches!(c.resolve(30, 1600, &montage()[..30]), Err(Error::Validation(_))));
        let mut wrong = montage();
        wrong[3] = "X9".into();
        assert!(matches!(c.resolve(32, 1600, &wrong), Err(Error::Config(_))));
    }
}
