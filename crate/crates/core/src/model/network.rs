use atdgnn_tensor::{RunningStats, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, ModelDims};
use super::graph::{aggregate_groups, dgnn_forward, local_filter, reorder_channels, GraphLayer};
use super::layers::{
    classifier_logits, fuse_windows, mha_block, segment_windows, temporal_conv_block, temporal_learner, AttentionParams,
    BatchNorm, ClassifierHead, FusionParams, Mode, TemporalConvBlock, TemporalLearner,
};
use crate::error::{Error, Result};

/// Uniform `±1/√fan_in` parameter factory.
struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn uniform(&mut self, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::parameter(data, shape).expect("shape matches data")
    }

    fn constant(shape: &[usize], v: f64) -> Tensor {
        Tensor::parameter(vec![v; shape.iter().product()], shape).expect("shape matches data")
    }
}

/// The full classifier: temporal learner, windowed attention and temporal
/// convolution, fusion, graph stage and head.
#[derive(Debug, Clone)]
pub struct AtDgnn {
    pub config: ModelConfig,
    pub dims: ModelDims,
    pub temporal: Option<TemporalLearner>,
    pub attention: Option<AttentionParams>,
    pub tcn: TemporalConvBlock,
    pub fusion: FusionParams,
    pub local_weight: Tensor,
    pub local_bias: Tensor,
    pub gnn: Vec<GraphLayer>,
    pub head: ClassifierHead,
}

/// Snapshot of every learned value and running statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub parameters: Vec<Vec<f64>>,
    pub running_means: Vec<Vec<f64>>,
    pub running_vars: Vec<Vec<f64>>,
}

impl AtDgnn {
    pub fn new(config: &ModelConfig, dims: &ModelDims, seed: u64) -> Self {
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
        let e = dims.input_channels;
        let c = dims.channels;
        let f = dims.fusion_channels;

        let temporal = (!dims.kernel_lengths.is_empty()).then(|| {
            let out = config.temporal.out_channels_per_scale;
            let mut kernels = Vec::new();
            let mut biases = Vec::new();
            for &k in &dims.kernel_lengths {
                kernels.push(init.uniform(&[out, e, k], e * k));
                biases.push(init.uniform(&[1, out, 1], e * k));
            }
            TemporalLearner {
                kernels,
                biases,
                pool_kernel: config.temporal.pool_kernel,
                pool_stride: config.temporal.pool_stride,
                norm: BatchNorm::new(c),
            }
        });

        let attention = config.attention.enabled.then(|| AttentionParams {
            heads: dims.heads,
            wq: init.uniform(&[c, c], c),
            wk: init.uniform(&[c, c], c),
            wv: init.uniform(&[c, c], c),
            wo: init.uniform(&[c, c], c),
            ln_in_gain: Init::constant(&[c], 1.0),
            ln_in_bias: Init::constant(&[c], 0.0),
            ln_out_gain: Init::constant(&[c], 1.0),
            ln_out_bias: Init::constant(&[c], 0.0),
        });

        let tcn = TemporalConvBlock {
            kernel: init.uniform(&[c, c, 3], 3 * c),
            bias: init.uniform(&[1, c, 1], 3 * c),
            norm: BatchNorm::new(c),
        };

        let projection = (c != f).then(|| (init.uniform(&[f, c, 1], c), init.uniform(&[1, f, 1], c)));
        let fusion = FusionParams {
            projection,
            kernel: init.uniform(&[f, f, 3], 3 * f),
            bias: init.uniform(&[1, f, 1], 3 * f),
        };

        let l = dims.fused_len;
        let local_weight = init.uniform(&[f, l], 1);
        let local_bias = Init::constant(&[f, 1], 0.0);

        let gnn = dims
            .gnn_widths
            .windows(2)
            .map(|w| GraphLayer {
                weight: init.uniform(&[w[0], w[1]], w[0]),
                bias: init.uniform(&[w[1]], w[0]),
            })
            .collect();

        let r = dims.group_sizes.len();
        let width = *dims.gnn_widths.last().expect("at least the input width");
        let head = ClassifierHead {
            norm: BatchNorm::new(r),
            dropout: config.dropout,
            weight: init.uniform(&[r * width, dims.classes], r * width),
            bias: init.uniform(&[dims.classes], r * width),
        };

        AtDgnn {
            config: config.clone(),
            dims: dims.clone(),
            temporal,
            attention,
            tcn,
            fusion,
            local_weight,
            local_bias,
            gnn,
            head,
        }
    }

    /// Fused feature map `[B, F, n·T_w]` before the graph stage.
    pub fn extract_features(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        let d = &self.dims;
        if x.ndim() != 3 || x.shape()[1] != d.input_channels || x.shape()[2] != d.input_len {
            return Err(Error::Config(format!(
                "model expects [B,{},{}] input, got {:?}",
                d.input_channels,
                d.input_len,
                x.shape()
            )));
        }
        let b = x.shape()[0];
        let features = match self.temporal.as_mut() {
            Some(t) => temporal_learner(x, t, training)?,
            None => x.clone(),
        };
        let windows = segment_windows(&features, d.window, d.stride)?;
        let n = windows.len();
        // every window goes through the shared blocks as one batch
        let batched = Tensor::concat(&windows, 0)?;
        let attended = match &self.attention {
            Some(p) => mha_block(&batched, p)?.output,
            None => batched,
        };
        let convolved = temporal_conv_block(&attended, &mut self.tcn, training)?;
        let per_window = (0..n)
            .map(|w| Ok(convolved.narrow(0, w * b, b)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(fuse_windows(&per_window, &self.fusion)?.tensor)
    }

    /// Class logits `[B, K]`.
    pub fn forward(&mut self, x: &Tensor, mode: &mut Mode<'_>) -> Result<Tensor> {
        let fused = self.extract_features(x, mode.training())?;
        let reordered = reorder_channels(&fused, &self.dims.permutation)?;
        let filtered = local_filter(&reordered, &self.local_weight, &self.local_bias)?;
        let aggregated = aggregate_groups(&filtered, &self.dims.group_sizes)?;
        let h = dgnn_forward(&aggregated, &self.gnn, self.config.gnn.rectify_similarity)?;
        classifier_logits(&h, &mut self.head, mode)
    }

    /// Trainable tensors of the temporal feature extractor.
    pub fn feature_parameters(&self) -> Vec<Tensor> {
        let mut p = Vec::new();
        if let Some(t) = &self.temporal {
            p.extend(t.kernels.iter().cloned());
            p.extend(t.biases.iter().cloned());
            p.extend([t.norm.gamma.clone(), t.norm.beta.clone()]);
        }
        if let Some(a) = &self.attention {
            p.extend([&a.wq, &a.wk, &a.wv, &a.wo, &a.ln_in_gain, &a.ln_in_bias, &a.ln_out_gain, &a.ln_out_bias].map(Tensor::clone));
        }
        p.extend([&self.tcn.kernel, &self.tcn.bias, &self.tcn.norm.gamma, &self.tcn.norm.beta].map(Tensor::clone));
        if let Some((k, b)) = &self.fusion.projection {
            p.extend([k.clone(), b.clone()]);
        }
        p.extend([self.fusion.kernel.clone(), self.fusion.bias.clone()]);
        p
    }

    /// Local filter and graph layer tensors.
    pub fn graph_parameters(&self) -> Vec<Tensor> {
        let mut p = vec![self.local_weight.clone(), self.local_bias.clone()];
        for layer in &self.gnn {
            p.extend([layer.weight.clone(), layer.bias.clone()]);
        }
        p
    }

    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = self.feature_parameters();
        p.extend(self.graph_parameters());
        p.extend([&self.head.norm.gamma, &self.head.norm.beta, &self.head.weight, &self.head.bias].map(Tensor::clone));
        p
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(Tensor::numel).sum()
    }

    fn running_stats(&mut self) -> Vec<&mut RunningStats> {
        let mut s = Vec::new();
        if let Some(t) = self.temporal.as_mut() {
            s.push(&mut t.norm.stats);
        }
        s.push(&mut self.tcn.norm.stats);
        s.push(&mut self.head.norm.stats);
        s
    }

    pub fn state(&mut self) -> ModelState {
        let parameters = self.parameters().iter().map(Tensor::to_vec).collect();
        let stats = self.running_stats();
        ModelState {
            parameters,
            running_means: stats.iter().map(|s| s.mean.clone()).collect(),
            running_vars: stats.iter().map(|s| s.var.clone()).collect(),
        }
    }

    pub fn load_state(&mut self, state: &ModelState) -> Result<()> {
        let params = self.parameters();
        let mismatch = params.len() != state.parameters.len()
            || params.iter().zip(&state.parameters).any(|(p, v)| p.numel() != v.len());
        let mut stats = self.running_stats();
        if mismatch
            || stats.len() != state.running_means.len()
            || stats.len() != state.running_vars.len()
            || stats.iter().zip(&state.running_means).any(|(s, m)| s.mean.len() != m.len())
        {
            return Err(Error::Validation("checkpoint does not match the model layout".into()));
        }
        for (s, (m, v)) in stats.iter_mut().zip(state.running_means.iter().zip(&state.running_vars)) {
            s.mean.clone_from(m);
            s.var.clone_from(v);
        }
        for (p, v) in params.iter().zip(&state.parameters) {
            p.data_mut().copy_from_slice(v);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradcheck::{tiny_config, tiny_electrodes, TINY_CHANNELS, TINY_SAMPLES};

    fn tiny(cfg: &ModelConfig, seed: u64) -> AtDgnn {
        let dims = cfg.resolve(TINY_CHANNELS, TINY_SAMPLES, &tiny_electrodes()).unwrap();
        AtDgnn::new(cfg, &dims, seed)
    }

    fn input(batch: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = batch * TINY_CHANNELS * TINY_SAMPLES;
        Tensor::from_vec((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), &[batch, TINY_CHANNELS, TINY_SAMPLES]).unwrap()
    }

    #[test]
    fn eval_logits_follow_batch_permutation() {
        let mut m = tiny(&tiny_config(), 1);
        let x = input(4, 2);
        let logits = m.forward(&x, &mut Mode::Eval).unwrap().to_vec();
        let perm = [2, 0, 3, 1];
        let shuffled = m.forward(&x.index_select(0, &perm).unwrap(), &mut Mode::Eval).unwrap().to_vec();
        for (i, &p) in perm.iter().enumerate() {
            for k in 0..2 {
                assert!((shuffled[i * 2 + k] - logits[p * 2 + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ablated_variants_shrink_and_run() {
        let base = tiny(&tiny_config(), 0);
        let mut cfg = tiny_config();
        cfg.attention.enabled = false;
        let mut no_attention = tiny(&cfg, 0);
        assert!(no_attention.attention.is_none());
        assert!(no_attention.parameter_count() < base.parameter_count());
        assert_eq!(no_attention.forward(&input(2, 3), &mut Mode::Eval).unwrap().shape(), &[2, 2]);

        let mut cfg = tiny_config();
        cfg.temporal.scale_coefficients.clear();
        cfg.attention.heads = 4;
        let mut no_temporal = tiny(&cfg, 0);
        assert!(no_temporal.temporal.is_none());
        assert_eq!(no_temporal.forward(&input(2, 3), &mut Mode::Eval).unwrap().shape(), &[2, 2]);
    }

    #[test]
    fn state_round_trip_reproduces_logits() {
        let mut a = tiny(&tiny_config(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        a.forward(&input(3, 1), &mut Mode::Train(&mut rng)).unwrap();
        let state = a.state();
        let mut b = tiny(&tiny_config(), 6);
        let x = input(2, 8);
        assert_ne!(a.forward(&x, &mut Mode::Eval).unwrap().to_vec(), b.forward(&x, &mut Mode::Eval).unwrap().to_vec());
        b.load_state(&state).unwrap();
        assert_eq!(a.forward(&x, &mut Mode::Eval).unwrap().to_vec(), b.forward(&x, &mut Mode::Eval).unwrap().to_vec());
        let mut short = state.clone();
        short.parameters.pop();
        assert!(matches!(b.load_state(&short), Err(Error::Validation(_))));
    }
}
