//! Feature-extractor blocks and the classifier head, as free functions over
//! explicit parameter structs.

use atdgnn_tensor::{avg_pool1d, batch_norm, conv1d, dropout, layer_norm, softmax, RunningStats, Tensor};
use rand_chacha::ChaCha8Rng;

use super::config::window_count;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;
pub const LN_EPSILON: f64 = 1e-5;

/// Forward-pass mode. Training updates batch-norm statistics and draws
/// dropout masks from the supplied generator.
pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

impl Mode<'_> {
    pub fn training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub stats: RunningStats,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            gamma: Tensor::parameter(vec![1.0; channels], &[channels]).expect("1-D"),
            beta: Tensor::parameter(vec![0.0; channels], &[channels]).expect("1-D"),
            stats: RunningStats::new(channels),
        }
    }

    pub fn forward(&mut self, x: &Tensor, training: bool) -> Result<Tensor> {
        Ok(batch_norm(x, &self.gamma, &self.beta, &mut self.stats, training, BN_MOMENTUM, BN_EPSILON)?)
    }
}

/// Pads the last axis so a stride-1 convolution with a `k`-tap kernel keeps
/// the length; the extra sample for even `k` goes on the right.
pub fn same_pad(x: &Tensor, k: usize) -> Result<Tensor> {
    let left = (k - 1) / 2;
    Ok(x.pad_last(left, k - 1 - left)?)
}

#[derive(Debug, Clone)]
pub struct TemporalLearner {
    /// One `[out, E, K_i]` kernel per scale.
    pub kernels: Vec<Tensor>,
    /// One `[1, out, 1]` bias per scale.
    pub biases: Vec<Tensor>,
    pub pool_kernel: usize,
    pub pool_stride: usize,
    pub norm: BatchNorm,
}

/// Unnormalised output of one scale: `log(avgpool((conv(x) + b)²))`.
pub fn temporal_scale(x: &Tensor, kernel: &Tensor, bias: &Tensor, pool_kernel: usize, pool_stride: usize) -> Result<Tensor> {
    let k = kernel.shape()[2];
    let conv = conv1d(&same_pad(x, k)?, kernel, 1, 0)?.add(bias)?;
    Ok(avg_pool1d(&conv.square(), pool_kernel, pool_stride)?.log_activation())
}

/// [B,E,T] -> [B, scales·out, T'] with every scale sharing `T'`.
pub fn temporal_learner(x: &Tensor, p: &mut TemporalLearner, training: bool) -> Result<Tensor> {
    let t = x.shape()[x.ndim() - 1];
    let kmax = p.kernels.iter().map(|k| k.shape()[2]).max().unwrap_or(0);
    if t < kmax {
        return Err(Error::contract(
            "temporal_learner",
            format!("sequence of {t} samples is shorter than the {kmax}-tap kernel"),
        ));
    }
    let scales = p
        .kernels
        .iter()
        .zip(&p.biases)
        .map(|(k, b)| temporal_scale(x, k, b, p.pool_kernel, p.pool_stride))
        .collect::<Result<Vec<_>>>()?;
    let joined = Tensor::concat(&scales, 1)?;
    p.norm.forward(&joined, training)
}

/// Windows `[w·S, w·S + W)` of the last axis.
pub fn segment_windows(x: &Tensor, window: usize, stride: usize) -> Result<Vec<Tensor>> {
    let l = x.shape()[x.ndim() - 1];
    if window > l || window == 0 || stride == 0 {
        return Err(Error::contract(
            "segment_windows",
            format!("window {window} with stride {stride} does not fit length {l}"),
        ));
    }
    let n = window_count(l, window, stride);
    (0..n)
        .map(|w| Ok(x.narrow(x.ndim() - 1, w * stride, window)?))
        .collect()
}

#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub heads: usize,
    /// `[d, H·d_H]` query, key and value maps.
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    /// `[H·d_H, d]`.
    pub wo: Tensor,
    pub ln_in_gain: Tensor,
    pub ln_in_bias: Tensor,
    pub ln_out_gain: Tensor,
    pub ln_out_bias: Tensor,
}

pub struct MhaOutput {
    pub output: Tensor,
    /// `[B, H, W, W]`, rows indexed by query token.
    pub attention: Tensor,
}

/// Self-attention over time steps of `x_w` ([B,C,W]) with channels as features.
pub fn mha_block(x_w: &Tensor, p: &AttentionParams) -> Result<MhaOutput> {
    let s = x_w.shape().to_vec();
    if s.len() != 3 {
        return Err(Error::contract("mha_block", format!("expected [B,C,W], got {s:?}")));
    }
    let (b, d, w) = (s[0], s[1], s[2]);
    let h = p.heads;
    if h == 0 || d % h != 0 {
        return Err(Error::Config(format!("model dim {d} is not divisible by {h} heads")));
    }
    let dh = d / h;
    if p.wq.shape() != [d, h * dh] {
        return Err(Error::Config(format!("projection shape {:?} does not match d = {d}", p.wq.shape())));
    }
    let tokens = x_w.transpose(1, 2)?;
    let normed = layer_norm(&tokens, 2, &p.ln_in_gain, &p.ln_in_bias, LN_EPSILON)?;
    let split = |m: &Tensor| -> Result<Tensor> {
        Ok(normed.matmul(m)?.reshape(&[b, w, h, dh])?.permute(&[0, 2, 1, 3])?)
    };
    let (q, k, v) = (split(&p.wq)?, split(&p.wk)?, split(&p.wv)?);
    let scores = q.scale(1.0 / (dh as f64).sqrt()).matmul(&k.transpose(2, 3)?)?;
    let attention = softmax(&scores, 3)?;
    let context = attention.matmul(&v)?.permute(&[0, 2, 1, 3])?.reshape(&[b, w, h * dh])?;
    let mixed = context.matmul(&p.wo)?.add(&tokens)?;
    let out = layer_norm(&mixed, 2, &p.ln_out_gain, &p.ln_out_bias, LN_EPSILON)?;
    Ok(MhaOutput { output: out.transpose(1, 2)?, attention })
}

#[derive(Debug, Clone)]
pub struct TemporalConvBlock {
    /// `[C, C, 3]`.
    pub kernel: Tensor,
    /// `[1, C, 1]`.
    pub bias: Tensor,
    pub norm: BatchNorm,
}

/// `relu(bn(conv(x) + b))` with length-preserving padding.
pub fn temporal_conv_block(x: &Tensor, p: &mut TemporalConvBlock, training: bool) -> Result<Tensor> {
    let k = p.kernel.shape()[2];
    let w = x.shape()[x.ndim() - 1];
    if w < k {
        return Err(Error::contract("temporal_conv_block", format!("window {w} shorter than kernel {k}")));
    }
    let conv = conv1d(&same_pad(x, k)?, &p.kernel, 1, 0)?.add(&p.bias)?;
    Ok(p.norm.forward(&conv, training)?.relu())
}

#[derive(Debug, Clone)]
pub struct FusionParams {
    /// `[F, C, 1]` kernel and `[1, F, 1]` bias, present when `C != F`.
    pub projection: Option<(Tensor, Tensor)>,
    /// `[F, F, 3]`.
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct FusionOutput {
    /// `[B, F, n·T_w]`.
    pub tensor: Tensor,
    pub window_count: usize,
    pub window_len: usize,
}

/// Lays the windows end to end per channel, maps channels to the fusion
/// width and applies the fusion convolution.
pub fn fuse_windows(windows: &[Tensor], p: &FusionParams) -> Result<FusionOutput> {
    let first = windows
        .first()
        .ok_or_else(|| Error::contract("fuse_windows", "no windows to fuse"))?;
    let s = first.shape().to_vec();
    if windows.iter().any(|w| w.shape() != s.as_slice()) || s.len() != 3 {
        return Err(Error::contract("fuse_windows", "windows must share one [B,C,T_w] shape"));
    }
    let (b, c, tw) = (s[0], s[1], s[2]);
    let n = windows.len();
    let flat = Tensor::stack(windows, 2)?.reshape(&[b, c, n * tw])?;
    let mapped = match &p.projection {
        Some((k, bias)) => conv1d(&flat, k, 1, 0)?.add(bias)?,
        None => flat,
    };
    let k = p.kernel.shape()[2];
    let tensor = conv1d(&same_pad(&mapped, k)?, &p.kernel, 1, 0)?.add(&p.bias)?;
    Ok(FusionOutput { tensor, window_count: n, window_len: tw })
}

#[derive(Debug, Clone)]
pub struct ClassifierHead {
    pub norm: BatchNorm,
    pub dropout: f64,
    /// `[R·F', K]`.
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Batch norm over graph nodes, flatten, dropout, linear map to logits.
pub fn classifier_logits(h: &Tensor, p: &mut ClassifierHead, mode: &mut Mode<'_>) -> Result<Tensor> {
    let normed = p.norm.forward(h, mode.training())?;
    let flat = normed.flatten_from(1)?;
    let dropped = match mode {
        Mode::Train(rng) => dropout(&flat, p.dropout, true, *rng)?,
        Mode::Eval => flat,
    };
    Ok(dropped.matmul(&p.weight)?.add(&p.bias)?)
}

/// Class probabilities.
pub fn classify(h: &Tensor, p: &mut ClassifierHead, mode: &mut Mode<'_>) -> Result<Tensor> {
    Ok(softmax(&classifier_logits(h, p, mode)?, 1)?)
}
