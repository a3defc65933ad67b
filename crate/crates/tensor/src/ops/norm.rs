//! Softmax, layer/batch normalization, dropout and the classification loss.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

fn split(shape: &[usize], axis: usize, op: &'static str) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(TensorError::dimension(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

/// Max-shifted softmax along `axis`.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = split(x.shape(), axis, "softmax")?;
    let mut out = x.to_vec();
    if inner == 1 {
        for row in out.chunks_exact_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            let inv = 1.0 / z;
            row.iter_mut().for_each(|v| *v *= inv);
        }
    } else {
        for o in 0..outer {
            for i in 0..inner {
                let at = |k: usize| (o * n + k) * inner + i;
                let max = (0..n).map(|k| out[at(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for k in 0..n {
                    let e = (out[at(k)] - max).exp();
                    out[at(k)] = e;
                    z += e;
                }
                for k in 0..n {
                    out[at(k)] /= z;
                }
            }
        }
    }
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "softmax",
        vec![x.clone()],
        Box::new(move |g, y, _| {
            let mut gx = vec![0.0; g.len()];
            if inner == 1 {
                for ((gr, yr), xr) in g.chunks_exact(n).zip(y.chunks_exact(n)).zip(gx.chunks_exact_mut(n)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((x, &gv), &yv) in xr.iter_mut().zip(gr).zip(yr) {
                        *x = yv * (gv - dot);
                    }
                }
                return vec![Some(gx)];
            }
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    let dot: f64 = (0..n).map(|k| g[at(k)] * y[at(k)]).sum();
                    for k in 0..n {
                        gx[at(k)] = y[at(k)] * (g[at(k)] - dot);
                    }
                }
            }
            vec![Some(gx)]
        }),
    ))
}

/// Normalises along `axis` to zero mean / unit population variance, then
/// applies the per-position `gain` and `bias` (both of length `shape[axis]`).
pub fn layer_norm(x: &Tensor, axis: usize, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let (outer, n, inner) = split(x.shape(), axis, "layer_norm")?;
    if n == 0 {
        return Err(TensorError::dimension("layer_norm", "normalized axis has zero length"));
    }
    if gain.numel() != n || bias.numel() != n {
        return Err(TensorError::dimension(
            "layer_norm",
            format!("gain/bias of length {}/{} for axis of length {n}", gain.numel(), bias.numel()),
        ));
    }
    let xd = x.data();
    let (gd, bd) = (gain.data(), bias.data());
    let mut xhat = vec![0.0; xd.len()];
    let mut inv_std = vec![0.0; outer * inner];
    let mut out = vec![0.0; xd.len()];
    let nf = n as f64;
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * n + k) * inner + i;
            let mean = (0..n).map(|k| xd[at(k)]).sum::<f64>() / nf;
            let var = (0..n).map(|k| (xd[at(k)] - mean).powi(2)).sum::<f64>() / nf;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[o * inner + i] = inv;
            for k in 0..n {
                let h = (xd[at(k)] - mean) * inv;
                xhat[at(k)] = h;
                out[at(k)] = gd[k] * h + bd[k];
            }
        }
    }
    drop((xd, gd, bd));
    let gc = gain.clone();
    Ok(Tensor::from_op(
        out,
        x.shape().to_vec(),
        "layer_norm",
        vec![x.clone(), gain.clone(), bias.clone()],
        Box::new(move |g, _, needs| {
            let gd = gc.data();
            let mut gx = needs[0].then(|| vec![0.0; g.len()]);
            let mut ggain = needs[1].then(|| vec![0.0; n]);
            let mut gbias = needs[2].then(|| vec![0.0; n]);
            for o in 0..outer {
                for i in 0..inner {
                    let at = |k: usize| (o * n + k) * inner + i;
                    if let Some(gx) = gx.as_mut() {
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for k in 0..n {
                            let dh = g[at(k)] * gd[k];
                            m1 += dh;
                            m2 += dh * xhat[at(k)];
                        }
                        m1 /= nf;
                        m2 /= nf;
                        let inv = inv_std[o * inner + i];
                        for k in 0..n {
                            let dh = g[at(k)] * gd[k];
                            gx[at(k)] = inv * (dh - m1 - xhat[at(k)] * m2);
                        }
                    }
                    for k in 0..n {
                        if let Some(gg) = ggain.as_mut() {
                            gg[k] += g[at(k)] * xhat[at(k)];
                        }
                        if let Some(gb) = gbias.as_mut() {
                            gb[k] += g[at(k)];
                        }
                    }
                }
            }
            vec![gx, ggain, gbias]
        }),
    ))
}

/// Per-channel running statistics used by batch norm in evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

/// Batch normalization over axis 1 of `[B, C, ...]`.
///
/// In training mode the batch statistics normalise the input and are blended
/// into `stats` with the given momentum (unbiased variance, as PyTorch does).
/// In evaluation mode `stats` is used as-is.
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &mut RunningStats,
    training: bool,
    momentum: f64,
    eps: f64,
) -> Result<Tensor> {
    let s = x.shape().to_vec();
    if s.len() < 2 {
        return Err(TensorError::dimension("batch_norm", format!("expected [B,C,...], got {s:?}")));
    }
    let (b, c) = (s[0], s[1]);
    let inner: usize = s[2..].iter().product();
    if gamma.numel() != c || beta.numel() != c || stats.mean.len() != c || stats.var.len() != c {
        return Err(TensorError::dimension(
            "batch_norm",
            format!("parameters do not match {c} channels"),
        ));
    }
    let count = (b * inner) as f64;
    let xd = x.data();
    let at = move |bi: usize, ch: usize, i: usize| (bi * c + ch) * inner + i;

    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    if training {
        for ch in 0..c {
            let mut sum = 0.0;
            for bi in 0..b {
                sum += xd[at(bi, ch, 0)..at(bi, ch, 0) + inner].iter().sum::<f64>();
            }
            let m = sum / count;
            let mut sq = 0.0;
            for bi in 0..b {
                sq += xd[at(bi, ch, 0)..at(bi, ch, 0) + inner].iter().map(|v| (v - m).powi(2)).sum::<f64>();
            }
            mean[ch] = m;
            var[ch] = sq / count;
            let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var[ch] };
            stats.mean[ch] = (1.0 - momentum) * stats.mean[ch] + momentum * m;
            stats.var[ch] = (1.0 - momentum) * stats.var[ch] + momentum * unbiased;
        }
    } else {
        mean.copy_from_slice(&stats.mean);
        var.copy_from_slice(&stats.var);
    }
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let (gd, bd) = (gamma.data(), beta.data());
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    for bi in 0..b {
        for ch in 0..c {
            for i in 0..inner {
                let k = at(bi, ch, i);
                let h = (xd[k] - mean[ch]) * inv[ch];
                xhat[k] = h;
                out[k] = gd[ch] * h + bd[ch];
            }
        }
    }
    drop((xd, gd, bd));
    let gc = gamma.clone();
    Ok(Tensor::from_op(
        out,
        s,
        "batch_norm",
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _, needs| {
            let gd = gc.data();
            let mut sum_g = vec![0.0; c];
            let mut sum_gh = vec![0.0; c];
            for bi in 0..b {
                for ch in 0..c {
                    for i in 0..inner {
                        let k = at(bi, ch, i);
                        sum_g[ch] += g[k];
                        sum_gh[ch] += g[k] * xhat[k];
                    }
                }
            }
            let gx = needs[0].then(|| {
                let mut gx = vec![0.0; g.len()];
                for bi in 0..b {
                    for ch in 0..c {
                        let scale = gd[ch] * inv[ch];
                        for i in 0..inner {
                            let k = at(bi, ch, i);
                            gx[k] = if training {
                                scale * (g[k] - sum_g[ch] / count - xhat[k] * sum_gh[ch] / count)
                            } else {
                                scale * g[k]
                            };
                        }
                    }
                }
                gx
            });
            vec![gx, needs[1].then(|| sum_gh.clone()), needs[2].then(|| sum_g.clone())]
        }),
    ))
}

/// Inverted dropout: in training, zeroes each entry with probability `p` and
/// scales survivors by `1/(1−p)`; identity otherwise.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, p: f64, training: bool, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(TensorError::contract("dropout", format!("probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.numel())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    x.mul(&Tensor::from_vec(mask, x.shape())?)
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let s = logits.shape().to_vec();
    if s.len() != 2 {
        return Err(TensorError::dimension("cross_entropy", format!("expected [B,K], got {s:?}")));
    }
    let (b, k) = (s[0], s[1]);
    if labels.len() != b {
        return Err(TensorError::contract(
            "cross_entropy",
            format!("{} labels for batch of {b}", labels.len()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::contract(
            "cross_entropy",
            format!("label {bad} outside [0, {k})"),
        ));
    }
    let xd = logits.data();
    let mut probs = vec![0.0; b * k];
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = &xd[r * k..(r + 1) * k];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + z.ln();
        loss += log_z - row[label];
        for j in 0..k {
            probs[r * k + j] = (row[j] - log_z).exp();
        }
    }
    drop(xd);
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![loss / b as f64],
        vec![1],
        "cross_entropy",
        vec![logits.clone()],
        Box::new(move |g, _, _| {
            let scale = g[0] / b as f64;
            let mut gx = probs.clone();
            for (r, &label) in labels.iter().enumerate() {
                gx[r * k + label] -= 1.0;
            }
            gx.iter_mut().for_each(|v| *v *= scale);
            vec![Some(gx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn softmax_examples() {
        let y = softmax(&t(&[0.0, 0.0], &[2]), 0).unwrap().to_vec();
        assert!(close(&y, &[0.5, 0.5], 1e-15));
        let y = softmax(&t(&[1000.0; 3], &[3]), 0).unwrap().to_vec();
        assert!(close(&y, &[1.0 / 3.0; 3], 1e-15));
        let y = softmax(&t(&[1.0, 2.0, 3.0], &[3]), 0).unwrap().to_vec();
        assert!(close(&y, &[0.09003, 0.24473, 0.66524], 5e-6), "{y:?}");
    }

    #[test]
    fn softmax_along_inner_axis() {
        let y = softmax(&t(&[0.0, 5.0, 0.0, 5.0], &[2, 2]), 0).unwrap().to_vec();
        assert!(close(&y, &[0.5, 0.5, 0.5, 0.5], 1e-15));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = t(&[1.0; 3], &[3]);
        let zeros = t(&[0.0; 3], &[3]);
        let y = layer_norm(&t(&[5.0; 3], &[3]), 0, &ones, &zeros, 1e-5).unwrap().to_vec();
        assert!(close(&y, &[0.0; 3], 1e-12));
        let y = layer_norm(&t(&[1.0, 2.0, 3.0], &[3]), 0, &ones, &zeros, 0.0).unwrap().to_vec();
        assert!(close(&y, &[-1.22474, 0.0, 1.22474], 5e-6), "{y:?}");
    }

    #[test]
    fn layer_norm_rejects_empty_and_mismatched() {
        let x = t(&[1.0, 2.0], &[2]);
        let g3 = t(&[1.0; 3], &[3]);
        assert!(layer_norm(&x, 0, &g3, &g3, 1e-5).is_err());
        assert!(layer_norm(&x, 1, &g3, &g3, 1e-5).is_err());
    }

    #[test]
    fn batch_norm_train_normalises_and_updates_stats() {
        let x = t(&[1.0, 3.0, 10.0, 10.0, 5.0, 7.0, 30.0, 30.0], &[2, 2, 2]);
        let gamma = t(&[1.0, 1.0], &[2]);
        let beta = t(&[0.0, 0.0], &[2]);
        let mut stats = RunningStats::new(2);
        let y = batch_norm(&x, &gamma, &beta, &mut stats, true, 0.1, 0.0).unwrap().to_vec();
        // channel 0 values 1,3,5,7: mean 4, var 5
        let s5 = 5f64.sqrt();
        assert!(close(&y[..2], &[-3.0 / s5, -1.0 / s5], 1e-12));
        assert!((stats.mean[0] - 0.4).abs() < 1e-12);
        assert!((stats.var[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
        // eval uses running stats
        let y = batch_norm(&x, &gamma, &beta, &mut stats.clone(), false, 0.1, 0.0).unwrap().to_vec();
        assert!((y[0] - (1.0 - stats.mean[0]) / stats.var[0].sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dropout_modes() {
        let x = t(&[1.0; 1000], &[1000]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let eval = dropout(&x, 0.5, false, &mut rng).unwrap();
        assert_eq!(eval.to_vec(), x.to_vec());
        let y = dropout(&x, 0.5, true, &mut rng).unwrap().to_vec();
        assert!(y.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = y.iter().filter(|&&v| v == 2.0).count();
        assert!((400..600).contains(&kept));
        assert!(dropout(&x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let l = cross_entropy(&t(&[0.0, 0.0], &[1, 2]), &[0]).unwrap().item();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let l = cross_entropy(&t(&[100.0, 0.0], &[1, 2]), &[0]).unwrap().item();
        assert!(l.abs() < 1e-12);
        let l = cross_entropy(&t(&[1.0, 2.0, 3.0], &[1, 3]), &[2]).unwrap().item();
        assert!((l - 0.40761).abs() < 5e-6, "{l}");
        for k in [2usize, 3, 5] {
            let l = cross_entropy(&t(&vec![0.7; 2 * k], &[2, k]), &[0, k - 1]).unwrap().item();
            assert!((l - (k as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let x = t(&[0.0, 0.0], &[1, 2]);
        assert!(matches!(cross_entropy(&x, &[2]), Err(TensorError::Contract { .. })));
        assert!(matches!(cross_entropy(&x, &[0, 1]), Err(TensorError::Contract { .. })));
    }
}
