//! 1-D convolution (cross-correlation, as in DL frameworks) and average pooling.
//!
//! Long kernels at stride 1 go through a real FFT; everything else uses the
//! direct sum. Both routes share one backward contract.

use std::cell::RefCell;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Result, TensorError};
use crate::ops::linalg::gemm_strided;
use crate::tensor::Tensor;

/// Kernel length from which [`ConvAlgo::Auto`] switches to the FFT route.
pub const FFT_MIN_KERNEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvAlgo {
    Auto,
    Direct,
    Fft,
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    lp: usize,
    l_out: usize,
    stride: usize,
}

thread_local! {
    static PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

fn plans(n: usize) -> (Arc<dyn RealToComplex<f64>>, Arc<dyn ComplexToReal<f64>>) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(n), p.plan_fft_inverse(n))
    })
}

fn pad_rows(x: &[f64], rows: usize, l: usize, padding: usize) -> Vec<f64> {
    if padding == 0 {
        return x.to_vec();
    }
    let lp = l + 2 * padding;
    let mut out = vec![0.0; rows * lp];
    for r in 0..rows {
        out[r * lp + padding..r * lp + padding + l].copy_from_slice(&x[r * l..(r + 1) * l]);
    }
    out
}

fn direct_forward(xp: &[f64], w: &[f64], d: Dims) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.c_out * d.l_out];
    let ck = d.c_in * d.k;
    for b in 0..d.batch {
        let row = &mut out[b * d.c_out * d.l_out..(b + 1) * d.c_out * d.l_out];
        let xb = &xp[b * d.c_in * d.lp..(b + 1) * d.c_in * d.lp];
        // one [C_out, C_in] x [C_in, L_out] product per tap
        for kk in 0..d.k {
            gemm_strided(
                d.c_out,
                d.c_in,
                d.l_out,
                &w[kk..],
                [ck, d.k],
                &xb[kk..],
                [d.lp, d.stride],
                row,
                [d.l_out, 1],
            );
        }
    }
    out
}

/// Returns (grad wrt padded input, grad wrt kernel).
fn direct_backward(
    g: &[f64],
    xp: &[f64],
    w: &[f64],
    d: Dims,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut gx = need_x.then(|| vec![0.0; d.batch * d.c_in * d.lp]);
    let mut gw = need_w.then(|| vec![0.0; w.len()]);
    let ck = d.c_in * d.k;
    for b in 0..d.batch {
        let gb = &g[b * d.c_out * d.l_out..(b + 1) * d.c_out * d.l_out];
        let xo = b * d.c_in * d.lp;
        for kk in 0..d.k {
            if let Some(gw) = gw.as_mut() {
                // [C_out, L_out] x [L_out, C_in] into the taps at `kk`
                gemm_strided(
                    d.c_out,
                    d.l_out,
                    d.c_in,
                    gb,
                    [d.l_out, 1],
                    &xp[xo + kk..xo + d.c_in * d.lp],
                    [d.stride, d.lp],
                    &mut gw[kk..],
                    [ck, d.k],
                );
            }
            if let Some(gx) = gx.as_mut() {
                // [C_in, C_out] x [C_out, L_out] scattered along the stride
                gemm_strided(
                    d.c_in,
                    d.c_out,
                    d.l_out,
                    &w[kk..],
                    [d.k, ck],
                    gb,
                    [d.l_out, 1],
                    &mut gx[xo + kk..xo + d.c_in * d.lp],
                    [d.lp, d.stride],
                );
            }
        }
    }
    (gx, gw)
}

struct Spectral {
    n: usize,
    bins: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
}

impl Spectral {
    fn new(lp: usize) -> Self {
        let n = lp.next_power_of_two().max(2);
        let (r2c, c2r) = plans(n);
        Spectral {
            n,
            bins: n / 2 + 1,
            r2c,
            c2r,
        }
    }

    /// Spectra of each `len`-long row in `rows`, zero-padded to `n`.
    fn forward_rows(&self, rows: &[f64], len: usize) -> Vec<Complex<f64>> {
        let count = rows.len() / len;
        let mut out = vec![Complex::default(); count * self.bins];
        let mut buf = vec![0.0; self.n];
        for r in 0..count {
            buf.iter_mut().for_each(|v| *v = 0.0);
            buf[..len].copy_from_slice(&rows[r * len..(r + 1) * len]);
            self.r2c
                .process(&mut buf, &mut out[r * self.bins..(r + 1) * self.bins])
                .expect("fft buffer sizes are fixed by the plan");
        }
        out
    }

    /// Inverse transform; returns the first `keep` samples, normalised.
    fn inverse(&self, spec: &mut [Complex<f64>], keep: usize, out: &mut [f64]) {
        spec[0].im = 0.0;
        spec[self.bins - 1].im = 0.0;
        let mut buf = vec![0.0; self.n];
        self.c2r
            .process(spec, &mut buf)
            .expect("fft buffer sizes are fixed by the plan");
        let scale = 1.0 / self.n as f64;
        out[..keep]
            .iter_mut()
            .zip(&buf[..keep])
            .for_each(|(o, &v)| *o += v * scale);
    }
}

fn fft_forward(xp: &[f64], w: &[f64], d: Dims) -> (Vec<f64>, Vec<Complex<f64>>) {
    let sp = Spectral::new(d.lp);
    let xs = sp.forward_rows(xp, d.lp);
    let ws = sp.forward_rows(w, d.k);
    let mut out = vec![0.0; d.batch * d.c_out * d.l_out];
    let mut acc = vec![Complex::default(); sp.bins];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            acc.iter_mut().for_each(|v| *v = Complex::default());
            for ci in 0..d.c_in {
                let xr = &xs[(b * d.c_in + ci) * sp.bins..(b * d.c_in + ci + 1) * sp.bins];
                let wr = &ws[(co * d.c_in + ci) * sp.bins..(co * d.c_in + ci + 1) * sp.bins];
                for ((a, x), w) in acc.iter_mut().zip(xr).zip(wr) {
                    *a += x * w.conj();
                }
            }
            let o = (b * d.c_out + co) * d.l_out;
            sp.inverse(&mut acc, d.l_out, &mut out[o..o + d.l_out]);
        }
    }
    (out, xs)
}

fn fft_backward(
    g: &[f64],
    xs: &[Complex<f64>],
    w: &[f64],
    d: Dims,
    need_x: bool,
    need_w: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let sp = Spectral::new(d.lp);
    let gs = sp.forward_rows(g, d.l_out);
    let mut acc = vec![Complex::default(); sp.bins];

    let gx = need_x.then(|| {
        let ws = sp.forward_rows(w, d.k);
        let mut gx = vec![0.0; d.batch * d.c_in * d.lp];
        for b in 0..d.batch {
            for ci in 0..d.c_in {
                acc.iter_mut().for_each(|v| *v = Complex::default());
                for co in 0..d.c_out {
                    let gr = &gs[(b * d.c_out + co) * sp.bins..(b * d.c_out + co + 1) * sp.bins];
                    let wr = &ws[(co * d.c_in + ci) * sp.bins..(co * d.c_in + ci + 1) * sp.bins];
                    for ((a, g), w) in acc.iter_mut().zip(gr).zip(wr) {
                        *a += g * w;
                    }
                }
                let o = (b * d.c_in + ci) * d.lp;
                sp.inverse(&mut acc, d.lp, &mut gx[o..o + d.lp]);
            }
        }
        gx
    });

    let gw = need_w.then(|| {
        let mut gw = vec![0.0; w.len()];
        for co in 0..d.c_out {
            for ci in 0..d.c_in {
                acc.iter_mut().for_each(|v| *v = Complex::default());
                for b in 0..d.batch {
                    let xr = &xs[(b * d.c_in + ci) * sp.bins..(b * d.c_in + ci + 1) * sp.bins];
                    let gr = &gs[(b * d.c_out + co) * sp.bins..(b * d.c_out + co + 1) * sp.bins];
                    for ((a, x), g) in acc.iter_mut().zip(xr).zip(gr) {
                        *a += x * g.conj();
                    }
                }
                let o = (co * d.c_in + ci) * d.k;
                sp.inverse(&mut acc, d.k, &mut gw[o..o + d.k]);
            }
        }
        gw
    });
    (gx, gw)
}

fn unpad_rows(gp: Vec<f64>, rows: usize, l: usize, padding: usize) -> Vec<f64> {
    if padding == 0 {
        return gp;
    }
    let lp = l + 2 * padding;
    let mut out = Vec::with_capacity(rows * l);
    for r in 0..rows {
        out.extend_from_slice(&gp[r * lp + padding..r * lp + padding + l]);
    }
    out
}

/// `input: [B, C_in, L]`, `kernel: [C_out, C_in, K]` → `[B, C_out, L_out]` with
/// `L_out = (L + 2·padding − K) / stride + 1`.
pub fn conv1d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    conv1d_with(input, kernel, stride, padding, ConvAlgo::Auto)
}

pub fn conv1d_with(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
    algo: ConvAlgo,
) -> Result<Tensor> {
    let (si, sk) = (input.shape().to_vec(), kernel.shape().to_vec());
    if si.len() != 3 || sk.len() != 3 {
        return Err(TensorError::dimension(
            "conv1d",
            format!("expected [B,C,L] input and [C_out,C_in,K] kernel, got {si:?} and {sk:?}"),
        ));
    }
    if si[1] != sk[1] {
        return Err(TensorError::dimension(
            "conv1d",
            format!("input has {} channels but kernel expects {}", si[1], sk[1]),
        ));
    }
    if stride == 0 {
        return Err(TensorError::contract("conv1d", "stride must be positive"));
    }
    let lp = si[2] + 2 * padding;
    if sk[2] > lp {
        return Err(TensorError::contract(
            "conv1d",
            format!("kernel length {} exceeds padded input length {lp}", sk[2]),
        ));
    }
    let d = Dims {
        batch: si[0],
        c_in: si[1],
        c_out: sk[0],
        k: sk[2],
        lp,
        l_out: (lp - sk[2]) / stride + 1,
        stride,
    };
    let use_fft = match algo {
        ConvAlgo::Direct => false,
        ConvAlgo::Fft => stride == 1,
        ConvAlgo::Auto => stride == 1 && d.k >= FFT_MIN_KERNEL,
    };
    let xp = pad_rows(&input.data(), d.batch * d.c_in, si[2], padding);
    let l = si[2];
    let kc = kernel.clone();

    if use_fft {
        let (out, xs) = fft_forward(&xp, &kernel.data(), d);
        // Keep the input spectra for the kernel gradient.
        Ok(Tensor::from_op(
            out,
            vec![d.batch, d.c_out, d.l_out],
            "conv1d",
            vec![input.clone(), kernel.clone()],
            Box::new(move |g, _, needs| {
                let (gx, gw) = fft_backward(g, &xs, &kc.data(), d, needs[0], needs[1]);
                vec![gx.map(|gp| unpad_rows(gp, d.batch * d.c_in, l, padding)), gw]
            }),
        ))
    } else {
        let out = direct_forward(&xp, &kernel.data(), d);
        let ic = input.clone();
        Ok(Tensor::from_op(
            out,
            vec![d.batch, d.c_out, d.l_out],
            "conv1d",
            vec![input.clone(), kernel.clone()],
            Box::new(move |g, _, needs| {
                let xp = pad_rows(&ic.data(), d.batch * d.c_in, l, padding);
                let (gx, gw) = direct_backward(g, &xp, &kc.data(), d, needs[0], needs[1]);
                vec![gx.map(|gp| unpad_rows(gp, d.batch * d.c_in, l, padding)), gw]
            }),
        ))
    }
}

/// Average pooling over the last axis of `[B, C, L]`.
pub fn avg_pool1d(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let s = input.shape().to_vec();
    if s.len() != 3 {
        return Err(TensorError::dimension("avg_pool1d", format!("expected [B,C,L], got {s:?}")));
    }
    if kernel == 0 || stride == 0 || kernel > s[2] {
        return Err(TensorError::contract(
            "avg_pool1d",
            format!("kernel {kernel} / stride {stride} invalid for length {}", s[2]),
        ));
    }
    let rows = s[0] * s[1];
    let l = s[2];
    let l_out = (l - kernel) / stride + 1;
    let inv = 1.0 / kernel as f64;
    let mut out = vec![0.0; rows * l_out];
    {
        let x = input.data();
        for r in 0..rows {
            for t in 0..l_out {
                let start = r * l + t * stride;
                out[r * l_out + t] = x[start..start + kernel].iter().sum::<f64>() * inv;
            }
        }
    }
    Ok(Tensor::from_op(
        out,
        vec![s[0], s[1], l_out],
        "avg_pool1d",
        vec![input.clone()],
        Box::new(move |g, _, _| {
            let mut gx = vec![0.0; rows * l];
            for r in 0..rows {
                for t in 0..l_out {
                    let gv = g[r * l_out + t] * inv;
                    let start = r * l + t * stride;
                    gx[start..start + kernel].iter_mut().for_each(|v| *v += gv);
                }
            }
            vec![Some(gx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    /// Textbook definition, independent of both routes above.
    fn oracle(x: &[f64], w: &[f64], si: [usize; 3], sk: [usize; 3], stride: usize, pad: usize) -> Vec<f64> {
        let lp = si[2] + 2 * pad;
        let l_out = (lp - sk[2]) / stride + 1;
        let mut out = vec![0.0; si[0] * sk[0] * l_out];
        for b in 0..si[0] {
            for co in 0..sk[0] {
                for t in 0..l_out {
                    let mut s = 0.0;
                    for ci in 0..si[1] {
                        for k in 0..sk[2] {
                            let pos = (t * stride + k) as isize - pad as isize;
                            if pos >= 0 && (pos as usize) < si[2] {
                                s += w[(co * sk[1] + ci) * sk[2] + k] * x[(b * si[1] + ci) * si[2] + pos as usize];
                            }
                        }
                    }
                    out[(b * sk[0] + co) * l_out + t] = s;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel() {
        let y = conv1d(&t(&[1.0, 2.0, 3.0], &[1, 1, 3]), &t(&[1.0], &[1, 1, 1]), 1, 0).unwrap();
        assert_eq!(y.to_vec(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn strided_sum_kernel() {
        let y = conv1d(&t(&[1.0; 4], &[1, 1, 4]), &t(&[1.0, 1.0], &[1, 1, 2]), 2, 0).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 2.0]);
    }

    #[test]
    fn padded_three_tap() {
        let x = t(&[1.0, 0.0, 2.0, 0.0, 3.0], &[1, 1, 5]);
        let w = t(&[1.0, 2.0, 1.0], &[1, 1, 3]);
        for algo in [ConvAlgo::Direct, ConvAlgo::Fft] {
            let y = conv1d_with(&x, &w, 1, 1, algo).unwrap().to_vec();
            // direct sum over the zero-padded input [0,1,0,2,0,3,0]
            let expected = [2.0, 3.0, 4.0, 5.0, 6.0];
            for (a, b) in y.iter().zip(expected) {
                assert!((a - b).abs() < 1e-12, "{algo:?}: {y:?}");
            }
        }
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::zeros(&[1, 2, 5]);
        let w = Tensor::zeros(&[1, 3, 2]);
        assert!(matches!(conv1d(&x, &w, 1, 0), Err(TensorError::Dimension { .. })));
    }

    #[test]
    fn kernel_longer_than_input_is_rejected() {
        let x = Tensor::zeros(&[1, 1, 3]);
        let w = Tensor::zeros(&[1, 1, 5]);
        assert!(conv1d(&x, &w, 1, 0).is_err());
        assert!(conv1d(&x, &w, 1, 1).is_ok());
    }

    #[test]
    fn fft_and_direct_routes_agree_with_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &(b, ci, co, l, k, pad) in &[(2, 3, 4, 50, 20, 0), (1, 2, 2, 33, 7, 3), (3, 1, 2, 64, 32, 16)] {
            let x: Vec<f64> = (0..b * ci * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..co * ci * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let expected = oracle(&x, &w, [b, ci, l], [co, ci, k], 1, pad);
            let xt = t(&x, &[b, ci, l]);
            let wt = t(&w, &[co, ci, k]);
            for algo in [ConvAlgo::Direct, ConvAlgo::Fft] {
                let y = conv1d_with(&xt, &wt, 1, pad, algo).unwrap().to_vec();
                let err = y.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(err < 1e-11, "{algo:?} err {err}");
            }
        }
    }

    #[test]
    fn fft_and_direct_gradients_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (b, ci, co, l, k, pad) = (2, 3, 2, 40, 17, 4);
        let x: Vec<f64> = (0..b * ci * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..co * ci * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..b * co * (l + 2 * pad - k + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut grads = Vec::new();
        for algo in [ConvAlgo::Direct, ConvAlgo::Fft] {
            let xt = Tensor::parameter(x.clone(), &[b, ci, l]).unwrap();
            let wt = Tensor::parameter(w.clone(), &[co, ci, k]).unwrap();
            let y = conv1d_with(&xt, &wt, 1, pad, algo).unwrap();
            let u = Tensor::from_vec(up.clone(), y.shape()).unwrap();
            y.mul(&u).unwrap().sum().backward().unwrap();
            grads.push((xt.grad().unwrap(), wt.grad().unwrap()));
        }
        let max_diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(max_diff(&grads[0].0, &grads[1].0) < 1e-11);
        assert!(max_diff(&grads[0].1, &grads[1].1) < 1e-11);
    }

    #[test]
    fn avg_pool_windows() {
        let x = t(&[1.0, 3.0, 5.0, 7.0, 9.0], &[1, 1, 5]);
        let y = avg_pool1d(&x, 2, 2).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 6.0]);
    }
}
