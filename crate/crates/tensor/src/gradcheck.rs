//! Central finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, TensorError};
use crate::ops::conv::{avg_pool1d, conv1d_with, ConvAlgo};
use crate::ops::norm::{batch_norm, cross_entropy, dropout, layer_norm, softmax, RunningStats};
use crate::tensor::{no_grad, Tensor};

/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub entries_checked: usize,
    pub max_relative_error: f64,
    /// (parameter index, element index) of the worst entry.
    pub worst: Option<(usize, usize)>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares backward-pass gradients of `loss_fn` with respect to `params`
/// against central differences with step `h`.
///
/// `loss_fn` must rebuild the computation from the current parameter values
/// on every call and be deterministic. At most `max_per_param` evenly spaced
/// entries of each parameter are probed (all of them when `None`).
pub fn check_gradients<F>(
    name: &str,
    params: &[Tensor],
    mut loss_fn: F,
    h: f64,
    max_per_param: Option<usize>,
) -> Result<GradCheckReport>
where
    F: FnMut() -> Result<Tensor>,
{
    params.iter().for_each(Tensor::zero_grad);
    let loss = loss_fn()?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().unwrap_or_else(|| vec![0.0; p.numel()]))
        .collect();
    params.iter().for_each(Tensor::zero_grad);

    let mut report = GradCheckReport {
        name: name.to_string(),
        entries_checked: 0,
        max_relative_error: 0.0,
        worst: None,
    };
    for (pi, p) in params.iter().enumerate() {
        let n = p.numel();
        let step = match max_per_param {
            Some(m) if m > 0 && m < n => n.div_ceil(m),
            _ => 1,
        };
        for j in (0..n).step_by(step) {
            let original = p.data()[j];
            p.data_mut()[j] = original + h;
            let plus = no_grad(&mut loss_fn)?.item();
            p.data_mut()[j] = original - h;
            let minus = no_grad(&mut loss_fn)?.item();
            p.data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[pi][j], numeric);
            report.entries_checked += 1;
            if err > report.max_relative_error || err.is_nan() {
                report.max_relative_error = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = Some((pi, j));
            }
        }
    }
    Ok(report)
}

/// Step used by every check in this crate.
pub const FD_STEP: f64 = 1e-5;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, param: bool) -> Tensor {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    if param {
        Tensor::parameter(data, shape).expect("shape and data agree")
    } else {
        Tensor::from_vec(data, shape).expect("shape and data agree")
    }
}

/// Projects an output onto a fixed random direction so every entry of the
/// result contributes to the scalar being differentiated.
fn project(out: &Tensor, weights: &Tensor) -> Result<Tensor> {
    Ok(out.mul(weights)?.sum())
}

type Case = (&'static str, Vec<Tensor>, Box<dyn FnMut() -> Result<Tensor>>);

/// One finite-difference check per primitive, on small random inputs.
pub fn primitive_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases: Vec<Case> = Vec::new();
    macro_rules! case {
        ($name:expr, [$($p:ident),+], $out_shape:expr, $body:expr) => {{
            let w = random_tensor(&mut rng, &$out_shape, -1.0, 1.0, false);
            let params = vec![$($p.clone()),+];
            $(let $p = $p.clone();)+
            cases.push(($name, params, Box::new(move || project(&$body?, &w))));
        }};
    }

    let a = random_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0, true);
    let b = random_tensor(&mut rng, &[3, 1], 0.5, 1.5, true);
    case!("add_broadcast", [a, b], [2, 3, 4], a.add(&b));
    case!("sub_broadcast", [a, b], [2, 3, 4], a.sub(&b));
    case!("mul_broadcast", [a, b], [2, 3, 4], a.mul(&b));
    case!("div_broadcast", [a, b], [2, 3, 4], a.div(&b));

    let m = random_tensor(&mut rng, &[2, 3, 4], -1.0, 1.0, true);
    let w = random_tensor(&mut rng, &[4, 5], -1.0, 1.0, true);
    let m2 = random_tensor(&mut rng, &[2, 4, 2], -1.0, 1.0, true);
    case!("matmul_shared", [m, w], [2, 3, 5], m.matmul(&w));
    case!("matmul_batched", [m, m2], [2, 3, 2], m.matmul(&m2));

    let x = random_tensor(&mut rng, &[2, 3, 20], -1.0, 1.0, true);
    let k_short = random_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0, true);
    let k_long = random_tensor(&mut rng, &[2, 3, 17], -1.0, 1.0, true);
    case!("conv1d_direct_strided", [x, k_short], [2, 2, 10], conv1d_with(&x, &k_short, 2, 1, ConvAlgo::Direct));
    case!("conv1d_fft", [x, k_long], [2, 2, 12], conv1d_with(&x, &k_long, 1, 4, ConvAlgo::Fft));
    case!("avg_pool1d", [x], [2, 3, 5], avg_pool1d(&x, 4, 4));

    let pos = random_tensor(&mut rng, &[3, 4], 0.2, 2.0, true);
    let away = {
        let data: Vec<f64> = (0..12)
            .map(|i| {
                let v: f64 = rng.gen_range(0.1..1.0);
                if i % 2 == 0 { v } else { -v }
            })
            .collect();
        Tensor::parameter(data, &[3, 4]).expect("12 values")
    };
    case!("relu", [away], [3, 4], Ok::<_, TensorError>(away.relu()));
    case!("square", [away], [3, 4], Ok::<_, TensorError>(away.square()));
    case!("exp", [away], [3, 4], Ok::<_, TensorError>(away.exp()));
    case!("log_activation", [pos], [3, 4], Ok::<_, TensorError>(pos.log_activation()));
    case!("powf", [pos], [3, 4], Ok::<_, TensorError>(pos.powf(-0.5)));
    case!("scale_shift", [away], [3, 4], Ok::<_, TensorError>(away.scale(-1.7).add_scalar(0.3)));
    case!("sum_axis", [a], [2, 1, 4], a.sum_axis(1, true));
    case!("mean_axis", [a], [2, 4], a.mean_axis(1, false));

    case!("softmax", [a], [2, 3, 4], softmax(&a, 1));
    let gain = random_tensor(&mut rng, &[3], 0.5, 1.5, true);
    let bias = random_tensor(&mut rng, &[3], -0.5, 0.5, true);
    case!("layer_norm", [a, gain, bias], [2, 3, 4], layer_norm(&a, 1, &gain, &bias, 1e-5));

    let bn_x = random_tensor(&mut rng, &[4, 3, 5], -2.0, 2.0, true);
    case!("batch_norm_train", [bn_x, gain, bias], [4, 3, 5], {
        let mut stats = RunningStats::new(3);
        batch_norm(&bn_x, &gain, &bias, &mut stats, true, 0.1, 1e-5)
    });
    let frozen = RunningStats {
        mean: vec![0.3, -0.2, 0.1],
        var: vec![1.5, 0.7, 2.0],
    };
    case!("batch_norm_eval", [bn_x, gain, bias], [4, 3, 5], {
        let mut stats = frozen.clone();
        batch_norm(&bn_x, &gain, &bias, &mut stats, false, 0.1, 1e-5)
    });
    case!("dropout_train", [a], [2, 3, 4], {
        let mut mask_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        dropout(&a, 0.5, true, &mut mask_rng)
    });

    case!("permute", [a], [4, 2, 3], a.permute(&[2, 0, 1]));
    case!("narrow", [a], [2, 3, 2], a.narrow(2, 1, 2));
    case!("index_select", [a], [2, 4, 4], a.index_select(1, &[2, 0, 1, 0]));
    case!("concat", [a, m], [2, 3, 8], Tensor::concat(&[a.clone(), m.clone()], 2));
    case!("pad_last", [a], [2, 3, 7], a.pad_last(1, 2));
    case!("reshape_flatten", [a], [2, 12], a.flatten_from(1));

    let logits = random_tensor(&mut rng, &[4, 3], -2.0, 2.0, true);
    cases.push((
        "cross_entropy",
        vec![logits.clone()],
        Box::new(move || cross_entropy(&logits, &[0, 2, 1, 2])),
    ));

    cases
        .into_iter()
        .map(|(name, params, mut f)| check_gradients(name, &params, &mut f, FD_STEP, None))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_primitive_matches_finite_differences() {
        let reports = primitive_suite(42).unwrap();
        assert_eq!(reports.len(), 29);
        for r in &reports {
            assert!(r.passed(1e-4), "{r:?}");
        }
    }

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let x = Tensor::parameter(vec![0.3, -1.2, 2.0], &[3]).unwrap();
        let ok = check_gradients("cube", &[x.clone()], || Ok(x.square().mul(&x)?.sum()), 1e-5, None).unwrap();
        assert!(ok.passed(1e-6), "{ok:?}");
        assert_eq!(ok.entries_checked, 3);

        // A loss whose tape omits a dependency on x must be caught.
        let y = Tensor::parameter(vec![0.5, 0.5, 0.5], &[3]).unwrap();
        let bad = check_gradients(
            "hidden",
            &[x.clone(), y.clone()],
            || {
                let hidden: f64 = x.data().iter().sum();
                Ok(y.scale(hidden).sum())
            },
            1e-5,
            None,
        )
        .unwrap();
        assert!(!bad.passed(1e-4));
        assert_eq!(bad.worst.unwrap().0, 0);
    }
}
