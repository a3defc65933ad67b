use atdgnn_tensor::{adam_step, conv1d_with, cross_entropy, layer_norm, softmax, AdamState, ConvAlgo, Tensor};
use proptest::prelude::*;

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, n)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #[test]
    fn conv1d_is_linear_in_input(
        x in values(2 * 24),
        y in values(2 * 24),
        k in values(3 * 2 * 5),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        fft in any::<bool>(),
    ) {
        let algo = if fft { ConvAlgo::Fft } else { ConvAlgo::Direct };
        let kt = Tensor::from_vec(k, &[3, 2, 5]).unwrap();
        let xt = Tensor::from_vec(x.clone(), &[1, 2, 24]).unwrap();
        let yt = Tensor::from_vec(y.clone(), &[1, 2, 24]).unwrap();
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let mt = Tensor::from_vec(mix, &[1, 2, 24]).unwrap();
        let lhs = conv1d_with(&mt, &kt, 1, 2, algo).unwrap().to_vec();
        let cx = conv1d_with(&xt, &kt, 1, 2, algo).unwrap().to_vec();
        let cy = conv1d_with(&yt, &kt, 1, 2, algo).unwrap().to_vec();
        let rhs: Vec<f64> = cx.iter().zip(&cy).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(close(&lhs, &rhs, 1e-9));
    }

    #[test]
    fn fft_and_direct_routes_agree(x in values(2 * 40), k in values(2 * 2 * 17), pad in 0usize..9) {
        let xt = Tensor::from_vec(x, &[1, 2, 40]).unwrap();
        let kt = Tensor::from_vec(k, &[2, 2, 17]).unwrap();
        let d = conv1d_with(&xt, &kt, 1, pad, ConvAlgo::Direct).unwrap().to_vec();
        let f = conv1d_with(&xt, &kt, 1, pad, ConvAlgo::Fft).unwrap().to_vec();
        prop_assert!(close(&d, &f, 1e-9));
    }

    #[test]
    fn softmax_rows_lie_on_simplex(x in prop::collection::vec(-50.0f64..50.0, 3 * 7)) {
        let s = softmax(&Tensor::from_vec(x, &[3, 7]).unwrap(), 1).unwrap().to_vec();
        for row in s.chunks(7) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_ignores_positive_affine_input_maps(
        x in values(2 * 6),
        a in 0.1f64..10.0,
        b in -10.0f64..10.0,
    ) {
        prop_assume!(x.chunks(6).all(|r| {
            let m = r.iter().sum::<f64>() / 6.0;
            r.iter().map(|v| (v - m).powi(2)).sum::<f64>() > 1e-3
        }));
        let gain = Tensor::full(&[6], 1.0);
        let bias = Tensor::zeros(&[6]);
        let base = layer_norm(&Tensor::from_vec(x.clone(), &[2, 6]).unwrap(), 1, &gain, &bias, 0.0).unwrap();
        let moved: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let other = layer_norm(&Tensor::from_vec(moved, &[2, 6]).unwrap(), 1, &gain, &bias, 0.0).unwrap();
        prop_assert!(close(&base.to_vec(), &other.to_vec(), 1e-9));
    }

    #[test]
    fn adam_with_zero_gradient_is_a_no_op(w in values(5), lr in 1e-4f64..1.0, steps in 1usize..40) {
        let p = Tensor::parameter(w.clone(), &[5]).unwrap();
        let mut state = AdamState::new(&[p.clone()], lr);
        let zero = [0.0; 5];
        for _ in 0..steps {
            adam_step(&[p.clone()], &[&zero], &mut state).unwrap();
        }
        prop_assert!(p.to_vec().iter().zip(&w).all(|(a, b)| (a - b).abs() <= 1e-12));
    }

    #[test]
    fn uniform_logits_cost_log_k(k in 2usize..12, b in 1usize..6, c in -20.0f64..20.0, seed in any::<u64>()) {
        let logits = Tensor::full(&[b, k], c);
        let labels: Vec<usize> = (0..b).map(|i| ((seed >> (i * 4)) as usize + i) % k).collect();
        let loss = cross_entropy(&logits, &labels).unwrap().item();
        prop_assert!((loss - (k as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn primitive_gradients_within_tolerance() {
    for seed in [1, 7, 2024] {
        for r in atdgnn_tensor::primitive_suite(seed).unwrap() {
            assert!(r.passed(1e-4), "seed {seed}: {r:?}");
        }
    }
}
