use std::f64::consts::PI;

use atdgnn_core::signal::{band_decompose, bandpass, downsample, BandDefinition, EegRecording, TrialLabels};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single(fs: f64, x: Vec<f64>) -> EegRecording {
    let t = x.len();
    EegRecording {
        subject_id: "t".into(),
        channel_names: vec!["Cz".into()],
        sample_rate_hz: fs,
        samples: vec![x],
        trial_boundaries: vec![(0, t)],
        labels: vec![TrialLabels { arousal: 0, valence: 0 }],
    }
}

fn variance(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Amplitude of the `hz` component by direct correlation with sine and cosine.
fn tone_amplitude(x: &[f64], hz: f64, fs: f64) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let ph = 2.0 * PI * hz * i as f64 / fs;
        s += v * ph.sin();
        c += v * ph.cos();
    }
    2.0 * (s * s + c * c).sqrt() / x.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bandpass_is_linear(
        x in prop::collection::vec(-100.0f64..100.0, 300),
        y in prop::collection::vec(-100.0f64..100.0, 300),
        a in -4.0f64..4.0,
        b in -4.0f64..4.0,
    ) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let f = |v: Vec<f64>| bandpass(&single(200.0, v), 1.0, 50.0).unwrap().samples.remove(0);
        let lhs = f(mix);
        let fx = f(x);
        let fy = f(y);
        for i in 0..lhs.len() {
            let rhs = a * fx[i] + b * fy[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()), "{} vs {}", lhs[i], rhs);
        }
    }
}

#[test]
fn in_band_sine_has_zero_lag() {
    let fs = 200.0;
    for hz in [2.0, 10.0, 23.0, 40.0] {
        let x: Vec<f64> = (0..2000).map(|i| (2.0 * PI * hz * i as f64 / fs).sin()).collect();
        let y = bandpass(&single(fs, x.clone()), 1.0, 50.0).unwrap().samples.remove(0);
        let core = 400..1600;
        let xcorr = |lag: i64| -> f64 {
            core.clone().map(|i| x[i] * y[(i as i64 + lag) as usize]).sum()
        };
        let half_period = (fs / hz / 2.0).ceil() as i64 - 1;
        let best = (-half_period..=half_period)
            .max_by(|&a, &b| xcorr(a).total_cmp(&xcorr(b)))
            .unwrap();
        assert_eq!(best, 0, "{hz} Hz");
    }
}

#[test]
fn slicing_commutes_with_filtering_away_from_edges() {
    let fs = 200.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let whole = bandpass(&single(fs, x.clone()), 1.0, 50.0).unwrap().samples.remove(0);
    let (s, e) = (1000, 3000);
    let part = bandpass(&single(fs, x[s..e].to_vec()), 1.0, 50.0).unwrap().samples.remove(0);
    let scale = whole.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let worst_beyond = |margin: usize| {
        (margin..(e - s - margin))
            .map(|i| (part[i] - whole[s + i]).abs())
            .fold(0.0, f64::max)
    };
    let one_second = worst_beyond(fs as usize);
    let two_seconds = worst_beyond(2 * fs as usize);
    assert!(one_second < 0.05 * scale, "worst {one_second}, scale {scale}");
    assert!(two_seconds < 0.01 * scale, "worst {two_seconds}, scale {scale}");

    // the same holds through decimation once boundaries are rescaled
    let fs_hi = 1000.0;
    let hi: Vec<f64> = (0..20000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let whole = downsample(&single(fs_hi, hi.clone()), 200.0).unwrap();
    let part = downsample(&single(fs_hi, hi[5000..15000].to_vec()), 200.0).unwrap();
    let offset = 1000;
    let margin = 200;
    let worst = (margin..2000 - margin)
        .map(|i| (part.samples[0][i] - whole.samples[0][offset + i]).abs())
        .fold(0.0, f64::max);
    assert!(worst < 0.02, "{worst}");
}

#[test]
fn decimation_preserves_ten_hz_tone() {
    let x: Vec<f64> = (0..10000).map(|i| 3.0 * (2.0 * PI * 10.0 * i as f64 / 1000.0).sin()).collect();
    let before = tone_amplitude(&x[1000..9000], 10.0, 1000.0);
    let d = downsample(&single(1000.0, x), 200.0).unwrap();
    assert_eq!(d.sample_count(), 2000);
    let after = tone_amplitude(&d.samples[0][200..1800], 10.0, 200.0);
    assert!((after / before - 1.0).abs() < 0.05, "{before} -> {after}");
}

#[test]
fn band_variances_account_for_broadband_variance() {
    let fs = 200.0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..120_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let rec = single(fs, x);
    let broad = variance(&bandpass(&rec, 1.0, 50.0).unwrap().samples[0]);
    let parts: f64 = band_decompose(&rec, &BandDefinition::defaults())
        .unwrap()
        .iter()
        .map(|b| variance(&b.samples[0]))
        .sum();
    let ratio = parts / broad;
    assert!((ratio - 1.0).abs() < 0.15, "{ratio}");
}
