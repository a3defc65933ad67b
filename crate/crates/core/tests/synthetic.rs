use std::collections::BTreeMap;
use std::f64::consts::PI;

use atdgnn_core::io::container::encode_container;
use atdgnn_core::io::{generate_synthetic, SynthSpec};
use atdgnn_core::signal::EegRecording;
use realfft::RealFftPlanner;

/// Welch power spectral density: Hann-windowed segments of `n` samples at
/// 50% overlap, averaged. Returns (frequencies, one-sided PSD).
fn welch(x: &[f64], fs: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(n);
    let window: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let norm = fs * window.iter().map(|w| w * w).sum::<f64>();
    let mut psd = vec![0.0; n / 2 + 1];
    let mut segments = 0;
    let mut start = 0;
    while start + n <= x.len() {
        let seg = &x[start..start + n];
        let mean = seg.iter().sum::<f64>() / n as f64;
        let mut buf: Vec<f64> = seg.iter().zip(&window).map(|(v, w)| (v - mean) * w).collect();
        let mut spec = fft.make_output_vec();
        fft.process(&mut buf, &mut spec).unwrap();
        for (p, c) in psd.iter_mut().zip(&spec) {
            *p += c.norm_sqr() / norm;
        }
        segments += 1;
        start += n / 2;
    }
    let last = psd.len() - 1;
    for (k, p) in psd.iter_mut().enumerate() {
        *p /= segments as f64;
        if k != 0 && k != last {
            *p *= 2.0;
        }
    }
    ((0..=n / 2).map(|k| k as f64 * fs / n as f64).collect(), psd)
}

fn band_power(f: &[f64], psd: &[f64], lo: f64, hi: f64) -> f64 {
    f.iter().zip(psd).filter(|(&f, _)| f >= lo && f < hi).map(|(_, p)| p).sum()
}

fn trial(rec: &EegRecording, t: usize, ch: usize) -> &[f64] {
    let (s, e) = rec.trial_boundaries[t];
    &rec.samples[ch][s..e]
}

#[test]
fn class_signatures_separate_alpha_to_beta_ratio() {
    let rec = generate_synthetic(&SynthSpec::default()).unwrap().recording;
    let fs = rec.sample_rate_hz;
    let mut ratios = [Vec::new(), Vec::new()];
    for t in 0..rec.trial_count() {
        let (mut alpha, mut beta) = (0.0, 0.0);
        for ch in 0..rec.channel_count() {
            let (f, p) = welch(trial(&rec, t, ch), fs, 256);
            alpha += band_power(&f, &p, 8.0, 14.0);
            beta += band_power(&f, &p, 14.0, 31.0);
        }
        ratios[rec.labels[t].arousal as usize].push(alpha / beta);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (r0, r1) = (mean(&ratios[0]), mean(&ratios[1]));
    assert!(r0 / r1 >= 2.0, "alpha/beta ratio {r0:.3} (class 0) vs {r1:.3} (class 1)");
    // every single trial sits on its class's side
    let lowest0 = ratios[0].iter().cloned().fold(f64::INFINITY, f64::min);
    let highest1 = ratios[1].iter().cloned().fold(0.0, f64::max);
    assert!(lowest0 > highest1);
}

/// Least-squares slope of log10 PSD against log10 frequency over `lo..hi` Hz.
fn log_log_slope(f: &[f64], psd: &[f64], lo: f64, hi: f64) -> f64 {
    let pts: Vec<(f64, f64)> = f
        .iter()
        .zip(psd)
        .filter(|(&f, _)| f >= lo && f <= hi)
        .map(|(f, p)| (f.log10(), p.log10()))
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn background_only(exponent: f64) -> SynthSpec {
    let silent: BTreeMap<String, f64> =
        ["delta", "theta", "alpha", "beta", "gamma"].iter().map(|b| (b.to_string(), 0.0)).collect();
    SynthSpec {
        trial_count: 4,
        channels: 4,
        duration_s: 30.0,
        class_band_power: vec![silent],
        noise_exponent: exponent,
        seed: 5,
        ..SynthSpec::default()
    }
}

fn mean_slope(spec: &SynthSpec) -> f64 {
    let out = generate_synthetic(spec).unwrap();
    assert_eq!(out.warnings.len(), 1, "a single silent class is degenerate");
    let rec = out.recording;
    let mut slopes = Vec::new();
    for t in 0..rec.trial_count() {
        for ch in 0..rec.channel_count() {
            let (f, p) = welch(trial(&rec, t, ch), rec.sample_rate_hz, 256);
            slopes.push(log_log_slope(&f, &p, 1.0, 90.0));
        }
    }
    slopes.iter().sum::<f64>() / slopes.len() as f64
}

#[test]
fn zero_exponent_background_is_flat() {
    let slope = mean_slope(&background_only(0.0));
    assert!(slope.abs() <= 0.3, "slope {slope}");
}

#[test]
fn unit_exponent_background_falls_as_one_over_f() {
    let slope = mean_slope(&background_only(1.0));
    assert!((slope + 1.0).abs() <= 0.3, "slope {slope}");
}

#[test]
fn same_seed_gives_identical_bytes() {
    let spec = SynthSpec { trial_count: 4, duration_s: 2.0, ..SynthSpec::default() };
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    assert_eq!(encode_container(&a.recording, &a.warnings).unwrap(), encode_container(&b.recording, &b.warnings).unwrap());
    let c = generate_synthetic(&SynthSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(c.recording, a.recording);
    // values are stored at single precision
    assert!(a.recording.samples.iter().flatten().all(|&v| (v as f32) as f64 == v));
}
