//! Synthetic EEG with class-dependent band-power signatures.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MONTAGE_32;
use crate::signal::{BandDefinition, EegRecording, TrialLabels};

/// Sinusoids mixed into each band of each channel.
pub const SINUSOIDS_PER_BAND: usize = 12;
/// Variance contributed by one band at multiplier 1; the background has unit variance.
pub const BAND_VARIANCE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub subject_id: String,
    pub trial_count: usize,
    pub channels: usize,
    pub sample_rate_hz: f64,
    pub duration_s: f64,
    /// One map per class (at most two) from band name to power multiplier; absent bands are 1.
    pub class_band_power: Vec<BTreeMap<String, f64>>,
    /// Background power falls as `1/f^noise_exponent`.
    pub noise_exponent: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        let class = |band: &str| BTreeMap::from([(band.to_string(), 3.0)]);
        SynthSpec {
            subject_id: "synthetic".into(),
            trial_count: 20,
            channels: 32,
            sample_rate_hz: 200.0,
            duration_s: 10.0,
            class_band_power: vec![class("alpha"), class("beta")],
            noise_exponent: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.trial_count == 0 || self.channels == 0 {
            return fail("trial_count and channels must be positive".into());
        }
        if !(self.sample_rate_hz > 0.0 && self.duration_s > 0.0) {
            return fail("sample_rate_hz and duration_s must be positive".into());
        }
        if !(1..=2).contains(&self.class_band_power.len()) {
            return fail(format!("{} classes requested; labels are binary", self.class_band_power.len()));
        }
        if self.sample_count() < 2 {
            return fail("trials must span at least two samples".into());
        }
        let nyquist = self.sample_rate_hz / 2.0;
        let top = BandDefinition::defaults().iter().map(|b| b.high_hz).fold(0.0, f64::max);
        if top >= nyquist {
            return fail(format!("bands reach {top} Hz, beyond the Nyquist frequency {nyquist} Hz"));
        }
        for class in &self.class_band_power {
            for (name, &m) in class {
                if !BandDefinition::defaults().iter().any(|b| b.name.as_str() == name) {
                    return fail(format!("unknown band {name:?}"));
                }
                if !(m.is_finite() && m >= 0.0) {
                    return fail(format!("band {name} multiplier {m} must be non-negative"));
                }
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    fn multipliers(&self, class: usize) -> Vec<f64> {
        BandDefinition::defaults()
            .iter()
            .map(|b| self.class_band_power[class].get(b.name.as_str()).copied().unwrap_or(1.0))
            .collect()
    }

    /// Warnings for specs that cannot produce a learnable task.
    pub fn warnings(&self) -> Vec<String> {
        let sigs: Vec<Vec<f64>> = (0..self.class_band_power.len()).map(|c| self.multipliers(c)).collect();
        if sigs.windows(2).all(|w| w[0] == w[1]) {
            vec!["degenerate spec: every class has the same band signature".to_string()]
        } else {
            Vec::new()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub recording: EegRecording,
    pub warnings: Vec<String>,
}

/// Gaussian noise shaped to a `1/f^exponent` power spectrum, zero mean and unit RMS.
pub fn coloured_noise(n: usize, fs: f64, exponent: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(n);
    let ifft = RealFftPlanner::<f64>::new().plan_fft_inverse(n);
    let mut spec = fft.make_output_vec();
    fft.process(&mut white, &mut spec).expect("buffer sizes come from the plan");
    spec[0] = 0.0.into();
    for (k, bin) in spec.iter_mut().enumerate().skip(1) {
        let f = k as f64 * fs / n as f64;
        *bin *= f.powf(-exponent / 2.0);
    }
    if n % 2 == 0 {
        spec[n / 2].im = 0.0;
    }
    let mut out = ifft.make_output_vec();
    ifft.process(&mut spec, &mut out).expect("buffer sizes come from the plan");
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v /= rms);
    }
    out
}

/// Trial `i` belongs to class `i mod K`; labels carry the class on both dimensions.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let fs = spec.sample_rate_hz;
    let n = spec.sample_count();
    let bands = BandDefinition::defaults();
    let classes = spec.class_band_power.len();
    let channel_names: Vec<String> = if spec.channels <= MONTAGE_32.len() {
        MONTAGE_32[..spec.channels].iter().map(|s| s.to_string()).collect()
    } else {
        (0..spec.channels).map(|c| format!("ch{c}")).collect()
    };

    let mut samples = vec![Vec::with_capacity(n * spec.trial_count); spec.channels];
    let mut trial_boundaries = Vec::with_capacity(spec.trial_count);
    let mut labels = Vec::with_capacity(spec.trial_count);
    for trial in 0..spec.trial_count {
        let class = trial % classes;
        let gains = spec.multipliers(class);
        for ch in samples.iter_mut() {
            let mut x = coloured_noise(n, fs, spec.noise_exponent, &mut rng);
            for (band, m) in bands.iter().zip(&gains) {
                let amp = (2.0 * BAND_VARIANCE * m / SINUSOIDS_PER_BAND as f64).sqrt();
                for _ in 0..SINUSOIDS_PER_BAND {
                    let f: f64 = rng.gen_range(band.low_hz..band.high_hz);
                    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let w = std::f64::consts::TAU * f / fs;
                    for (i, v) in x.iter_mut().enumerate() {
                        *v += amp * (w * i as f64 + phase).sin();
                    }
                }
            }
            ch.extend(x.into_iter().map(|v| v as f32 as f64));
        }
        trial_boundaries.push((trial * n, (trial + 1) * n));
        labels.push(TrialLabels { arousal: class as u8, valence: class as u8 });
    }
    let recording = EegRecording {
        subject_id: spec.subject_id.clone(),
        channel_names,
        sample_rate_hz: fs,
        samples,
        trial_boundaries,
        labels,
    };
    Ok(SynthOutput { recording, warnings: spec.warnings() })
}
