//! Recording container type and the band-pass / decimation / band-split chain.

pub mod filter;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use filter::{Biquad, Sos};

/// Prototype order of every Butterworth design used here.
pub const FILTER_ORDER: usize = 4;

/// Anti-alias cutoff as a fraction of the target rate.
pub const ANTI_ALIAS_FRACTION: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialLabels {
    pub arousal: u8,
    pub valence: u8,
}

/// Multichannel recording; `samples[e]` is the full series of channel `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub subject_id: String,
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f64,
    pub samples: Vec<Vec<f64>>,
    /// Half-open `[start, end)` sample ranges.
    pub trial_boundaries: Vec<(usize, usize)>,
    pub labels: Vec<TrialLabels>,
}

impl EegRecording {
    pub fn channel_count(&self) -> usize {
        self.samples.len()
    }

    pub fn sample_count(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn trial_count(&self) -> usize {
        self.trial_boundaries.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return fail(format!("sample rate {} is not positive", self.sample_rate_hz));
        }
        if self.channel_names.len() != self.samples.len() {
            return fail(format!(
                "{} channel names for {} channels",
                self.channel_names.len(),
                self.samples.len()
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for name in &self.channel_names {
            if !seen.insert(name.as_str()) {
                return fail(format!("duplicate channel name {name:?}"));
            }
        }
        let t = self.sample_count();
        if self.samples.iter().any(|c| c.len() != t) {
            return fail("channels have unequal lengths".into());
        }
        if self.labels.len() != self.trial_boundaries.len() {
            return fail(format!(
                "{} labels for {} trials",
                self.labels.len(),
                self.trial_boundaries.len()
            ));
        }
        let mut prev_end = 0;
        for (i, &(s, e)) in self.trial_boundaries.iter().enumerate() {
            if s >= e || e > t || s < prev_end {
                return fail(format!("trial {i} range [{s}, {e}) is empty, unsorted, overlapping or beyond {t} samples"));
            }
            prev_end = e;
        }
        for (i, l) in self.labels.iter().enumerate() {
            if l.arousal > 1 || l.valence > 1 {
                return fail(format!("trial {i} labels must be 0 or 1"));
            }
        }
        Ok(())
    }

    /// Channel-major copy of one trial's samples.
    pub fn trial_samples(&self, trial: usize) -> Vec<Vec<f64>> {
        let (s, e) = self.trial_boundaries[trial];
        self.samples.iter().map(|c| c[s..e].to_vec()).collect()
    }

    fn with_samples(&self, samples: Vec<Vec<f64>>) -> Self {
        EegRecording { samples, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::Beta => "beta",
            Band::Gamma => "gamma",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandDefinition {
    pub name: Band,
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandDefinition {
    /// Delta, theta, alpha, beta, gamma.
    pub fn defaults() -> [BandDefinition; 5] {
        let b = |name, low_hz, high_hz| BandDefinition { name, low_hz, high_hz };
        [
            b(Band::Delta, 1.0, 4.0),
            b(Band::Theta, 4.0, 8.0),
            b(Band::Alpha, 8.0, 14.0),
            b(Band::Beta, 14.0, 31.0),
            b(Band::Gamma, 31.0, 50.0),
        ]
    }
}

/// Zero-phase Butterworth band-pass of every channel.
pub fn bandpass(signal: &EegRecording, low_hz: f64, high_hz: f64) -> Result<EegRecording> {
    let nyquist = signal.sample_rate_hz / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(Error::contract(
            "bandpass",
            format!("need 0 < low < high < Nyquist, got {low_hz}..{high_hz} Hz with Nyquist {nyquist} Hz"),
        ));
    }
    let sos = Sos::bandpass(FILTER_ORDER, low_hz, high_hz, signal.sample_rate_hz);
    Ok(signal.with_samples(signal.samples.iter().map(|c| sos.filtfilt(c)).collect()))
}

/// Anti-alias low-pass then keep every `fs / target_hz`-th sample.
pub fn downsample(signal: &EegRecording, target_hz: f64) -> Result<EegRecording> {
    let ratio = signal.sample_rate_hz / target_hz;
    let factor = ratio.round();
    if !(target_hz > 0.0 && factor >= 1.0 && (ratio - factor).abs() < 1e-9) {
        return Err(Error::contract(
            "downsample",
            format!("{} Hz is not an integer multiple of {target_hz} Hz", signal.sample_rate_hz),
        ));
    }
    let factor = factor as usize;
    if factor == 1 {
        return Ok(signal.clone());
    }
    let sos = Sos::lowpass(FILTER_ORDER, ANTI_ALIAS_FRACTION * target_hz, signal.sample_rate_hz);
    let samples = signal
        .samples
        .iter()
        .map(|c| sos.filtfilt(c).into_iter().step_by(factor).collect())
        .collect();
    let rescale = |i: usize| i.div_ceil(factor);
    Ok(EegRecording {
        samples,
        sample_rate_hz: target_hz,
        trial_boundaries: signal.trial_boundaries.iter().map(|&(s, e)| (rescale(s), rescale(e))).collect(),
        ..signal.clone()
    })
}

/// One band-passed copy per band, in the given order.
pub fn band_decompose(signal: &EegRecording, bands: &[BandDefinition]) -> Result<Vec<EegRecording>> {
    bands.iter().map(|b| bandpass(signal, b.low_hz, b.high_hz)).collect()
}

/// Concatenates band copies along the channel axis, band-major.
/// Channel names become `<channel>@<band index>`.
pub fn stack_bands(bands: &[EegRecording]) -> Result<EegRecording> {
    let first = bands
        .first()
        .ok_or_else(|| Error::contract("stack_bands", "no band recordings"))?;
    let mut out = first.clone();
    out.channel_names.clear();
    out.samples.clear();
    for (i, b) in bands.iter().enumerate() {
        if b.sample_count() != first.sample_count() || b.channel_names != first.channel_names {
            return Err(Error::contract("stack_bands", format!("band {i} differs in layout")));
        }
        out.channel_names.extend(b.channel_names.iter().map(|n| format!("{n}@{i}")));
        out.samples.extend(b.samples.iter().cloned());
    }
    Ok(out)
}
