//! Butterworth second-order-section design and zero-phase filtering.

use std::f64::consts::PI;

use num_complex::Complex64;

/// One biquad, `[b0, b1, b2, a1, a2]` with `a0` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn from_pole(pole: Complex64, numerator: [f64; 3]) -> Self {
        Biquad {
            b: numerator,
            a: [-2.0 * pole.re, pole.norm_sqr()],
        }
    }

    fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        let num = self.b[0] + self.b[1] * z1 + self.b[2] * z2;
        let den = 1.0 + self.a[0] * z1 + self.a[1] * z2;
        num / den
    }

    fn scaled(mut self, g: f64) -> Self {
        self.b.iter_mut().for_each(|v| *v *= g);
        self
    }
}

/// Cascade of biquads applied in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

fn prewarp(hz: f64, fs: f64) -> f64 {
    2.0 * fs * (PI * hz / fs).tan()
}

fn bilinear(p: Complex64, fs: f64) -> Complex64 {
    let k = Complex64::new(2.0 * fs, 0.0);
    (k + p) / (k - p)
}

/// Upper-half-plane members of a conjugate-symmetric pole set, one per section.
fn upper_poles(poles: &[Complex64]) -> Vec<Complex64> {
    let mut up: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 0.0).collect();
    up.sort_by(|a, b| a.re.total_cmp(&b.re));
    up
}

impl Sos {
    /// Butterworth low-pass of even `order`, unit gain at DC.
    pub fn lowpass(order: usize, cutoff_hz: f64, fs: f64) -> Self {
        let wc = prewarp(cutoff_hz, fs);
        let poles: Vec<Complex64> = prototype_poles(order).into_iter().map(|p| bilinear(p * wc, fs)).collect();
        let sections = upper_poles(&poles)
            .into_iter()
            .map(|p| {
                let s = Biquad::from_pole(p, [1.0, 2.0, 1.0]);
                s.scaled((1.0 + s.a[0] + s.a[1]) / 4.0)
            })
            .collect();
        Sos { sections }
    }

    /// Butterworth high-pass of even `order`, unit gain at Nyquist.
    pub fn highpass(order: usize, cutoff_hz: f64, fs: f64) -> Self {
        let wc = prewarp(cutoff_hz, fs);
        let poles: Vec<Complex64> = prototype_poles(order).into_iter().map(|p| bilinear(wc / p, fs)).collect();
        let sections = upper_poles(&poles)
            .into_iter()
            .map(|p| {
                let s = Biquad::from_pole(p, [1.0, -2.0, 1.0]);
                s.scaled((1.0 - s.a[0] + s.a[1]) / 4.0)
            })
            .collect();
        Sos { sections }
    }

    /// Band-pass obtained by the low-pass to band-pass transform of an
    /// `order`-pole prototype (2·order poles in total), unit gain at the
    /// geometric centre of the pre-warped band.
    pub fn bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Self {
        let wl = prewarp(low_hz, fs);
        let wh = prewarp(high_hz, fs);
        let bw = wh - wl;
        let w0 = (wl * wh).sqrt();
        let mut poles = Vec::with_capacity(2 * order);
        for p in prototype_poles(order) {
            let half = p * (bw / 2.0);
            let root = (half * half - w0 * w0).sqrt();
            poles.push(bilinear(half + root, fs));
            poles.push(bilinear(half - root, fs));
        }
        let centre = 2.0 * (w0 / (2.0 * fs)).atan();
        let sections = upper_poles(&poles)
            .into_iter()
            .map(|p| {
                let s = Biquad::from_pole(p, [1.0, 0.0, -1.0]);
                let g = s.response(centre).norm();
                s.scaled(1.0 / g)
            })
            .collect();
        Sos { sections }
    }

    /// Complex frequency response at `hz`.
    pub fn response(&self, hz: f64, fs: f64) -> Complex64 {
        let omega = 2.0 * PI * hz / fs;
        self.sections.iter().map(|s| s.response(omega)).product()
    }

    /// Number of samples mirrored at each edge before forward-backward filtering.
    pub fn edge_pad(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Steady-state internal state for a unit step input, per section.
    fn step_state(&self) -> Vec<[f64; 2]> {
        let mut level = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let out = level * (s.b[0] + s.b[1] + s.b[2]) / (1.0 + s.a[0] + s.a[1]);
                let z = [out - s.b[0] * level, s.b[2] * level - s.a[1] * out];
                level = out;
                z
            })
            .collect()
    }

    fn run(&self, x: &mut [f64], state: &mut [[f64; 2]]) {
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            for v in x.iter_mut() {
                let input = *v;
                let y = s.b[0] * input + z[0];
                z[0] = s.b[1] * input - s.a[0] * y + z[1];
                z[1] = s.b[2] * input - s.a[1] * y;
                *v = y;
            }
        }
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        let mut state = vec![[0.0; 2]; self.sections.len()];
        self.run(&mut y, &mut state);
        y
    }

    /// Zero-phase forward-backward filtering with odd-symmetric edge
    /// extension and steady-state initial conditions.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = self.edge_pad().min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let unit = self.step_state();
        let seeded = |level: f64| -> Vec<[f64; 2]> {
            unit.iter().map(|z| [z[0] * level, z[1] * level]).collect()
        };
        let mut state = seeded(ext[0]);
        self.run(&mut ext, &mut state);
        ext.reverse();
        let mut state = seeded(ext[0]);
        self.run(&mut ext, &mut state);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}
