//! Zero-phase IIR filtering with second-order sections.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One biquad `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }

    /// Transposed direct-form-II state for a unit step held forever.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let gain = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * gain;
        [b1 - a1 * gain + z2, z2]
    }

    fn dc_gain(&self) -> f64 {
        (self.b.iter().sum::<f64>()) / (1.0 + self.a[0] + self.a[1])
    }
}

/// Cascade of biquads.
#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Magnitude response at `freq_hz` for sample rate `fs`.
    pub fn gain_at(&self, freq_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / fs;
        self.sections.iter().map(|s| s.response(w)).product::<Complex64>().norm()
    }

    fn filter_in_place(&self, x: &mut [f64], initial: f64) {
        let mut scale = initial;
        for s in &self.sections {
            let [mut z1, mut z2] = s.step_state().map(|v| v * scale);
            let [b0, b1, b2] = s.b;
            let [a1, a2] = s.a;
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
            scale *= s.dc_gain();
        }
    }

    /// Forward-backward filtering with odd-extension padding and steady-state
    /// initial conditions. The result has zero phase and squared magnitude.
    pub fn filtfilt(&self, x: &[f64], padlen: usize) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = padlen.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        let first = ext[0];
        self.filter_in_place(&mut ext, first);
        ext.reverse();
        let first = ext[0];
        self.filter_in_place(&mut ext, first);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Second-order IIR notch at `f0` with quality factor `q`.
pub fn design_notch(f0: f64, q: f64, fs: f64) -> Result<Sos> {
    if !(f0 > 0.0 && f0 < fs / 2.0) {
        return Err(Error::InvalidFilter(format!("notch frequency {f0} Hz must lie in (0, {}) Hz", fs / 2.0)));
    }
    if q <= 0.0 {
        return Err(Error::InvalidFilter(format!("notch Q must be positive, got {q}")));
    }
    let w0 = 2.0 * PI * f0 / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let c = -2.0 * w0.cos();
    Ok(Sos {
        sections: vec![Biquad {
            b: [1.0 / a0, c / a0, 1.0 / a0],
            a: [c / a0, (1.0 - alpha) / a0],
        }],
    })
}

/// Butterworth band-pass of prototype order `order` (2·order poles) via the
/// bilinear transform, normalised to unit gain at the geometric centre.
pub fn design_butter_bandpass(lo: f64, hi: f64, order: usize, fs: f64) -> Result<Sos> {
    if !(lo > 0.0 && lo < hi && hi < fs / 2.0) {
        return Err(Error::InvalidFilter(format!(
            "band [{lo}, {hi}] Hz must satisfy 0 < lo < hi < {}",
            fs / 2.0
        )));
    }
    if order == 0 {
        return Err(Error::InvalidFilter("filter order must be positive".into()));
    }
    let k = 2.0 * fs;
    let w1 = k * (PI * lo / fs).tan();
    let w2 = k * (PI * hi / fs).tan();
    let bw = w2 - w1;
    let w0sq = w1 * w2;

    let mut poles = Vec::with_capacity(2 * order);
    for i in 0..order {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let p = Complex64::from_polar(1.0, theta) * (bw / 2.0);
        let disc = (p * p - w0sq).sqrt();
        for s in [p + disc, p - disc] {
            poles.push((k + s) / (k - s));
        }
    }

    // Conjugate pairs become one section each; leftover real poles pair up.
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > 1e-12).collect();
    complex.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= 1e-12).map(|p| p.re).collect();
    real.sort_by(f64::total_cmp);
    let mut sections: Vec<Biquad> = complex
        .iter()
        .map(|p| Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        let b = if pair.len() == 2 { [1.0, 0.0, -1.0] } else { [1.0, -1.0, 0.0] };
        sections.push(Biquad {
            b,
            a: [-(r1 + r2), r1 * r2],
        });
    }

    let mut sos = Sos { sections };
    let centre = 2.0 * (w0sq.sqrt() / k).atan() * fs / (2.0 * PI);
    let g = sos.gain_at(centre, fs);
    for v in &mut sos.sections[0].b {
        *v /= g;
    }
    Ok(sos)
}

/// Padding used by the pipeline filters: three times the slowest section's
/// time constant, at least one second.
pub fn default_padlen(sos: &Sos, fs: f64) -> usize {
    let slowest = sos
        .sections
        .iter()
        .map(|s| {
            // pole radius of the section; time constant −1/ln r samples
            let r = s.a[1].abs().sqrt().clamp(0.0, 1.0 - 1e-12);
            -1.0 / r.ln()
        })
        .fold(0.0, f64::max);
    (3.0 * slowest).max(fs).ceil() as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn notch_response_shape() {
        let sos = design_notch(50.0, 30.0, 256.0).unwrap();
        assert!(sos.gain_at(50.0, 256.0) < 1e-12);
        assert!((sos.gain_at(10.0, 256.0) - 1.0).abs() < 1e-3);
        assert!(design_notch(128.0, 30.0, 256.0).is_err());
    }

    #[test]
    fn bandpass_response_shape() {
        let sos = design_butter_bandpass(0.1, 100.0, 4, 256.0).unwrap();
        assert_eq!(sos.sections.len(), 4);
        assert!((sos.gain_at(10.0, 256.0) - 1.0).abs() < 1e-3);
        assert!(sos.gain_at(120.0, 256.0) < 0.1);
        assert!(sos.gain_at(0.01, 256.0) < 0.01);
        for s in &sos.sections {
            assert!(s.a[1] < 1.0, "pole outside unit circle");
        }
        assert!(design_butter_bandpass(10.0, 5.0, 4, 256.0).is_err());
        assert!(design_butter_bandpass(1.0, 200.0, 4, 256.0).is_err());
    }

    #[test]
    fn odd_order_has_real_pole_sections() {
        let sos = design_butter_bandpass(1.0, 30.0, 3, 256.0).unwrap();
        assert!((sos.gain_at(5.5, 256.0) - 1.0).abs() < 0.05);
    }

    #[test]
    fn filtfilt_zero_signal() {
        let sos = design_notch(50.0, 30.0, 256.0).unwrap();
        assert!(sos.filtfilt(&[0.0; 300], 256).iter().all(|&v| v == 0.0));
    }
}
