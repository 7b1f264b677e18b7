//! Rational polyphase resampling with a Blackman-windowed sinc kernel.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Zero crossings of the sinc on each side of the kernel centre.
const HALF_ZEROS: usize = 32;
/// Cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.95;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Reduced `(up, down)` factors for converting `from_hz` to `to_hz`.
pub fn rational_factors(from_hz: f64, to_hz: f64) -> Result<(u64, u64)> {
    if !(from_hz > 0.0 && to_hz > 0.0) || !from_hz.is_finite() || !to_hz.is_finite() {
        return Err(Error::InvalidFilter(format!("sample rates must be positive, got {from_hz} → {to_hz}")));
    }
    let is_int = |v: f64| (v - v.round()).abs() < 1e-9;
    let scale = if is_int(from_hz) && is_int(to_hz) { 1.0 } else { 1000.0 };
    let (num, den) = ((to_hz * scale).round() as u64, (from_hz * scale).round() as u64);
    if num == 0 || den == 0 {
        return Err(Error::InvalidFilter("sample rate too small to represent".into()));
    }
    let g = gcd(num, den);
    Ok((num / g, den / g))
}

/// Output length `round(len · to / from)`.
pub fn resampled_len(len: usize, from_hz: f64, to_hz: f64) -> usize {
    (len as f64 * to_hz / from_hz).round() as usize
}

/// Resamples one channel. Identity rates return the input unchanged.
pub fn resample_channel(x: &[f64], from_hz: f64, to_hz: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::InvalidFilter("cannot resample an empty signal".into()));
    }
    let (up, down) = rational_factors(from_hz, to_hz)?;
    if up == down {
        return Ok(x.to_vec());
    }
    let n_out = resampled_len(x.len(), from_hz, to_hz);
    let (up_i, down_i) = (up as i64, down as i64);
    let factor = up.max(down) as f64;
    // Kernel lives on the upsampled grid; cutoff in cycles per upsampled sample.
    let fc = ROLLOFF * 0.5 / factor;
    let half = (HALF_ZEROS as f64 * factor / ROLLOFF).ceil() as i64;
    let kernel = |j: i64| -> f64 {
        if j.abs() > half {
            return 0.0;
        }
        let t = j as f64;
        let sinc = if j == 0 { 1.0 } else { (2.0 * PI * fc * t).sin() / (PI * t * 2.0 * fc) };
        let w = 0.42 + 0.5 * (PI * t / half as f64).cos() + 0.08 * (2.0 * PI * t / half as f64).cos();
        2.0 * fc * sinc * w
    };
    let len = x.len() as i64;
    let out = (0..n_out as i64)
        .map(|m| {
            let centre = m * down_i;
            // input samples n with |centre − n·up| ≤ half
            let n_lo = ((centre - half) as f64 / up_i as f64).ceil().max(0.0) as i64;
            let n_hi = (((centre + half) as f64 / up_i as f64).floor() as i64).min(len - 1);
            let (mut acc, mut norm) = (0.0, 0.0);
            for n in n_lo..=n_hi {
                let h = kernel(centre - n * up_i);
                acc += h * x[n as usize];
                norm += h;
            }
            // unit DC gain for every phase, including truncated kernels at the ends
            acc / norm
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors() {
        assert_eq!(rational_factors(500.0, 256.0).unwrap(), (64, 125));
        assert_eq!(rational_factors(256.0, 256.0).unwrap(), (1, 1));
        assert_eq!(rational_factors(250.5, 256.0).unwrap(), (512, 501));
        assert!(rational_factors(0.0, 256.0).is_err());
    }

    #[test]
    fn dc_is_preserved() {
        let y = resample_channel(&[1.0; 2000], 500.0, 256.0).unwrap();
        assert_eq!(y.len(), 1024);
        for &v in &y {
            assert!((v - 1.0).abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn identity_is_bitwise() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(resample_channel(&x, 256.0, 256.0).unwrap(), x);
        assert!(resample_channel(&[], 500.0, 256.0).is_err());
    }
}
