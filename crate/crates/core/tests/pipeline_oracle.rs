//! Signal pipeline checked against an FFT and time-domain measurements.

use ega::montage::CANONICAL_CHANNELS;
use ega::signal::{bandpass_filter, notch_filter, preprocess, resample, PreprocessConfig, Recording};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};
use std::f64::consts::PI;

fn tone(freq: f64, fs: f64, secs: f64, amp: f64) -> Vec<f64> {
    let n = (fs * secs).round() as usize;
    (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / fs).sin()).collect()
}

fn mono(x: Vec<f64>, fs: f64) -> Recording {
    Recording::new(vec!["Cz".into()], fs, vec![x], Some(0), "t").unwrap()
}

/// Frequency and single-sided amplitude of the largest FFT bin.
fn fft_peak(x: &[f64], fs: f64) -> (f64, f64) {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let n = x.len();
    let (k, mag) = buf[1..n / 2]
        .iter()
        .enumerate()
        .map(|(k, c)| (k + 1, c.norm()))
        .fold((0, 0.0), |b, (k, m)| if m > b.1 { (k, m) } else { b });
    (k as f64 * fs / n as f64, 2.0 * mag / n as f64)
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// RMS of the middle half, away from edge transients.
fn mid_rms(x: &[f64]) -> f64 {
    rms(&x[x.len() / 4..3 * x.len() / 4])
}

fn db(ratio: f64) -> f64 {
    20.0 * ratio.log10()
}

#[test]
pub fn resampled_tone_keeps_frequency_and_amplitude() {
    let rec = mono(tone(10.0, 500.0, 10.0, 1.0), 500.0);
    let out = resample(&rec, 256.0).unwrap();
    assert_eq!((rec.len(), out.len()), (5000, 2560));
    let (f, a) = fft_peak(&out.samples[0], 256.0);
    assert!((f - 10.0).abs() < 1e-9, "peak at {f}");
    assert!((a - 1.0).abs() < 0.01, "amplitude {a}");
}

#[test]
pub fn random_rate_and_tone_pairs() {
    let rates: [f64; 8] = [128.0, 160.0, 200.0, 250.0, 300.0, 500.0, 512.0, 1000.0];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let fs = rates[rng.random_range(0..rates.len())];
        let nyq = fs.min(256.0) / 2.0;
        let f = rng.random_range(1..(0.6 * nyq) as usize) as f64;
        let amp = rng.random_range(0.5..3.0);
        let out = resample(&mono(tone(f, fs, 10.0, amp), fs), 256.0).unwrap();
        assert_eq!(out.len(), 2560, "from {fs}");
        let (pf, pa) = fft_peak(&out.samples[0], 256.0);
        assert!((pf - f).abs() < 1e-9, "{fs} Hz, {f} Hz tone peaked at {pf}");
        assert!((pa / amp - 1.0).abs() < 0.01, "{fs} Hz, {f} Hz tone amplitude {pa} vs {amp}");
    }
}

#[test]
pub fn notch_removes_mains_and_spares_alpha() {
    let fs = 256.0;
    let mains = notch_filter(&mono(tone(50.0, fs, 20.0, 1.0), fs), 50.0, 30.0).unwrap();
    let att = db(mid_rms(&mains.samples[0]) / (1.0 / 2f64.sqrt()));
    assert!(att <= -30.0, "50 Hz at {att:.1} dB");
    let alpha = notch_filter(&mono(tone(10.0, fs, 20.0, 1.0), fs), 50.0, 30.0).unwrap();
    let pass = db(mid_rms(&alpha.samples[0]) / (1.0 / 2f64.sqrt()));
    assert!(pass.abs() <= 1.0, "10 Hz at {pass:.2} dB");
}

#[test]
pub fn bandpass_rejects_above_band() {
    let fs = 256.0;
    let hi = bandpass_filter(&mono(tone(120.0, fs, 20.0, 1.0), fs), 0.1, 100.0, 4).unwrap();
    let att = db(mid_rms(&hi.samples[0]) / (1.0 / 2f64.sqrt()));
    assert!(att <= -20.0, "120 Hz at {att:.1} dB");
    let mid = bandpass_filter(&mono(tone(10.0, fs, 20.0, 1.0), fs), 0.1, 100.0, 4).unwrap();
    let pass = db(mid_rms(&mid.samples[0]) / (1.0 / 2f64.sqrt()));
    assert!(pass.abs() <= 1.0, "10 Hz at {pass:.2} dB");
}

#[test]
pub fn filters_are_zero_phase() {
    let fs = 256.0;
    let n = (20.0 * fs) as usize;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            (2.0 * PI * 5.0 * t).sin() + 0.7 * (2.0 * PI * 11.0 * t + 0.4).sin() + 0.4 * (2.0 * PI * 23.0 * t + 1.1).sin()
        })
        .collect();
    let band = bandpass_filter(&mono(x.clone(), fs), 0.1, 100.0, 4).unwrap();
    let notched = notch_filter(&mono(x.clone(), fs), 50.0, 30.0).unwrap();
    for y in [&band.samples[0], &notched.samples[0]] {
        let (lo, hi) = (n / 4, 3 * n / 4);
        let xc = |lag: i64| -> f64 { (lo..hi).map(|i| x[i] * y[(i as i64 + lag) as usize]).sum() };
        let best = (-20..=20).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
    }
}

#[test]
pub fn five_minutes_make_five_windows() {
    let fs = 256.0;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = (300.0 * fs) as usize;
    let samples: Vec<Vec<f64>> =
        (0..CANONICAL_CHANNELS.len()).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let rec = Recording::new(CANONICAL_CHANNELS.iter().map(|s| s.to_string()).collect(), fs, samples, Some(1), "s")
        .unwrap();
    let out = preprocess(&rec, &PreprocessConfig::default()).unwrap();
    assert_eq!(out.segments.len(), 5);
    assert_eq!(out.discarded_samples, 0);
    for (i, s) in out.segments.iter().enumerate() {
        assert_eq!((s.n_channels(), s.len(), s.source.offset, s.label), (19, 15_360, i * 15_360, 1));
    }
}
