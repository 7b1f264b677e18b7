//! Build a 21-channel 500 Hz recording with line noise, run the standard
//! preprocessing chain and cut it into 60 s segments.

use ega::montage::CANONICAL_CHANNELS;
use ega::signal::{self, PreprocessConfig, Recording};

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn main() -> ega::Result<()> {
    let fs = 500.0;
    let n = (150.0 * fs) as usize;
    let mut names: Vec<String> = CANONICAL_CHANNELS.iter().map(|s| s.to_uppercase()).collect();
    names.extend(["A1".to_string(), "A2".to_string()]);
    let samples = (0..names.len())
        .map(|c| {
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    (2.0 * std::f64::consts::PI * (8.0 + c as f64 * 0.1) * t).sin()
                        + 0.8 * (2.0 * std::f64::consts::PI * 50.0 * t).sin()
                })
                .collect()
        })
        .collect();
    let rec = Recording::new(names, fs, samples, Some(1), "demo")?;

    let cfg = PreprocessConfig::default();
    let out = signal::preprocess(&rec, &cfg)?;
    println!("{} channels at {} Hz, {:.0} s", rec.n_channels(), fs, rec.duration_s());
    println!(
        "-> {} segments of {:?} samples, {} tail samples dropped",
        out.segments.len(),
        out.segments.iter().map(|s| s.len()).collect::<Vec<_>>(),
        out.discarded_samples
    );

    // what the notch alone does to a pure 50 Hz tone
    let tone = Recording::new(
        vec!["Cz".into()],
        256.0,
        vec![(0..2560).map(|i| (2.0 * std::f64::consts::PI * 50.0 * i as f64 / 256.0).sin()).collect()],
        None,
        "tone",
    )?;
    let notched = signal::notch_filter(&tone, 50.0, 30.0)?;
    let db = 20.0 * (rms(&notched.samples[0][512..2048]) / rms(&tone.samples[0])).log10();
    println!("50 Hz tone after notch: {db:.1} dB");
    Ok(())
}
