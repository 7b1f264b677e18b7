//! Recording ingestion, preprocessing and synthetic data.

pub mod filter;
pub mod io;
pub mod recording;
pub mod resample;
pub mod segment;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use recording::{Recording, Segment, SegmentSource};
pub use segment::{segment, segment_with_remainder, select_channels, window_len};
pub use synth::{synthesize_dataset, SynthSpec};

/// Rate every recording is brought to before filtering.
pub const TARGET_RATE_HZ: f64 = 256.0;

pub fn resample(rec: &Recording, target_hz: f64) -> Result<Recording> {
    if rec.is_empty() {
        return Err(Error::InvalidFilter(format!("recording `{}` is empty", rec.subject_id)));
    }
    let mut out = rec.map_channels(|x| resample::resample_channel(x, rec.sample_rate_hz, target_hz))?;
    out.sample_rate_hz = target_hz;
    Ok(out)
}

/// Zero-phase second-order notch at `f0`.
pub fn notch_filter(rec: &Recording, f0: f64, q: f64) -> Result<Recording> {
    let sos = filter::design_notch(f0, q, rec.sample_rate_hz)?;
    let pad = filter::default_padlen(&sos, rec.sample_rate_hz);
    rec.map_channels(|x| Ok(sos.filtfilt(x, pad)))
}

/// Zero-phase Butterworth band-pass.
pub fn bandpass_filter(rec: &Recording, lo: f64, hi: f64, order: usize) -> Result<Recording> {
    let sos = filter::design_butter_bandpass(lo, hi, order, rec.sample_rate_hz)?;
    let pad = filter::default_padlen(&sos, rec.sample_rate_hz);
    rec.map_channels(|x| Ok(sos.filtfilt(x, pad)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub resample_hz: f64,
    /// `None` skips the notch.
    pub notch_hz: Option<f64>,
    pub notch_q: f64,
    /// `None` skips the band-pass.
    pub band: Option<[f64; 2]>,
    pub band_order: usize,
    pub window_s: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            resample_hz: TARGET_RATE_HZ,
            notch_hz: Some(50.0),
            notch_q: 30.0,
            band: Some([0.1, 100.0]),
            band_order: 4,
            window_s: 60.0,
        }
    }
}

/// What came out of one recording.
#[derive(Clone, Debug)]
pub struct Preprocessed {
    pub segments: Vec<Segment>,
    pub discarded_samples: usize,
}

/// resample → channel selection → notch → band-pass → segmentation.
pub fn preprocess(rec: &Recording, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    rec.validate()?;
    let mut r = resample(rec, cfg.resample_hz)?;
    r = select_channels(&r)?;
    if let Some(f0) = cfg.notch_hz {
        r = notch_filter(&r, f0, cfg.notch_q)?;
    }
    if let Some([lo, hi]) = cfg.band {
        r = bandpass_filter(&r, lo, hi, cfg.band_order)?;
    }
    let (segments, discarded_samples) = segment_with_remainder(&r, cfg.window_s)?;
    Ok(Preprocessed {
        segments,
        discarded_samples,
    })
}
