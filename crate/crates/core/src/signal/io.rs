//! EEGB v1 recordings and CSV fixtures.
//!
//! EEGB: `EEGB`, a little-endian `u32` header length, a UTF-8 JSON header,
//! then channel-major little-endian `f32` samples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::recording::{Recording, Segment};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"EEGB";
pub const VERSION: u32 = 1;
pub const EXTENSION: &str = "eegb";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    channel_names: Vec<String>,
    sample_rate_hz: f64,
    label: Option<usize>,
    subject_id: String,
    n_samples: usize,
}

pub fn to_eegb_bytes(rec: &Recording) -> Result<Vec<u8>> {
    rec.validate()?;
    let header = serde_json::to_vec(&Header {
        version: VERSION,
        channel_names: rec.channel_names.clone(),
        sample_rate_hz: rec.sample_rate_hz,
        label: rec.label,
        subject_id: rec.subject_id.clone(),
        n_samples: rec.len(),
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + 4 * rec.n_channels() * rec.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for row in &rec.samples {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_eegb_bytes(bytes: &[u8]) -> Result<Recording> {
    let bad = |reason: String| Error::format("EEGB", reason);
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing EEGB magic".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
    if header.version != VERSION {
        return Err(bad(format!("unsupported version {}", header.version)));
    }
    let n_ch = header.channel_names.len();
    let data = &bytes[8 + hlen..];
    let expected = 4 * n_ch * header.n_samples;
    if data.len() != expected {
        return Err(bad(format!("expected {expected} sample bytes, found {}", data.len())));
    }
    let samples = (0..n_ch)
        .map(|c| {
            data[4 * c * header.n_samples..4 * (c + 1) * header.n_samples]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect()
        })
        .collect();
    Recording::new(header.channel_names, header.sample_rate_hz, samples, header.label, header.subject_id)
}

pub fn write_eegb(path: &Path, rec: &Recording) -> Result<()> {
    std::fs::write(path, to_eegb_bytes(rec)?).map_err(|e| Error::io(path, e))
}

pub fn read_eegb(path: &Path) -> Result<Recording> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_eegb_bytes(&bytes)
}

/// Reads a CSV fixture: header row of channel names after a leading time
/// column, one row per sample. The time column is ignored.
pub fn read_csv(path: &Path, sample_rate_hz: f64, label: Option<usize>, subject_id: &str) -> Result<Recording> {
    let bad = |reason: String| Error::format("CSV", format!("{}: {reason}", path.display()));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.len() < 2 {
        return Err(bad("need a time column and at least one channel".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut samples = vec![Vec::new(); names.len()];
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        if row.len() != headers.len() {
            return Err(bad(format!("row {} has {} fields, expected {}", line + 1, row.len(), headers.len())));
        }
        for (c, field) in row.iter().skip(1).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| bad(format!("row {}, column `{}`: `{field}` is not a number", line + 1, names[c])))?;
            samples[c].push(v);
        }
    }
    Recording::new(names, sample_rate_hz, samples, label, subject_id)
}

/// Every `*.eegb` file in `dir`, sorted by file name.
pub fn list_eegb(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == EXTENSION))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads a directory of labelled EEGB segments.
pub fn load_segments(dir: &Path) -> Result<Vec<Segment>> {
    list_eegb(dir)?
        .iter()
        .map(|p| read_eegb(p).and_then(|r| Segment::from_recording(&r)))
        .collect()
}

/// Writes each segment as `<subject>_<offset>.eegb`; returns the paths.
pub fn write_segments(dir: &Path, segments: &[Segment], channel_names: &[String]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    segments
        .iter()
        .map(|s| {
            let safe: String = s
                .source
                .subject_id
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                .collect();
            let path = dir.join(format!("{safe}_{:08}.{EXTENSION}", s.source.offset));
            write_eegb(&path, &s.to_recording(channel_names.to_vec())?)?;
            Ok(path)
        })
        .collect()
}
