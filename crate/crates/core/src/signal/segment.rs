use super::recording::{Recording, Segment, SegmentSource};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::montage::CANONICAL_CHANNELS;

/// Fraction of a window a trailing remainder must reach to be kept.
pub const SHORT_KEEP_FRACTION: f64 = 0.5;

/// Keeps exactly the canonical 10-20 channels, in canonical order and
/// spelling. Matching is case-insensitive.
pub fn select_channels(rec: &Recording) -> Result<Recording> {
    let mut rows = Vec::with_capacity(CANONICAL_CHANNELS.len());
    let mut missing = Vec::new();
    for c in CANONICAL_CHANNELS {
        match rec.channel_names.iter().position(|n| n.trim().eq_ignore_ascii_case(c)) {
            Some(i) => rows.push(rec.samples[i].clone()),
            None => missing.push(c.to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingChannels(missing));
    }
    Ok(Recording {
        channel_names: CANONICAL_CHANNELS.iter().map(|s| s.to_string()).collect(),
        samples: rows,
        ..rec.clone()
    })
}

/// Samples per window, `round(rate · seconds)`.
pub fn window_len(sample_rate_hz: f64, window_s: f64) -> usize {
    (sample_rate_hz * window_s).round() as usize
}

/// Cuts non-overlapping consecutive windows. A trailing remainder is kept as
/// a short segment when it covers at least half a window. Returns the
/// segments and the number of discarded tail samples.
pub fn segment_with_remainder(rec: &Recording, window_s: f64) -> Result<(Vec<Segment>, usize)> {
    let label = rec.label.unwrap_or(0);
    let win = window_len(rec.sample_rate_hz, window_s);
    if win == 0 {
        return Err(Error::Config(format!("window of {window_s} s is empty at {} Hz", rec.sample_rate_hz)));
    }
    let len = rec.len();
    let mut out = Vec::new();
    let mut start = 0;
    let cut = |start: usize, end: usize| -> Result<Segment> {
        let data: Vec<f64> = rec.samples.iter().flat_map(|row| row[start..end].iter().copied()).collect();
        Ok(Segment {
            samples: Tensor::new([rec.n_channels(), end - start], data)?,
            label,
            source: SegmentSource {
                subject_id: rec.subject_id.clone(),
                offset: start,
            },
            sample_rate_hz: rec.sample_rate_hz,
        })
    };
    while start + win <= len {
        out.push(cut(start, start + win)?);
        start += win;
    }
    let rem = len - start;
    let mut discarded = 0;
    if rem > 0 {
        if rem as f64 >= SHORT_KEEP_FRACTION * win as f64 {
            out.push(cut(start, len)?);
        } else {
            discarded = rem;
        }
    }
    Ok((out, discarded))
}

pub fn segment(rec: &Recording, window_s: f64) -> Result<Vec<Segment>> {
    segment_with_remainder(rec, window_s).map(|(s, _)| s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(names: &[&str], len: usize, fs: f64) -> Recording {
        Recording::new(
            names.iter().map(|s| s.to_string()).collect(),
            fs,
            (0..names.len()).map(|c| vec![c as f64; len]).collect(),
            Some(1),
            "subj",
        )
        .unwrap()
    }

    #[test]
    fn extras_dropped_and_order_canonical() {
        let mut names: Vec<&str> = CANONICAL_CHANNELS.iter().rev().copied().collect();
        names.push("A1");
        names.insert(3, "A2");
        let r = rec(&names, 4, 256.0);
        let s = select_channels(&r).unwrap();
        assert_eq!(s.channel_names, CANONICAL_CHANNELS);
        let fp1_src = names.iter().position(|&n| n == "Fp1").unwrap() as f64;
        assert_eq!(s.samples[0][0], fp1_src);
        assert_eq!(select_channels(&s).unwrap(), s);
    }

    #[test]
    fn case_insensitive_and_missing() {
        let names: Vec<String> = CANONICAL_CHANNELS.iter().map(|s| s.to_uppercase()).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        assert!(select_channels(&rec(&refs, 2, 256.0)).is_ok());
        let without_pz: Vec<&str> = CANONICAL_CHANNELS.iter().copied().filter(|&c| c != "Pz").collect();
        match select_channels(&rec(&without_pz, 2, 256.0)) {
            Err(Error::MissingChannels(m)) => assert_eq!(m, vec!["Pz"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn windows() {
        let r = rec(&["Cz"], 300 * 256, 256.0);
        let segs = segment(&r, 60.0).unwrap();
        assert_eq!(segs.len(), 5);
        assert!(segs.iter().all(|s| s.len() == 15_360));
        assert_eq!(segs[4].source.offset, 4 * 15_360);

        let (segs, d) = segment_with_remainder(&rec(&["Cz"], 59 * 256, 256.0), 60.0).unwrap();
        assert_eq!((segs.len(), segs[0].len(), d), (1, 59 * 256, 0));

        let (segs, d) = segment_with_remainder(&rec(&["Cz"], 20 * 256, 256.0), 60.0).unwrap();
        assert_eq!((segs.len(), d), (0, 20 * 256));
    }
}
