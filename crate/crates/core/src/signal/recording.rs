use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// A labelled multichannel recording; `samples[c]` is channel `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub channel_names: Vec<String>,
    pub sample_rate_hz: f64,
    pub samples: Vec<Vec<f64>>,
    pub label: Option<usize>,
    pub subject_id: String,
}

impl Recording {
    pub fn new(
        channel_names: Vec<String>,
        sample_rate_hz: f64,
        samples: Vec<Vec<f64>>,
        label: Option<usize>,
        subject_id: impl Into<String>,
    ) -> Result<Self> {
        let rec = Recording {
            channel_names,
            sample_rate_hz,
            samples,
            label,
            subject_id: subject_id.into(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() != self.channel_names.len() {
            return Err(Error::format(
                "recording",
                format!("{} sample rows for {} channel names", self.samples.len(), self.channel_names.len()),
            ));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::format("recording", format!("sample rate {} is not positive", self.sample_rate_hz)));
        }
        let len = self.len();
        if self.samples.iter().any(|row| row.len() != len) {
            return Err(Error::format("recording", "channels have different lengths"));
        }
        if let Some((c, t)) = self
            .samples
            .iter()
            .enumerate()
            .find_map(|(c, row)| row.iter().position(|v| !v.is_finite()).map(|t| (c, t)))
        {
            return Err(Error::format(
                "recording",
                format!("non-finite sample in channel {} at {t}", self.channel_names[c]),
            ));
        }
        Ok(())
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Applies `f` to every channel, keeping metadata.
    pub fn map_channels(&self, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Recording> {
        let samples = self.samples.iter().map(|row| f(row)).collect::<Result<Vec<_>>>()?;
        Ok(Recording {
            samples,
            ..self.clone()
        })
    }
}

/// Where a segment was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSource {
    pub subject_id: String,
    /// Offset of the first sample within the source recording.
    pub offset: usize,
}

/// Fixed-window slice of a recording, channels in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    /// `[channels, length]`
    pub samples: Tensor,
    pub label: usize,
    pub source: SegmentSource,
    pub sample_rate_hz: f64,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.samples.cols()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn n_channels(&self) -> usize {
        self.samples.rows()
    }

    pub fn to_recording(&self, channel_names: Vec<String>) -> Result<Recording> {
        let (c, l) = (self.samples.rows(), self.samples.cols());
        let samples = (0..c).map(|i| self.samples.data()[i * l..(i + 1) * l].to_vec()).collect();
        Recording::new(
            channel_names,
            self.sample_rate_hz,
            samples,
            Some(self.label),
            format!("{}@{}", self.source.subject_id, self.source.offset),
        )
    }

    /// Treats a whole labelled recording as one segment.
    pub fn from_recording(rec: &Recording) -> Result<Segment> {
        let label = rec
            .label
            .ok_or_else(|| Error::format("recording", format!("`{}` has no label", rec.subject_id)))?;
        let (subject_id, offset) = match rec.subject_id.rsplit_once('@') {
            Some((s, o)) if o.parse::<usize>().is_ok() => (s.to_string(), o.parse().expect("checked")),
            _ => (rec.subject_id.clone(), 0),
        };
        Ok(Segment {
            samples: Tensor::new([rec.n_channels(), rec.len()], rec.samples.concat())?,
            label,
            source: SegmentSource { subject_id, offset },
            sample_rate_hz: rec.sample_rate_hz,
        })
    }
}
