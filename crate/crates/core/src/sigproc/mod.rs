//! Recordings, preprocessing and trial segmentation.

mod edf;
mod filter;
mod resample;
mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use edf::{parse_edf, read_edf, write_edf, ChannelScaling, EdfHeader, EdfLayout};
pub use filter::{apply_filters, Biquad, FilterBank, FilterSpec};
pub use resample::resample;
pub use synth::{synth_eeg, SynthParams};

#[derive(Debug, Error, PartialEq)]
pub enum SigprocError {
    #[error("truncated EDF header: needed {needed} bytes at offset {offset}, found {available}")]
    TruncatedHeader {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("malformed numeric field `{field}` at byte offset {offset}: {text:?}")]
    MalformedNumericField {
        field: &'static str,
        offset: usize,
        text: String,
    },
    #[error("inconsistent data record count at byte offset {offset}: header declares {declared} records, data holds {actual} bytes for records of {record_bytes} bytes")]
    InconsistentRecordCount {
        offset: usize,
        declared: i64,
        actual: usize,
        record_bytes: usize,
    },
    #[error("unsupported EDF layout: {0}")]
    UnsupportedLayout(String),
    #[error("amplitude {value} uV on channel {channel} sample {sample} outside physical range [{min}, {max}]")]
    UnrepresentableAmplitude {
        channel: usize,
        sample: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("recording has no channels")]
    EmptyRecording,
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid filter band: {0}")]
    InvalidBand(String),
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("invalid resampling target {0} Hz")]
    InvalidTarget(f64),
    #[error("malformed annotation line {line}: {text:?}")]
    MalformedAnnotation { line: usize, text: String },
}

pub type Result<T> = std::result::Result<T, SigprocError>;

/// A seizure interval in seconds from the start of a recording.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeizureAnnotation {
    pub start_s: f64,
    pub end_s: f64,
}

impl SeizureAnnotation {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s >= 0.0 && start_s < end_s) {
            return Err(SigprocError::InvalidRecording(format!(
                "seizure interval [{start_s}, {end_s}] is empty or negative"
            )));
        }
        Ok(Self { start_s, end_s })
    }

    fn overlap(&self, from: f64, to: f64) -> f64 {
        (self.end_s.min(to) - self.start_s.max(from)).max(0.0)
    }
}

/// Multichannel EEG in microvolts.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub channel_labels: Vec<String>,
    pub sample_rate: f64,
    /// One series per channel, all of equal length.
    pub data: Vec<Vec<f64>>,
    pub annotations: Vec<SeizureAnnotation>,
}

impl Recording {
    pub fn new(
        channel_labels: Vec<String>,
        sample_rate: f64,
        data: Vec<Vec<f64>>,
        annotations: Vec<SeizureAnnotation>,
    ) -> Result<Self> {
        let rec = Self {
            channel_labels,
            sample_rate,
            data,
            annotations,
        };
        rec.check()?;
        Ok(rec)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(SigprocError::InvalidRecording(format!(
                "sample rate {} must be positive",
                self.sample_rate
            )));
        }
        if self.channel_labels.len() != self.data.len() {
            return Err(SigprocError::InvalidRecording(format!(
                "{} labels for {} series",
                self.channel_labels.len(),
                self.data.len()
            )));
        }
        let n = self.n_samples();
        if self.data.iter().any(|c| c.len() != n) {
            return Err(SigprocError::InvalidRecording(
                "channel series have unequal length".into(),
            ));
        }
        Ok(())
    }

    pub fn n_channels(&self) -> usize {
        self.data.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate
    }

    /// Fraction of `[from, to)` covered by seizure annotations.
    pub fn ictal_fraction(&self, from: f64, to: f64) -> f64 {
        let covered: f64 = self.annotations.iter().map(|a| a.overlap(from, to)).sum();
        (covered / (to - from)).min(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrialLabel {
    Interictal,
    Ictal,
}

impl TrialLabel {
    /// Class index used by the classifier: interictal 0, ictal 1.
    pub fn class(self) -> usize {
        match self {
            TrialLabel::Interictal => 0,
            TrialLabel::Ictal => 1,
        }
    }

    pub fn from_class(class: usize) -> Self {
        if class == 1 {
            TrialLabel::Ictal
        } else {
            TrialLabel::Interictal
        }
    }
}

/// A fixed-length labelled window cut from a recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    /// channels x samples, microvolts
    pub data: Vec<Vec<f64>>,
    pub label: TrialLabel,
    pub origin_s: f64,
}

pub fn select_channels(recording: &Recording, labels: &[&str]) -> Result<Recording> {
    let mut data = Vec::with_capacity(labels.len());
    for label in labels {
        let idx = recording
            .channel_labels
            .iter()
            .position(|l| l.trim() == *label)
            .ok_or_else(|| SigprocError::UnknownChannel((*label).to_string()))?;
        data.push(recording.data[idx].clone());
    }
    Ok(Recording {
        channel_labels: labels.iter().map(|l| l.to_string()).collect(),
        sample_rate: recording.sample_rate,
        data,
        annotations: recording.annotations.clone(),
    })
}

/// Subtracts the across-channel mean from every sample.
pub fn rereference_average(recording: &Recording) -> Recording {
    let mut out = recording.clone();
    let n_ch = recording.n_channels();
    if n_ch == 0 {
        return out;
    }
    for t in 0..recording.n_samples() {
        let mean = recording.data.iter().map(|c| c[t]).sum::<f64>() / n_ch as f64;
        for c in out.data.iter_mut() {
            c[t] -= mean;
        }
    }
    out
}

/// Removes each channel's mean.
pub fn remove_mean(recording: &Recording) -> Recording {
    let mut out = recording.clone();
    for c in out.data.iter_mut() {
        if c.is_empty() {
            continue;
        }
        let mean = c.iter().sum::<f64>() / c.len() as f64;
        c.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

/// Cuts consecutive non-overlapping windows; the trailing partial window is
/// dropped. A window is ictal when at least `overlap_threshold` of it lies
/// inside seizure annotations (and some part of it does).
pub fn segment_trials(recording: &Recording, window_s: f64, overlap_threshold: f64) -> Vec<Trial> {
    assert!(window_s > 0.0, "window must be positive");
    assert!(
        (0.0..=1.0).contains(&overlap_threshold),
        "overlap threshold must be a fraction"
    );
    let win = (window_s * recording.sample_rate).round() as usize;
    if win == 0 {
        return Vec::new();
    }
    let n_windows = recording.n_samples() / win;
    (0..n_windows)
        .map(|k| {
            let start = k * win;
            let from = start as f64 / recording.sample_rate;
            let to = (start + win) as f64 / recording.sample_rate;
            let fraction = recording.ictal_fraction(from, to);
            let label = if fraction > 0.0 && fraction >= overlap_threshold {
                TrialLabel::Ictal
            } else {
                TrialLabel::Interictal
            };
            Trial {
                data: recording.data.iter().map(|c| c[start..start + win].to_vec()).collect(),
                label,
                origin_s: from,
            }
        })
        .collect()
}

/// Parses a seizure sidecar: one `start_s<TAB>end_s` pair per line. Blank
/// lines and lines starting with `#` are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<SeizureAnnotation>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = || SigprocError::MalformedAnnotation {
            line: i + 1,
            text: line.to_string(),
        };
        let mut parts = trimmed.split('\t');
        let start: f64 = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let end: f64 = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        out.push(SeizureAnnotation::new(start, end).map_err(|_| bad())?);
    }
    Ok(out)
}

pub fn format_annotations(annotations: &[SeizureAnnotation]) -> String {
    annotations
        .iter()
        .map(|a| format!("{}\t{}\n", a.start_s, a.end_s))
        .collect()
}
