//! Corpus assembly: synthetic recordings, preprocessing, windowing, encoder
//! step calibration and spike encoding of labelled trials.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{encode_with, EncodingError};
use crate::sigproc::{
    apply_filters, rereference_average, resample, segment_trials, select_channels, synth_eeg, FilterSpec, Recording,
    SeizureAnnotation, SigprocError, SynthParams, Trial,
};
use crate::train::{split_train_test, Sample};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Sigproc(#[from] SigprocError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error("invalid corpus parameters: {0}")]
    InvalidParams(String),
    #[error("no trials to calibrate the encoder on")]
    NoTrials,
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Synthetic corpus: every recording holds one seizure, so windowing yields
/// an equal number of ictal and interictal trials when the seizure covers
/// the second half.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusParams {
    pub n_recordings: usize,
    pub duration_s: f64,
    pub seizure_start_s: f64,
    pub seizure_end_s: f64,
    pub n_channels: usize,
    pub sample_rate: f64,
    pub background_rms_uv: f64,
    pub ictal_amplitude_ratio: f64,
    pub line_noise_uv: f64,
}

impl Default for CorpusParams {
    fn default() -> Self {
        let s = SynthParams::default();
        Self {
            n_recordings: 100,
            duration_s: 20.0,
            seizure_start_s: 10.0,
            seizure_end_s: 20.0,
            n_channels: 2,
            sample_rate: s.sample_rate,
            background_rms_uv: s.background_rms_uv,
            ictal_amplitude_ratio: s.ictal_amplitude_ratio,
            line_noise_uv: s.line_noise_uv,
        }
    }
}

impl CorpusParams {
    pub fn synth_params(&self) -> Result<SynthParams> {
        if self.n_recordings == 0 {
            return Err(DatasetError::InvalidParams("n_recordings must be positive".into()));
        }
        if !(self.seizure_end_s <= self.duration_s) {
            return Err(DatasetError::InvalidParams(format!(
                "seizure ends at {} s after the {} s recording",
                self.seizure_end_s, self.duration_s
            )));
        }
        Ok(SynthParams {
            duration_s: self.duration_s,
            n_channels: self.n_channels,
            sample_rate: self.sample_rate,
            seizures: vec![SeizureAnnotation::new(self.seizure_start_s, self.seizure_end_s)?],
            background_rms_uv: self.background_rms_uv,
            ictal_amplitude_ratio: self.ictal_amplitude_ratio,
            line_noise_uv: self.line_noise_uv,
        })
    }
}

/// Seed of recording `index` in a corpus generated from `seed`.
pub fn recording_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(index as u64)
}

pub fn synth_corpus(params: &CorpusParams, seed: u64) -> Result<Vec<Recording>> {
    let sp = params.synth_params()?;
    Ok((0..params.n_recordings)
        .map(|i| synth_eeg(&sp, recording_seed(seed, i)))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Channels to keep; empty keeps all.
    pub channels: Vec<String>,
    pub target_hz: f64,
    pub filter: FilterSpec,
    pub rereference: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            channels: vec!["C3-P3".into(), "C4-P4".into()],
            target_hz: 256.0,
            filter: FilterSpec::default(),
            rereference: false,
        }
    }
}

/// Channel selection, optional common-average reference, resampling and
/// the causal filter cascade, in that order.
pub fn preprocess(recording: &Recording, cfg: &PreprocessConfig) -> Result<Recording> {
    let mut rec = if cfg.channels.is_empty() {
        recording.clone()
    } else {
        let labels: Vec<&str> = cfg.channels.iter().map(String::as_str).collect();
        select_channels(recording, &labels)?
    };
    if cfg.rereference {
        rec = rereference_average(&rec);
    }
    let rec = resample(&rec, cfg.target_hz)?;
    Ok(apply_filters(&rec, &cfg.filter)?)
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-channel encoder step: `fraction` times the interquartile range of
/// all samples in `trials`. A flat channel falls back to step 1.
pub fn iqr_steps(trials: &[&Trial], fraction: f64) -> Result<Vec<f64>> {
    let first = trials.first().ok_or(DatasetError::NoTrials)?;
    Ok((0..first.data.len())
        .map(|c| {
            let mut xs: Vec<f64> = trials.iter().flat_map(|t| t.data[c].iter().copied()).collect();
            xs.sort_by(f64::total_cmp);
            let iqr = quantile(&xs, 0.75) - quantile(&xs, 0.25);
            if iqr > 0.0 && iqr.is_finite() {
                fraction * iqr
            } else {
                1.0
            }
        })
        .collect())
}

pub fn encode_trials(trials: &[Trial], steps: &[f64], cap: Option<u32>, dt: f64) -> Result<Vec<Sample>> {
    trials
        .iter()
        .map(|t| {
            Ok(Sample {
                raster: encode_with(&t.data, steps, cap, dt)?,
                label: t.label.class(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodeConfig {
    pub window_s: f64,
    pub overlap_threshold: f64,
    /// Step as a fraction of the training-split interquartile range.
    pub iqr_fraction: f64,
    pub cap: Option<u32>,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        Self {
            window_s: 5.0,
            overlap_threshold: 0.5,
            iqr_fraction: 0.1,
            cap: Some(15),
        }
    }
}

/// Encoded trials with the calibration that produced them.
#[derive(Clone, Debug)]
pub struct EncodedCorpus {
    pub trials: Vec<Trial>,
    pub samples: Vec<Sample>,
    pub encoder_steps: Vec<f64>,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl EncodedCorpus {
    pub fn test_trials(&self) -> Vec<&Trial> {
        self.test_idx.iter().map(|&i| &self.trials[i]).collect()
    }

    pub fn test_samples(&self) -> Vec<&Sample> {
        self.test_idx.iter().map(|&i| &self.samples[i]).collect()
    }
}

/// Windows preprocessed recordings, calibrates the encoder on the training
/// part of the same stratified split training will use, and encodes every
/// trial.
pub fn build_corpus(
    recordings: &[Recording],
    cfg: &EncodeConfig,
    train_fraction: f64,
    split_seed: u64,
) -> Result<EncodedCorpus> {
    if !(cfg.window_s > 0.0) || !(0.0..=1.0).contains(&cfg.overlap_threshold) {
        return Err(DatasetError::InvalidParams(format!(
            "window {} s / overlap threshold {}",
            cfg.window_s, cfg.overlap_threshold
        )));
    }
    let trials: Vec<Trial> = recordings
        .iter()
        .flat_map(|r| segment_trials(r, cfg.window_s, cfg.overlap_threshold))
        .collect();
    let dt = 1.0 / recordings.first().ok_or(DatasetError::NoTrials)?.sample_rate;
    let labels: Vec<usize> = trials.iter().map(|t| t.label.class()).collect();
    let (train_idx, test_idx) = split_train_test(&labels, train_fraction, split_seed);
    let train_trials: Vec<&Trial> = train_idx.iter().map(|&i| &trials[i]).collect();
    let encoder_steps = iqr_steps(&train_trials, cfg.iqr_fraction)?;
    let samples = encode_trials(&trials, &encoder_steps, cfg.cap, dt)?;
    Ok(EncodedCorpus {
        trials,
        samples,
        encoder_steps,
        train_idx,
        test_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigproc::TrialLabel;

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.25), 2.0);
        assert_eq!(quantile(&xs, 0.75), 4.0);
        assert_eq!(quantile(&[0.0, 1.0], 0.25), 0.25);
    }

    #[test]
    fn iqr_step_per_channel() {
        let t = Trial {
            data: vec![vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![0.0; 5]],
            label: TrialLabel::Ictal,
            origin_s: 0.0,
        };
        let steps = iqr_steps(&[&t], 0.1).unwrap();
        assert!((steps[0] - 0.2).abs() < 1e-12);
        assert_eq!(steps[1], 1.0);
    }

    #[test]
    fn small_corpus_is_balanced() {
        let params = CorpusParams {
            n_recordings: 3,
            ..CorpusParams::default()
        };
        let recs: Vec<Recording> = synth_corpus(&params, 1)
            .unwrap()
            .iter()
            .map(|r| preprocess(r, &PreprocessConfig::default()).unwrap())
            .collect();
        let c = build_corpus(&recs, &EncodeConfig::default(), 0.8, 0).unwrap();
        assert_eq!(c.samples.len(), 12);
        assert_eq!(c.samples.iter().filter(|s| s.label == 1).count(), 6);
        assert_eq!(c.samples[0].raster.n_channels(), 4);
        assert_eq!(c.samples[0].raster.n_timesteps(), 1280);
        assert_eq!(c.train_idx.len() + c.test_idx.len(), 12);
    }

    #[test]
    fn corpus_is_seed_deterministic() {
        let params = CorpusParams {
            n_recordings: 2,
            duration_s: 10.0,
            seizure_start_s: 5.0,
            seizure_end_s: 10.0,
            ..CorpusParams::default()
        };
        assert_eq!(synth_corpus(&params, 7).unwrap(), synth_corpus(&params, 7).unwrap());
        assert_ne!(synth_corpus(&params, 7).unwrap(), synth_corpus(&params, 8).unwrap());
    }
}
