//! Pipeline configuration: one JSON document, every stage's settings with
//! defaults filled in.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use seizure_snn::dataset::{CorpusParams, EncodeConfig, PreprocessConfig};
use seizure_snn::hwmap::ScaleMode;
use seizure_snn::stream::{period_steps, StreamConfig};
use seizure_snn::train::TrainConfig;
use seizure_snn::WaveSenseConfig;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config version {0} is not supported (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// An EDF recording with an optional seizure sidecar (`start<TAB>end` per
/// line, seconds).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdfSource {
    pub path: PathBuf,
    #[serde(default)]
    pub annotations: Option<PathBuf>,
}

/// Where recordings come from. A non-empty `edf` list replaces the
/// synthetic corpus as input to `preprocess`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub synth: CorpusParams,
    pub edf: Vec<EdfSource>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizeConfig {
    pub scale_mode: ScaleMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    /// Seeds the synthetic corpus and weight initialization.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub encode: EncodeConfig,
    #[serde(default)]
    pub network: WaveSenseConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub quantize: QuantizeConfig,
    #[serde(default)]
    pub stream: StreamConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            data: DataConfig::default(),
            preprocess: PreprocessConfig::default(),
            encode: EncodeConfig::default(),
            network: WaveSenseConfig::default(),
            train: TrainConfig::default(),
            quantize: QuantizeConfig::default(),
            stream: StreamConfig::default(),
        }
    }
}

fn invalid(msg: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid(msg.to_string())
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads `path`, or the defaults when no path is given.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_json(&text)
            }
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of the compact JSON form; names the run directory.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&compact))
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.preprocess.target_hz
    }

    /// EEG channels reaching the encoder.
    pub fn n_eeg_channels(&self) -> Option<usize> {
        if !self.preprocess.channels.is_empty() {
            Some(self.preprocess.channels.len())
        } else if self.data.edf.is_empty() {
            Some(self.data.synth.n_channels)
        } else {
            None
        }
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(ConfigError::Version(self.version));
        }
        if self.data.edf.is_empty() {
            self.data.synth.synth_params().map_err(invalid)?;
        }
        let fs = self.preprocess.target_hz;
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(invalid(format!("preprocess.target_hz {fs} must be positive")));
        }
        self.preprocess.filter.check(fs).map_err(invalid)?;
        let e = &self.encode;
        if !(e.window_s > 0.0) || !(0.0..=1.0).contains(&e.overlap_threshold) || !(e.iqr_fraction > 0.0) {
            return Err(invalid(format!(
                "encode: window_s {} must be positive, overlap_threshold {} in [0, 1], iqr_fraction {} positive",
                e.window_s, e.overlap_threshold, e.iqr_fraction
            )));
        }
        self.network.check().map_err(invalid)?;
        if (self.network.lif.dt * fs - 1.0).abs() > 1e-9 {
            return Err(invalid(format!(
                "network.lif.dt {} does not match preprocess.target_hz {fs}",
                self.network.lif.dt
            )));
        }
        if let Some(ch) = self.n_eeg_channels() {
            if self.network.n_input_channels != 2 * ch {
                return Err(invalid(format!(
                    "network.n_input_channels is {} but {ch} EEG channels give {} spike channels",
                    self.network.n_input_channels,
                    2 * ch
                )));
            }
        }
        self.train.check().map_err(invalid)?;
        check_stream(&self.stream, self.dt())?;
        Ok(())
    }
}

pub fn check_stream(stream: &StreamConfig, dt: f64) -> Result<(), ConfigError> {
    period_steps(stream.decision_period_s, dt).map_err(invalid)?;
    if stream.context_periods == 0 {
        return Err(invalid("stream.context_periods must be at least 1"));
    }
    Ok(())
}
