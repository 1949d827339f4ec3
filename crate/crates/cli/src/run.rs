//! Run directory layout and artifact I/O.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use seizure_snn::hwmap::Violation;
use seizure_snn::sigproc::{format_annotations, parse_annotations, parse_edf, write_edf, ChannelScaling, EdfLayout};
use seizure_snn::Recording;

use crate::config::{ConfigError, PipelineConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("missing artifact {}: run `seizure {stage}` first", path.display())]
    ArtifactMissing { path: PathBuf, stage: &'static str },
    #[error("{} hardware bound(s) violated: {}", .0.len(), join_violations(.0))]
    ValidationFailed(Vec<Violation>),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Pipeline(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "ConfigError",
            CliError::ArtifactMissing { .. } => "ArtifactMissing",
            CliError::ValidationFailed(_) => "ValidationFailed",
            CliError::Io { .. } => "IoError",
            CliError::Pipeline(_) => "PipelineError",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::ArtifactMissing { .. } => 3,
            CliError::ValidationFailed(_) => 4,
            CliError::Io { .. } | CliError::Pipeline(_) => 1,
        }
    }

    /// The single JSON line printed on failure.
    pub fn to_json_line(&self) -> String {
        let mut v = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            CliError::ArtifactMissing { path, stage } => {
                v["path"] = path.display().to_string().into();
                v["stage"] = (*stage).into();
            }
            CliError::ValidationFailed(violations) => {
                v["violations"] = serde_json::to_value(violations).expect("violations serialize");
            }
            _ => {}
        }
        v.to_string()
    }
}

macro_rules! pipeline_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Pipeline(e.to_string())
            }
        }
    )*};
}

pipeline_error!(
    seizure_snn::dataset::DatasetError,
    seizure_snn::encoding::EncodingError,
    seizure_snn::hwmap::HwMapError,
    seizure_snn::sigproc::SigprocError,
    seizure_snn::stream::StreamError,
    seizure_snn::train::TrainError,
    seizure_snn::wavesense::WaveSenseError,
    serde_json::Error
);

pub type Result<T> = std::result::Result<T, CliError>;

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Every artifact lives under `<out>/<first 16 hex digits of the config hash>`.
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn for_config(out: &Path, cfg: &PipelineConfig) -> Self {
        Self {
            root: out.join(&cfg.hash()[..16]),
        }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// `rel`, or [`CliError::ArtifactMissing`] naming the stage that makes it.
    pub fn require(&self, rel: &str, stage: &'static str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::ArtifactMissing { path: p, stage })
        }
    }

    pub fn write(&self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(&p, bytes).map_err(io_err(&p))?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(rel, s)
    }

    pub fn read_string(&self, rel: &str, stage: &'static str) -> Result<String> {
        let p = self.require(rel, stage)?;
        fs::read_to_string(&p).map_err(io_err(&p))
    }

    /// Writes the materialized config the first time the run is used.
    pub fn init(&self, cfg: &PipelineConfig) -> Result<()> {
        if !self.path("config.json").exists() {
            self.write("config.json", cfg.to_json())?;
        }
        Ok(())
    }
}

/// Recordings of one stage: `<dir>/manifest.txt` lists names, each with
/// `<name>.edf` and `<name>.seizures.tsv`.
pub fn write_recordings(run: &RunDir, dir: &str, recs: &[(String, Recording)]) -> Result<()> {
    let mut manifest = String::new();
    for (name, rec) in recs {
        run.write(&format!("{dir}/{name}.edf"), edf_bytes(rec)?)?;
        run.write(
            &format!("{dir}/{name}.seizures.tsv"),
            format_annotations(&rec.annotations),
        )?;
        manifest.push_str(name);
        manifest.push('\n');
    }
    run.write(&format!("{dir}/manifest.txt"), manifest)?;
    Ok(())
}

pub fn read_recordings(run: &RunDir, dir: &str, stage: &'static str) -> Result<Vec<(String, Recording)>> {
    let manifest = run.read_string(&format!("{dir}/manifest.txt"), stage)?;
    manifest
        .lines()
        .filter(|l| !l.is_empty())
        .map(|name| {
            let edf = run.require(&format!("{dir}/{name}.edf"), stage)?;
            let ann = run.read_string(&format!("{dir}/{name}.seizures.tsv"), stage)?;
            Ok((name.to_string(), read_edf_with(&edf, Some(&ann))?))
        })
        .collect()
}

pub fn read_edf_with(path: &Path, annotations: Option<&str>) -> Result<Recording> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut rec = parse_edf(&bytes)?;
    if let Some(text) = annotations {
        rec.annotations = parse_annotations(text)?;
    }
    Ok(rec)
}

/// EDF with one-second records and a symmetric physical range just wide
/// enough for each channel. A trailing partial second is dropped.
pub fn edf_bytes(rec: &Recording) -> Result<Vec<u8>> {
    let spr = rec.sample_rate.round() as usize;
    let whole = rec.n_samples() - rec.n_samples() % spr.max(1);
    if whole < rec.n_samples() {
        log::warn!(
            "dropping {} trailing samples that do not fill a one-second EDF record",
            rec.n_samples() - whole
        );
    }
    let mut rec = rec.clone();
    for ch in &mut rec.data {
        ch.truncate(whole);
    }
    let scaling = rec
        .data
        .iter()
        .map(|ch| {
            let peak = ch.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            ChannelScaling::symmetric(peak.ceil() + 1.0)
        })
        .collect();
    Ok(write_edf(
        &rec,
        &EdfLayout {
            record_duration_s: 1.0,
            scaling,
        },
    )?)
}
