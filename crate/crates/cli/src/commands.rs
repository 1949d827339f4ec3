//! One function per subcommand. Each reads its inputs from the run
//! directory, writes its artifacts there and returns a one-line summary.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use seizure_snn::dataset::{build_corpus, preprocess, recording_seed, synth_corpus, EncodedCorpus};
use seizure_snn::encoding::{read_raster_text, write_raster_text};
use seizure_snn::hwmap::{extract_graph, quantize, simulate_quantized, validate, EnergyReport, QuantizedConfig};
use seizure_snn::stream::{measure_latency, replay_with, StreamConfig, StreamEngine, TrialLatency};
use seizure_snn::train::{predict, train_with, write_history, EpochRecord, Metrics, Sample};
use seizure_snn::wavesense::{build_network, readout_decision};
use seizure_snn::{Network, Recording};

use crate::config::{check_stream, PipelineConfig};
use crate::run::{io_err, read_edf_with, read_recordings, write_recordings, CliError, Result, RunDir};

pub const RECORDINGS: &str = "recordings";
pub const PREPROCESSED: &str = "preprocessed";
pub const TRIALS: &str = "encoded/trials.raster";
pub const ENCODER: &str = "encoded/encoder.json";
pub const NETWORK: &str = "model/network.json";
pub const HISTORY: &str = "model/history.jsonl";
pub const QUANTIZED: &str = "model/quantized.json";
pub const VALIDATION: &str = "model/validation.json";

/// Engine selection and decision period for the streaming stages.
#[derive(Clone, Copy, Debug)]
pub struct Engine {
    pub quantized: bool,
    pub stream: StreamConfig,
}

impl Engine {
    fn name(&self) -> &'static str {
        if self.quantized {
            "fixed"
        } else {
            "float"
        }
    }

    /// Artifact stem, e.g. `fixed-0.5s`.
    fn tag(&self) -> String {
        format!("{}-{}s", self.name(), self.stream.decision_period_s)
    }
}

#[derive(Serialize, Deserialize)]
struct EncoderArtifact {
    encoder_steps: Vec<f64>,
    cap: Option<u32>,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
}

pub fn synth(cfg: &PipelineConfig, run: &RunDir) -> Result<Value> {
    let recs: Vec<(String, Recording)> = synth_corpus(&cfg.data.synth, cfg.seed)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| (format!("rec_{i:04}"), r))
        .collect();
    write_recordings(run, RECORDINGS, &recs)?;
    Ok(json!({
        "recordings": recs.len(),
        "first_seed": recording_seed(cfg.seed, 0),
    }))
}

fn source_recordings(cfg: &PipelineConfig, run: &RunDir) -> Result<Vec<(String, Recording)>> {
    if cfg.data.edf.is_empty() {
        return read_recordings(run, RECORDINGS, "synth");
    }
    cfg.data
        .edf
        .iter()
        .map(|src| {
            let ann = match &src.annotations {
                Some(p) => Some(fs::read_to_string(p).map_err(io_err(p))?),
                None => None,
            };
            let name = src
                .path
                .file_stem()
                .map_or_else(|| "recording".to_string(), |s| s.to_string_lossy().into_owned());
            Ok((name, read_edf_with(&src.path, ann.as_deref())?))
        })
        .collect()
}

pub fn preprocess_stage(cfg: &PipelineConfig, run: &RunDir) -> Result<Value> {
    let recs = source_recordings(cfg, run)?
        .into_iter()
        .map(|(name, r)| Ok((name, preprocess(&r, &cfg.preprocess)?)))
        .collect::<Result<Vec<_>>>()?;
    write_recordings(run, PREPROCESSED, &recs)?;
    Ok(json!({ "recordings": recs.len(), "sample_rate": cfg.preprocess.target_hz }))
}

fn corpus(cfg: &PipelineConfig, run: &RunDir) -> Result<EncodedCorpus> {
    let recs: Vec<Recording> = read_recordings(run, PREPROCESSED, "preprocess")?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    Ok(build_corpus(
        &recs,
        &cfg.encode,
        cfg.train.train_fraction,
        cfg.train.seed,
    )?)
}

pub fn encode(cfg: &PipelineConfig, run: &RunDir) -> Result<Value> {
    let c = corpus(cfg, run)?;
    let test: std::collections::HashSet<usize> = c.test_idx.iter().copied().collect();
    let mut text = Vec::new();
    for (i, (s, t)) in c.samples.iter().zip(&c.trials).enumerate() {
        let meta = BTreeMap::from([
            ("label".to_string(), s.label.to_string()),
            ("origin_s".to_string(), t.origin_s.to_string()),
            (
                "split".to_string(),
                if test.contains(&i) { "test" } else { "train" }.to_string(),
            ),
        ]);
        write_raster_text(&s.raster, &meta, &mut text).expect("writing to memory");
    }
    run.write(TRIALS, text)?;
    run.write_json(
        ENCODER,
        &EncoderArtifact {
            encoder_steps: c.encoder_steps.clone(),
            cap: cfg.encode.cap,
            train_idx: c.train_idx.clone(),
            test_idx: c.test_idx.clone(),
        },
    )?;
    let ictal = c.samples.iter().filter(|s| s.label == 1).count();
    Ok(json!({
        "trials": c.samples.len(),
        "ictal": ictal,
        "test": c.test_idx.len(),
        "encoder_steps": c.encoder_steps,
    }))
}

/// Samples in corpus order and the indices of the test split.
fn load_samples(run: &RunDir) -> Result<(Vec<Sample>, Vec<usize>)> {
    let path = run.require(TRIALS, "encode")?;
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    let mut samples = Vec::new();
    let mut test = Vec::new();
    for (i, (raster, meta)) in read_raster_text(BufReader::new(file))?.into_iter().enumerate() {
        let label = meta
            .get("label")
            .and_then(|l| l.parse().ok())
            .ok_or_else(|| CliError::Pipeline(format!("trial {i} in {} has no label", path.display())))?;
        if meta.get("split").map(String::as_str) == Some("test") {
            test.push(i);
        }
        samples.push(Sample { raster, label });
    }
    Ok((samples, test))
}

fn load_encoder(run: &RunDir) -> Result<EncoderArtifact> {
    Ok(serde_json::from_str(&run.read_string(ENCODER, "encode")?)?)
}

pub fn train(cfg: &PipelineConfig, run: &RunDir) -> Result<Value> {
    let (samples, _) = load_samples(run)?;
    let enc = load_encoder(run)?;
    let mut net = build_network(&cfg.network, cfg.seed)?;
    net.encoder_steps = enc.encoder_steps;
    net.encoder_cap = enc.cap;
    let (net, history) = train_with(&net, &samples, &cfg.train, |r| {
        log::info!("epoch {} loss {:.4} test accuracy {:?}", r.epoch, r.loss, r.accuracy);
    })?;
    run.write(NETWORK, net.to_json()?)?;
    let mut lines = Vec::new();
    write_history(&history, &mut lines).expect("writing to memory");
    run.write(HISTORY, lines)?;
    let last = history.last().expect("at least one epoch");
    Ok(json!({
        "epochs": history.len(),
        "loss": last.loss,
        "accuracy": last.accuracy,
        "weights": net.weight_count(),
    }))
}

fn load_network(run: &RunDir) -> Result<Network> {
    Ok(Network::from_json(&run.read_string(NETWORK, "train")?)?)
}

fn load_quantized(run: &RunDir) -> Result<QuantizedConfig> {
    Ok(QuantizedConfig::from_json(&run.read_string(QUANTIZED, "quantize")?)?)
}

fn validation_summary(q: &QuantizedConfig) -> Result<Value> {
    let violations = validate(q);
    let summary = json!({
        "weights": q.weight_count(),
        "hidden": q.hidden_count(),
        "violations": violations,
    });
    if violations.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::ValidationFailed(violations))
    }
}

/// Lowers the trained network; nothing is written when it does not fit.
pub fn quantize_stage(cfg: &PipelineConfig, run: &RunDir) -> Result<Value> {
    let net = load_network(run)?;
    let (q, warnings) = quantize(&extract_graph(&net), cfg.quantize.scale_mode);
    for w in &warnings {
        log::warn!("{w:?}");
    }
    let summary = validation_summary(&q)?;
    run.write(QUANTIZED, q.to_json()?)?;
    run.write_json(VALIDATION, &summary)?;
    Ok(summary)
}

pub fn validate_stage(run: &RunDir) -> Result<Value> {
    let q = load_quantized(run)?;
    let summary = validation_summary(&q);
    if let Ok(s) = &summary {
        run.write_json(VALIDATION, s)?;
    }
    summary
}

#[derive(Serialize, Deserialize)]
struct EvalArtifact {
    engine: String,
    trials: usize,
    metrics: Metrics,
    /// Share of test trials where both engines decide alike.
    agreement: Option<f64>,
    energy: Option<EnergyReport>,
}

pub fn eval(run: &RunDir, quantized: bool) -> Result<Value> {
    let (samples, test_idx) = load_samples(run)?;
    let test: Vec<&Sample> = test_idx.iter().map(|&i| &samples[i]).collect();
    let actual: Vec<usize> = test.iter().map(|s| s.label).collect();
    let artifact = if quantized {
        let q = load_quantized(run)?;
        let mut decisions = Vec::with_capacity(test.len());
        let mut reports = Vec::with_capacity(test.len());
        for s in &test {
            let (trace, energy) = simulate_quantized(&q, &s.raster)?;
            decisions.push(readout_decision(&trace));
            reports.push(energy);
        }
        let agreement = match run.require(NETWORK, "train") {
            Ok(_) => {
                let float = predict(&load_network(run)?, &test)?;
                let same = float.iter().zip(&decisions).filter(|(a, b)| a == b).count();
                Some(same as f64 / test.len().max(1) as f64)
            }
            Err(_) => None,
        };
        EvalArtifact {
            engine: "fixed".into(),
            trials: test.len(),
            metrics: Metrics::from_predictions(&decisions, &actual),
            agreement,
            energy: Some(EnergyReport::merge(&reports)),
        }
    } else {
        let predicted = predict(&load_network(run)?, &test)?;
        EvalArtifact {
            engine: "float".into(),
            trials: test.len(),
            metrics: Metrics::from_predictions(&predicted, &actual),
            agreement: None,
            energy: None,
        }
    };
    run.write_json(&format!("eval/{}.json", artifact.engine), &artifact)?;
    Ok(serde_json::to_value(&artifact)?)
}

fn engine_factory(run: &RunDir, engine: Engine) -> Result<impl Fn() -> seizure_snn::stream::Result<StreamEngine>> {
    enum Model {
        Float(Box<Network>),
        Fixed(Box<QuantizedConfig>),
    }
    let model = if engine.quantized {
        Model::Fixed(Box::new(load_quantized(run)?))
    } else {
        Model::Float(Box::new(load_network(run)?))
    };
    let stream = engine.stream;
    Ok(move || match &model {
        Model::Float(n) => StreamEngine::float(n, &stream),
        Model::Fixed(q) => StreamEngine::fixed(q, &stream),
    })
}

/// Replays either `recording` (raw EDF, preprocessed here) or every
/// preprocessed recording of the run. Alarm transitions go to stdout as
/// they happen.
pub fn stream(
    cfg: &PipelineConfig,
    run: &RunDir,
    engine: Engine,
    recording: Option<&Path>,
    annotations: Option<&Path>,
) -> Result<Value> {
    check_stream(&engine.stream, cfg.dt())?;
    let recs = match recording {
        Some(p) => {
            let ann = match annotations {
                Some(a) => Some(fs::read_to_string(a).map_err(io_err(a))?),
                None => None,
            };
            let raw = read_edf_with(p, ann.as_deref())?;
            let name = p
                .file_stem()
                .map_or("recording".into(), |s| s.to_string_lossy().into_owned());
            vec![(name, preprocess(&raw, &cfg.preprocess)?)]
        }
        None => read_recordings(run, PREPROCESSED, "preprocess")?,
    };
    let factory = engine_factory(run, engine)?;
    let mut intervals = Vec::new();
    for (name, rec) in &recs {
        let mut eng = factory()?;
        let timeline = replay_with(rec, &mut eng, |e| {
            println!("{}", json!({ "recording": name, "time_s": e.time_s, "alarm": e.alarm }));
        })?;
        let mut lines = Vec::new();
        timeline.write_jsonl(&mut lines).expect("writing to memory");
        run.write(&format!("stream/{}/{name}.jsonl", engine.tag()), lines)?;
        intervals.push(json!({ "recording": name, "alarms": timeline.alarm_intervals() }));
    }
    Ok(json!({ "engine": engine.tag(), "recordings": intervals }))
}

pub fn latency(cfg: &PipelineConfig, run: &RunDir, engine: Engine) -> Result<Value> {
    check_stream(&engine.stream, cfg.dt())?;
    let c = corpus(cfg, run)?;
    let trials: Vec<_> = c.test_trials().into_iter().cloned().collect();
    let stat = measure_latency(engine_factory(run, engine)?, &trials)?;
    let mut lines = Vec::new();
    for t in &stat.trials {
        serde_json::to_writer(&mut lines, t)?;
        lines.push(b'\n');
    }
    run.write(&format!("latency/{}.jsonl", engine.tag()), lines)?;
    let summary = json!({
        "engine": engine.tag(),
        "trials": stat.trials.len(),
        "median_s": stat.median_s,
        "detection_rate": stat.detection_rate,
        "false_positive_rate": stat.false_positive_rate,
    });
    run.write_json(&format!("latency/{}.summary.json", engine.tag()), &summary)?;
    Ok(summary)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x:.4}"))
}

fn jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    fs::read_to_string(path)
        .map_err(io_err(path))?
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<std::path::PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    files.sort();
    Ok(files)
}

/// Tab-separated tables under `report/`: the training curve, test metrics
/// per engine, latency scatters and alarm timelines. Prints the metrics
/// table.
pub fn report(run: &RunDir) -> Result<Value> {
    let mut written = Vec::new();

    let history: Vec<EpochRecord> = jsonl(&run.require(HISTORY, "train")?)?;
    let mut curve = String::from("epoch\tloss\ttrain_accuracy\taccuracy\tsensitivity\tspecificity\tf1\n");
    for r in &history {
        curve.push_str(&format!(
            "{}\t{:.6}\t{:.4}\t{}\t{}\t{}\t{}\n",
            r.epoch,
            r.loss,
            r.train_accuracy,
            opt(r.accuracy),
            opt(r.sensitivity),
            opt(r.specificity),
            opt(r.f1)
        ));
    }
    run.write("report/training_curve.tsv", curve)?;
    written.push("report/training_curve.tsv".to_string());

    let mut metrics =
        String::from("engine\ttrials\taccuracy\tsensitivity\tspecificity\tf1\tagreement\tsynops_per_inference\n");
    for path in sorted_files(&run.path("eval"), "json")? {
        let e: EvalArtifact = serde_json::from_str(&fs::read_to_string(&path).map_err(io_err(&path))?)?;
        metrics.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.engine,
            e.trials,
            opt(e.metrics.accuracy),
            opt(e.metrics.sensitivity),
            opt(e.metrics.specificity),
            opt(e.metrics.f1),
            opt(e.agreement),
            e.energy
                .map_or("na".to_string(), |r| r.synops_per_inference.to_string())
        ));
    }
    run.write("report/metrics.tsv", &metrics)?;
    written.push("report/metrics.tsv".to_string());

    for path in sorted_files(&run.path("latency"), "jsonl")? {
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        let trials: Vec<TrialLatency> = jsonl(&path)?;
        let mut scatter = String::from("trial\tlabel\tlatency_s\tdetected\n");
        for (i, t) in trials.iter().enumerate() {
            scatter.push_str(&format!(
                "{i}\t{}\t{}\t{}\n",
                t.label,
                t.latency_s.map_or("na".to_string(), |x| x.to_string()),
                t.latency_s.is_some()
            ));
        }
        let rel = format!("report/latency_{stem}.tsv");
        run.write(&rel, scatter)?;
        written.push(rel);
    }

    for engine_dir in sorted_dirs(&run.path("stream"))? {
        let tag = engine_dir.file_name().unwrap().to_string_lossy().into_owned();
        for path in sorted_files(&engine_dir, "jsonl")? {
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            let entries: Vec<seizure_snn::stream::TimelineEntry> = jsonl(&path)?;
            let mut table = String::from("time_s\tdecision\talarm\n");
            for e in &entries {
                table.push_str(&format!(
                    "{}\t{}\t{}\n",
                    e.time_s,
                    e.decision,
                    serde_json::to_value(e.alarm)?.as_str().unwrap_or_default()
                ));
            }
            let rel = format!("report/timeline_{tag}_{stem}.tsv");
            run.write(&rel, table)?;
            written.push(rel);
        }
    }

    print!("{metrics}");
    Ok(json!({ "written": written }))
}

fn sorted_dirs(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut dirs: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}
