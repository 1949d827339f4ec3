//! `seizure`: runs the detector pipeline stage by stage inside a run
//! directory named after the configuration hash.

// `!(x > 0.0)` style checks reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::PipelineConfig;
use run::{Result, RunDir};

#[derive(Parser)]
#[command(name = "seizure", version, about = "Spiking seizure detector pipeline")]
struct Cli {
    /// Pipeline configuration (JSON). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` and `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parent of the run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone, Copy)]
struct EngineArgs {
    /// Use the fixed-point engine instead of the float model.
    #[arg(long)]
    quantized: bool,
    /// Seconds between decisions; overrides `stream.decision_period_s`.
    #[arg(long)]
    decision_period: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic EEG corpus.
    Synth,
    /// Select channels, resample and filter every recording.
    Preprocess,
    /// Window into trials, calibrate and run the spike encoder.
    Encode,
    /// Train the float network.
    Train,
    /// Lower to 8-bit weights and check the hardware bounds.
    Quantize,
    /// Re-check the quantized network against the hardware bounds.
    Validate,
    /// Test-split metrics of the float (or quantized) model.
    Eval {
        #[arg(long)]
        quantized: bool,
    },
    /// Replay recordings through the streaming detector.
    Stream {
        #[command(flatten)]
        engine: EngineArgs,
        /// Raw EDF file to replay instead of the run's recordings.
        #[arg(long)]
        recording: Option<PathBuf>,
        /// Seizure sidecar for `--recording`.
        #[arg(long, requires = "recording")]
        annotations: Option<PathBuf>,
    },
    /// Detection latency on the test trials.
    Latency {
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Write plot-ready tables and print the metrics table.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Preprocess => "preprocess",
            Command::Encode => "encode",
            Command::Train => "train",
            Command::Quantize => "quantize",
            Command::Validate => "validate",
            Command::Eval { .. } => "eval",
            Command::Stream { .. } => "stream",
            Command::Latency { .. } => "latency",
            Command::Report => "report",
        }
    }
}

fn engine(cfg: &PipelineConfig, args: EngineArgs) -> commands::Engine {
    let mut stream = cfg.stream;
    if let Some(p) = args.decision_period {
        stream.decision_period_s = p;
    }
    commands::Engine {
        quantized: args.quantized,
        stream,
    }
}

fn execute(cli: &Cli) -> Result<serde_json::Value> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.check()?;
    let run = RunDir::for_config(&cli.out, &cfg);
    run.init(&cfg)?;
    let summary = match &cli.command {
        Command::Synth => commands::synth(&cfg, &run)?,
        Command::Preprocess => commands::preprocess_stage(&cfg, &run)?,
        Command::Encode => commands::encode(&cfg, &run)?,
        Command::Train => commands::train(&cfg, &run)?,
        Command::Quantize => commands::quantize_stage(&cfg, &run)?,
        Command::Validate => commands::validate_stage(&run)?,
        Command::Eval { quantized } => commands::eval(&run, *quantized)?,
        Command::Stream {
            engine: e,
            recording,
            annotations,
        } => commands::stream(
            &cfg,
            &run,
            engine(&cfg, *e),
            recording.as_deref(),
            annotations.as_deref(),
        )?,
        Command::Latency { engine: e } => commands::latency(&cfg, &run, engine(&cfg, *e))?,
        Command::Report => commands::report(&run)?,
    };
    Ok(json!({
        "stage": cli.command.name(),
        "run_dir": run.root.display().to_string(),
        "summary": summary,
    }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
