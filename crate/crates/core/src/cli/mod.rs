//! Batch command-line front end.

pub mod commands;
pub mod config;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};

pub use commands::{ModelArtifact, ProfileArtifact};
pub use config::RunConfig;

use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "nids-ood", version, about = "NetFlow classifier with out-of-distribution detectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank features on one or two raw CSVs and pick the final set.
    SelectFeatures(Common),
    /// Train the configured model variants.
    Train(Common),
    /// Fit and calibrate every detector on every trained model.
    Calibrate(Common),
    /// Score a CSV with saved models and profiles.
    Detect {
        #[command(flatten)]
        common: Common,
        /// CSV to score; overrides `detect.input`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score held-out traffic and write metric reports.
    Evaluate(Common),
    /// Write 2-D embeddings and a decision grid as CSV.
    ExportEmbeddings(Common),
    /// Write a Gaussian-blob dataset in the encoded CSV layout.
    GenerateSynthetic {
        /// Synthetic spec (TOML).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SelectFeatures(_) => "select-features",
            Command::Train(_) => "train",
            Command::Calibrate(_) => "calibrate",
            Command::Detect { .. } => "detect",
            Command::Evaluate(_) => "evaluate",
            Command::ExportEmbeddings(_) => "export-embeddings",
            Command::GenerateSynthetic { .. } => "generate-synthetic",
        }
    }
}

/// Process exit code for an error: 3 for artifact incompatibility, 2 for
/// configuration or input problems, 1 for failures during computation.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Compatibility(_) | Error::Version { .. } => 3,
        Error::NonFiniteLoss { .. } | Error::Fit(_) | Error::Sampler(_) => 1,
        _ => 2,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Config(_) => "config",
        Error::Dimension { .. } => "dimension",
        Error::Argument(_) => "argument",
        Error::Split(_) => "split",
        Error::Sampler(_) => "sampler",
        Error::NonFiniteLoss { .. } => "non-finite-loss",
        Error::Fit(_) => "fit",
        Error::Calibration(_) => "calibration",
        Error::Tuning(_) => "tuning",
        Error::Assembly(_) => "assembly",
        Error::Ensemble(_) => "ensemble",
        Error::Load(_) => "load",
        Error::Parse(_) => "parse",
        Error::Version { .. } => "version",
        Error::Compatibility(_) => "compatibility",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

/// The single JSON line written to stderr on failure.
pub fn error_line(command: &str, err: &Error) -> String {
    serde_json::json!({
        "error": error_kind(err),
        "code": exit_code(err),
        "command": command,
        "message": err.to_string(),
    })
    .to_string()
}

fn load_config(common: &Common) -> Result<(RunConfig, PathBuf)> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = Some(out.clone());
    }
    let out = cfg
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory (set out_dir or pass --out)".into()))?;
    Ok((cfg, out))
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Appends a timing line to `run-log.jsonl`, the only non-deterministic output.
fn append_sidecar(out: &Path, command: &str, started: f64, ok: bool) {
    let line = serde_json::json!({
        "command": command,
        "started_unix": started,
        "finished_unix": unix_now(),
        "ok": ok,
    });
    let write = || -> std::io::Result<()> {
        std::fs::create_dir_all(out)?;
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(out.join("run-log.jsonl"))?;
        writeln!(f, "{line}")
    };
    if let Err(e) = write() {
        log::warn!("cannot write run log: {e}");
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let started = unix_now();
    let name = cli.command.name();
    let (result, out) = match cli.command {
        Command::GenerateSynthetic { spec, out } => {
            let r = commands::cmd_generate_synthetic(&spec, &out).map(|(a, b)| {
                println!("wrote {} and {}", a.display(), b.display());
            });
            (r, Some(out))
        }
        Command::SelectFeatures(ref c)
        | Command::Train(ref c)
        | Command::Calibrate(ref c)
        | Command::Evaluate(ref c)
        | Command::ExportEmbeddings(ref c)
        | Command::Detect { common: ref c, .. } => {
            let (mut cfg, out) = load_config(c)?;
            if let Command::Detect { input: Some(input), .. } = &cli.command {
                cfg.detect.input = Some(input.clone());
            }
            let r = dispatch(&cli.command, &cfg, &out);
            (r, Some(out))
        }
    };
    if let Some(out) = out {
        append_sidecar(&out, name, started, result.is_ok());
    }
    result
}

fn dispatch(command: &Command, cfg: &RunConfig, out: &Path) -> Result<()> {
    match command {
        Command::SelectFeatures(_) => {
            let a = commands::cmd_select_features(cfg, out)?;
            println!("selected {} features: {}", a.selected.len(), a.selected.join(", "));
        }
        Command::Train(_) => {
            for a in commands::cmd_train(cfg, out)? {
                println!("{}: best epoch {}, validation F1 {:.4}", a.tag, a.best_epoch, a.best_f1);
            }
        }
        Command::Calibrate(_) => {
            let profiles = commands::cmd_calibrate(cfg, out)?;
            println!("calibrated {} profiles", profiles.len());
        }
        Command::Detect { .. } => {
            for p in commands::cmd_detect(cfg, out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Evaluate(_) => {
            for (regime, reports) in commands::cmd_evaluate(cfg, out)? {
                println!("== {} ==", commands::regime_name(regime));
                print!("{}", crate::eval::reports_table(&reports));
            }
        }
        Command::ExportEmbeddings(_) => {
            let (r, g) = commands::cmd_export_embeddings(cfg, out)?;
            println!("wrote {} and {}", r.display(), g.display());
        }
        Command::GenerateSynthetic { .. } => unreachable!("handled in run"),
    }
    Ok(())
}
