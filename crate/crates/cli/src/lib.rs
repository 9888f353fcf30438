//! Argument handling for the `tbm` binary.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tbm_core::harness::{run_experiment, run_with_threads, write_artifacts};
use tbm_core::{ExperimentConfig, ExperimentKind, Preset, Result, TbmError};

#[derive(Parser, Debug)]
#[command(name = "tbm", version, about = "Tensor-based modulation simulations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// CPD estimation MSE against the bounds.
    MseSweep(RunArgs),
    /// Polar-coded packet error rate, full receiver and equivalent channel.
    PerSweep(RunArgs),
    /// Dependence-testing achievability curve.
    DtCurve(RunArgs),
    /// Exact and relaxed CRB bounds on random instances.
    BoundsTable(RunArgs),
    /// AMP state evolution and its phase transition.
    AmpCurve(RunArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Key-value config file; `experiment` may be omitted.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Built-in configuration; `desk` when no config file is given.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; all cores when omitted.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Command {
    pub fn split(&self) -> (ExperimentKind, &RunArgs) {
        match self {
            Command::MseSweep(a) => (ExperimentKind::MseSweep, a),
            Command::PerSweep(a) => (ExperimentKind::PerSweep, a),
            Command::DtCurve(a) => (ExperimentKind::DtCurve, a),
            Command::BoundsTable(a) => (ExperimentKind::BoundsTable, a),
            Command::AmpCurve(a) => (ExperimentKind::AmpCurve, a),
        }
    }
}

/// Config after applying the file or preset and the command-line overrides.
pub fn resolve(kind: ExperimentKind, args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| TbmError::Config(format!("{}: {e}", path.display())))?;
            ExperimentConfig::parse_for(kind, &text)?
        }
        None => {
            let preset = match args.preset.unwrap_or(PresetArg::Desk) {
                PresetArg::Desk => Preset::Desk,
                PresetArg::Paper => Preset::Paper,
            };
            ExperimentConfig::preset(kind, preset)
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if args.threads == Some(0) {
        return Err(TbmError::Config("--threads must be at least 1".into()));
    }
    Ok(cfg)
}

/// Runs the command and returns the written files.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let (kind, args) = cli.command.split();
    let cfg = resolve(kind, args)?;
    if cfg.long_running {
        eprintln!("warning: {kind} with this configuration is long-running (hours or more)");
    }
    let artifacts = match args.threads {
        Some(n) => run_with_threads(&cfg, n)?,
        None => run_experiment(&cfg)?,
    };
    write_artifacts(&cfg.out, &artifacts)
}
