//! `vccsa`: generate synthetic corpora, train, evaluate, ablate, sweep,
//! inspect grounding weights and validate datasets.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vccsa::data::{DataError, Part};
use vccsa::model::{Ablation, ModelError};
use vccsa::trainer::TrainError;

use config::RunConfig;

/// Error classes mapped onto the documented exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
            TrainError::InvalidConfig(_) | TrainError::UnknownMode(_) => CliError::Usage(e.to_string()),
            TrainError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vccsa", version, about = "Video-context comment sentiment analysis", after_long_help = config::keys_help())]
struct Cli {
    /// Flat TOML config file (see the key list below).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for generation and training; overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Config override `key=value`; repeatable, applied after --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus into --out and print its text-only ceiling.
    Gen,
    /// Train one model; writes checkpoint, history, vocabulary, split and report into --out.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split part.
    Eval {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        part: Part,
    },
    /// Run the full model and its ablations over the configured seeds.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        /// only_single_layer | only_last_layer | last_token_query | raw_attention_weight; repeatable, default all.
        #[arg(long = "mode")]
        modes: Vec<Ablation>,
    },
    /// Train and test the configured model once per seed and report mean ± stdev.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also sweep the text-only baseline.
        #[arg(long)]
        with_baseline: bool,
    },
    /// Dump per-scale grounding weights, attention and predictions for one comment.
    Inspect {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        comment: String,
    },
    /// Print label distributions and corpus sizes.
    Stats {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Validate corpus integrity, an optional split file and annotation consistency.
    Check {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        split: Option<PathBuf>,
        /// Two validator comment files relabelling the same comments.
        #[arg(long, num_args = 2)]
        validators: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let out = cli.out.as_deref();
    let require_out = || out.ok_or_else(|| CliError::Usage("this command needs --out".into()));
    use commands::*;
    match &cli.command {
        Command::Gen => cmd_gen(&config, require_out()?),
        Command::Train { data } => {
            let dir = resolve_data_dir(data.as_deref(), &config)?;
            cmd_train(&config, &dir, require_out()?, config.seed)
        }
        Command::Eval { data, checkpoint, part } => {
            let dir = resolve_data_dir(data.as_deref(), &config)?;
            cmd_eval(&config, &dir, checkpoint, *part, out)
        }
        Command::Ablate { data, modes } => {
            let dir = resolve_data_dir(data.as_deref(), &config)?;
            cmd_ablate(&config, &dir, modes, out)
        }
        Command::Sweep { data, with_baseline } => {
            let dir = resolve_data_dir(data.as_deref(), &config)?;
            cmd_sweep(&config, &dir, *with_baseline, out)
        }
        Command::Inspect { data, checkpoint, comment } => {
            let dir = resolve_data_dir(data.as_deref(), &config)?;
            cmd_inspect(&config, &dir, checkpoint, comment, out)
        }
        Command::Stats { data } => {
            let dir = resolve_data_dir(data.as_deref(), &config)?;
            cmd_stats(&dir, out)
        }
        Command::Check { data, split, validators } => {
            let dir = resolve_data_dir(data.as_deref(), &config)?;
            cmd_check(&dir, split.as_deref(), validators)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
