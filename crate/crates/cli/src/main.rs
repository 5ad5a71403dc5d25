mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "latte",
    version,
    about = "Train and evaluate Lorentz-manifold EEG classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Self-supervised pretraining of the processor and inception block.
    Pretrain(Common),
    /// Cross-subject training with per-subject adapters.
    Train(Common),
    /// Per-subject fine-tuning of a trained checkpoint.
    Finetune(Common),
    /// Leave-one-subject-out evaluation.
    Loso(Common),
    /// Evaluate a checkpoint on a dataset split.
    Eval(Common),
    /// Generate a synthetic multi-subject dataset.
    Synth(Common),
    /// Summarize a checkpoint and/or dataset.
    Inspect(Common),
}

#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset file (EEGC).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint file (LATC).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration: exit 2.
    Config(String),
    /// Missing input file: exit 3.
    Missing(PathBuf),
    /// Anything else: exit 1.
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "invalid configuration: {m}"),
            CliError::Missing(p) => write!(f, "file not found: {}", p.display()),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl From<latte::LatteError> for CliError {
    fn from(e: latte::LatteError) -> Self {
        CliError::Failed(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err(e: latte::LatteError) -> CliError {
    CliError::Config(e.to_string())
}

/// Reads the config file, applies `--set` overrides, then `--seed`.
fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => CliError::Missing(path.clone()),
                _ => CliError::Failed(format!("{}: {e}", path.display())),
            })?;
            RunConfig::from_text(&text).map_err(config_err)?
        }
        None => RunConfig::default(),
    };
    let mut pairs = Vec::new();
    for s in &common.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    cfg.apply(&pairs).map_err(config_err)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

type Handler = fn(&Common, &RunConfig) -> CliResult<()>;

fn run(cli: Cli) -> CliResult<()> {
    let (common, f): (&Common, Handler) = match &cli.command {
        Command::Pretrain(c) => (c, commands::pretrain),
        Command::Train(c) => (c, commands::train),
        Command::Finetune(c) => (c, commands::finetune),
        Command::Loso(c) => (c, commands::loso),
        Command::Eval(c) => (c, commands::eval),
        Command::Synth(c) => (c, commands::synth),
        Command::Inspect(c) => (c, commands::inspect),
    };
    let cfg = load_config(common)?;
    f(common, &cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.code())
        }
    }
}
