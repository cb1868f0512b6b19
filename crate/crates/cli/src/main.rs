//! `stancebridge`: build augmented corpora, train classifiers, evaluate
//! experiments and render result tables from a TOML run configuration.
//!
//! Exit codes: 0 success, 1 invalid configuration or credentials, 2 failure
//! while running.

mod config;
mod run;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use stancebridge::evalharness::TableLayout;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid configuration: {m}"),
            CliError::Runtime(m) => write!(f, "run failed: {m}"),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    /// Deterministic offline noise model.
    Mock,
    /// Serve only what the translation cache already holds.
    Cached,
    /// HTTP translation service; needs STANCEBRIDGE_MT_KEY.
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutChoice {
    Table1,
    Table2,
}

impl From<LayoutChoice> for TableLayout {
    fn from(l: LayoutChoice) -> Self {
        match l {
            LayoutChoice::Table1 => TableLayout::Table1,
            LayoutChoice::Table2 => TableLayout::Table2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "stancebridge",
    version,
    about = "Cross-lingual stance detection experiments"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run with this single seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = BackendChoice::Mock)]
    pub backend: BackendChoice,
    /// Output directory, overriding `paths.output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for translation and seeds. Defaults to the CPU count.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write every configured plan's augmented corpus as JSONL.
    Build,
    /// Fit one classifier and save its checkpoint and vocabulary.
    Train {
        /// Experiment whose training data is used; defaults to the first.
        #[arg(long)]
        experiment: Option<String>,
    },
    /// Run experiments and write their reports.
    Eval {
        /// Only run this experiment.
        #[arg(long)]
        experiment: Option<String>,
    },
    /// Run the experiments behind a table layout and render it.
    Reproduce {
        #[arg(long, value_enum)]
        layout: LayoutChoice,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run::execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
