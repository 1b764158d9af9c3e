//! Batch pipeline behind the `elpose` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;

use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde_json::Value;

pub use config::Overrides;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error(transparent)]
    Core(#[from] elpose_core::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 2 config, 3 I/O, 4 parse/schema, 5 checkpoint, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use elpose_core::Error as E;
        match self {
            CliError::Config(_) | CliError::Core(E::Config(_)) => 2,
            CliError::Io { .. } | CliError::Core(E::Io(_)) => 3,
            CliError::Core(E::Parse { .. } | E::Schema(_)) => 4,
            CliError::MissingCheckpoint(_) | CliError::Core(E::Checkpoint(_)) => 5,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Simulate,
    Train,
    Refine,
    Metrics,
    Heatmap,
}

#[derive(Debug, Parser)]
#[command(name = "elpose", about = "Physics-informed skeletal motion pipeline")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config key, e.g. `--set epochs=5` or `--set camera.scale=0.4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Runs one command and returns its JSON summary.
pub fn run(args: &Args) -> CliResult<Value> {
    let overrides = Overrides::parse(&args.set, args.seed)?;
    match args.command {
        Command::Simulate => commands::simulate::run(&args.config, &overrides),
        Command::Train => commands::train::run(&args.config, &overrides),
        Command::Refine => commands::refine::run(&args.config, &overrides),
        Command::Metrics => commands::metrics::run(&args.config, &overrides),
        Command::Heatmap => commands::heatmap::run(&args.config, &overrides),
    }
}
