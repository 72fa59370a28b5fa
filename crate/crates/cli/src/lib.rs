//! Command-line front end: configuration, suite dispatch and artifacts.

pub mod config;
pub mod output;
pub mod runner;

use std::path::PathBuf;

use clap::Parser;

pub use config::{Mode, RunConfig};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cglblow", about = "Flat blowup profiles for the complex Ginzburg-Landau equation")]
pub struct Cli {
    /// Suite or run to execute; overrides `mode` in the file.
    pub mode: Mode,
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted override such as `params.gamma=0.5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<config::FieldError>),
    #[error(transparent)]
    Run(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Run(_) => EXIT_FAILED,
        }
    }
}

/// Caps rayon from `CGLBLOW_THREADS`.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("CGLBLOW_THREADS") else { return Ok(()) };
    let n: usize = raw.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        CliError::Config(vec![config::FieldError { field: "CGLBLOW_THREADS".into(), message: format!("expected a positive integer, got `{raw}`") }])
    })?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Run(e.into()))
}

/// Loads, validates and runs; returns whether every criterion passed.
pub fn execute(cli: &Cli) -> Result<runner::RunOutcome, CliError> {
    let mut cfg = config::load(&cli.config, &cli.set).map_err(CliError::Config)?;
    cfg.mode = Some(cli.mode);
    let errors = cfg.validate();
    if !errors.is_empty() {
        return Err(CliError::Config(errors));
    }
    Ok(runner::run(&cfg)?)
}
