//! Batch front end: reads a run configuration, executes one command, and
//! writes CSV tables into the output directory.
//!
//! Exit codes: 0 on success (and all checks passing for `verify`),
//! 1 on numerical failures or failed verification, 2 on configuration
//! errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(levywh::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Numeric(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl From<levywh::Error> for CliError {
    fn from(e: levywh::Error) -> Self {
        CliError::Numeric(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 1,
        }
    }
}

/// Factorization of jump diffusions over phase-type horizons.
#[derive(Parser, Debug)]
#[command(name = "levywh", version, disable_help_subcommand = true)]
struct Args {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,

    /// Directory the CSV outputs are written to.
    #[arg(long, default_value = "./out")]
    output: PathBuf,

    /// Worker threads for Monte Carlo commands; results do not depend on
    /// the count.
    #[arg(long, default_value_t = 1)]
    threads: usize,

    /// Overrides the seed in the `[sim]` section.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(args: &Args) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = config::RunConfig::load(&text)?;
    if let Some(seed) = args.seed {
        match cfg.sim.as_mut() {
            Some(sim) => sim.seed = seed,
            None => {
                return Err(CliError::Config(
                    "--seed given but the config has no [sim] section".into(),
                ))
            }
        }
    }
    if args.threads == 0 {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    commands::dispatch(&cfg, &args.output, args.threads)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
