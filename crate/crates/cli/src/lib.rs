//! Command-line driver: configs in, CSV/JSON reports and manifests out.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 a checked
//! inequality failed or a run was refused.

pub mod commands;
pub mod config;
pub mod context;
pub mod table;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

pub use commands::{cmd_bounds, cmd_certify, cmd_compare, cmd_run, cmd_verify, Outcome};
pub use config::ExperimentConfig;
pub use context::RunContext;

pub const THREADS_ENV: &str = "SGLD_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "sgld-lab", version, about = "SGLD generalization-bound laboratory")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Run even when the step size or temperature is outside the theorem range.
    #[arg(long, global = true)]
    pub allow_unsafe: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the claimed loss constants at sampled points.
    Certify,
    /// Run the chain ensemble and estimators.
    Run,
    /// Evaluate every bound from recorded traces.
    Bounds {
        /// Directory holding the traces (default: the output directory).
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Run the oracle, Fokker-Planck and sub-exponential suites.
    Verify,
    /// Tabulate bounds against empirical gaps across report directories.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn context(cli: &Cli) -> Result<RunContext> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!("--config is required"))?;
    let config = ExperimentConfig::load(path)?;
    Ok(RunContext::new(config, cli.seed, cli.out.clone(), cli.allow_unsafe))
}

/// Runs a parsed command on a dedicated thread pool.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(anyhow!("--threads must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    pool.install(|| match &cli.command {
        Command::Certify => cmd_certify(&context(cli)?),
        Command::Run => cmd_run(&context(cli)?),
        Command::Bounds { trace_dir } => cmd_bounds(&context(cli)?, trace_dir.as_deref()),
        Command::Verify => cmd_verify(&context(cli)?),
        Command::Compare { dirs } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            cmd_compare(&out, dirs)
        }
    })
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run_cli<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
