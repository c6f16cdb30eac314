//! Experiment runner for the conormal half-space engine.
//!
//! Subcommands: `reproduce-cauchy` (classical-kernel agreement),
//! `verify` (per-module invariant suites), `sweep` (parameter sweeps to
//! CSV), `solve` (one full solve with persisted fields). Exit codes:
//! 0 success, 1 assertion failure, 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EXIT_USAGE};
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "conormal", version, about = "half-space conormal gradient experiments")]
struct Cli {
    /// Path to the JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (overrides the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Random seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Halve the resolution and widen tolerances.
    #[arg(long, global = true)]
    quick: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compare the spectral extension against the classical kernel.
    ReproduceCauchy,
    /// Run one module invariant suite.
    Verify {
        #[arg(long)]
        suite: String,
    },
    /// Sweep a parameter and emit CSV rows.
    Sweep {
        #[arg(long)]
        parameter: String,
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        values: Vec<f64>,
    },
    /// Solve the perturbed system once and persist the fields.
    Solve,
}

fn run(cli: Cli) -> i32 {
    let Some(config_path) = cli.config.as_deref() else {
        eprintln!("missing --config PATH");
        return EXIT_USAGE;
    };
    let mut cfg = match ExperimentConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_USAGE;
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.quick {
        cfg.quicken();
    }
    let out = cli.out.as_deref();
    let result = match &cli.cmd {
        Cmd::ReproduceCauchy => commands::cmd_reproduce_cauchy(&cfg, out, cli.quick),
        Cmd::Verify { suite } => commands::cmd_verify(&cfg, suite, out),
        Cmd::Sweep { parameter, values } => commands::cmd_sweep(&cfg, parameter, values, out),
        Cmd::Solve => commands::cmd_solve(&cfg, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    ExitCode::from(run(cli) as u8)
}
