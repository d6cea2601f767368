//! `ise`: simulate, estimate, bound and sweep single-receiver DoA scenes
//! from TOML configs.
//!
//! Exit codes: 0 success, 2 config error, 3 domain error, 4 I/O error.

// `!(x > 0.0)` is the NaN-rejecting form used throughout for validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{Format, Overrides};
use crate::error::CliError;
use crate::output::OutDir;

#[derive(Debug, Parser)]
#[command(name = "ise", version, about = "Interferometric DoA estimation with a single atomic receiver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides `run.base_seed`.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Caps the worker threads used by Monte Carlo trials.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Overrides `prony.model_order`.
    #[arg(long, global = true, value_name = "N")]
    order: Option<usize>,
    /// Output format; overrides `output.format`.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write fluorescence and calibrated measurement CSVs.
    Simulate,
    /// Estimate DoAs from a measurement CSV.
    Estimate {
        /// CSV with header j,x_j_m,y_tilde.
        measurement: PathBuf,
    },
    /// Write the Cramér-Rao bound report.
    Crlb,
    /// Run the study in the `[sweep]` section.
    Sweep,
    /// Report the spacing and window-width conditions.
    CheckSampling,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let resolved = config::load(
        path,
        Overrides {
            seed: cli.seed,
            order: cli.order,
        },
    )?;

    env_logger::Builder::new()
        .filter_level(resolved.file.output.verbosity.level())
        .format_timestamp(None)
        .format_target(false)
        .init();

    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the thread pool: {e}")))?;
    }

    let format = cli.format.or(resolved.file.output.format);
    let out_dir = cli
        .out
        .or_else(|| resolved.file.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    match cli.command {
        Command::CheckSampling => commands::check_sampling(&resolved, format),
        Command::Simulate => commands::simulate(&resolved, &mut OutDir::create(&out_dir)?, format),
        Command::Estimate { measurement } => {
            commands::estimate(&resolved, &measurement, &mut OutDir::create(&out_dir)?, format)
        }
        Command::Crlb => commands::crlb(&resolved, &mut OutDir::create(&out_dir)?, format),
        Command::Sweep => commands::sweep(&resolved, &mut OutDir::create(&out_dir)?, format),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
