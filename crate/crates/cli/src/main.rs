//! `gsadvisor`: sweep, train, select, evaluate and report.
//!
//! Exit codes: 0 success, 1 fatal error, 2 partial failure.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::Status;
use crate::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(version, about = "Prompt-aware guidance scale selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Score every (prompt, scale) pair and write the dataset.
    Sweep,
    /// Fit the quality predictor on the dataset.
    Train,
    /// Choose a scale for every prompt.
    Select,
    /// Compare the adaptive policy with fixed scales on ground truth.
    Evaluate,
    /// Render an evaluation summary as a table.
    Report,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated scale grid.
    #[arg(long, global = true)]
    grid: Option<String>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    anchor: Option<f64>,
    /// `synthetic` or an `http://` endpoint.
    #[arg(long, global = true)]
    provider: Option<String>,
    /// Primary output path of the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn run(cli: &Cli) -> anyhow::Result<Status> {
    let c = &cli.common;
    let overrides = Overrides {
        seed: c.seed,
        grid: c.grid.clone(),
        alpha: c.alpha,
        anchor: c.anchor,
        provider: c.provider.clone(),
    };
    let path = c.config.as_deref().ok_or_else(|| anyhow::anyhow!("--config is required"))?;
    let cfg = RunConfig::load(path, &overrides)?;
    let out = c.out.as_deref();
    match cli.command {
        Command::Sweep => commands::sweep(&cfg, out),
        Command::Train => commands::train(&cfg, out),
        Command::Select => commands::select(&cfg, out),
        Command::Evaluate => commands::evaluate_cmd(&cfg, out),
        Command::Report => commands::report(&cfg, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Status::Success) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
