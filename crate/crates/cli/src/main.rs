//! `lpflow` — particle simulations of 1D Wasserstein gradient flows.
//!
//! Exit codes: 0 success, 1 a check failed, 2 bad configuration,
//! 3 numerical failure.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "lpflow", version, about = "Particle method for gradient flows on the 1D L^p-Wasserstein space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set energy.p=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the structural conditions on the energy density.
    Validate(Common),
    /// Integrate the particle flow and write the trajectory.
    Run(Common),
    /// Run a convergence study.
    Study(Common),
    /// Solve the reference finite-volume problem.
    Pde(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, f): (&Common, fn(&config::RunConfig) -> Result<commands::Outcome, CliError>) = match &cli.command {
        Command::Validate(c) => (c, commands::validate),
        Command::Run(c) => (c, commands::run),
        Command::Study(c) => (c, commands::study),
        Command::Pde(c) => (c, commands::pde),
    };
    let result = config::load(common.config.as_deref(), &common.overrides).and_then(|cfg| {
        if cfg.output.workers > 0 {
            lpflow::par::init_workers(cfg.output.workers);
        }
        f(&cfg)
    });
    match result {
        Ok(out) => {
            println!("output: {}", out.dir.display());
            if out.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("lpflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
