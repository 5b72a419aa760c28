//! `pv-elliptic`: runs the Boutroux, identity, verification and orbit
//! computations from a JSON config and writes JSON, CSV and plot files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

mod commands;
mod config;

use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 2,
            CliError::Config(_) | CliError::Io(_) => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pv-elliptic", version, about = "Elliptic asymptotics of Painleve V: checks and verification runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Integrator relative tolerance (absolute = tol/100) and Boutroux residual bound.
    #[arg(long)]
    tol: Option<f64>,
    /// Phase of the ray; replaces `phi` and any phase grid.
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the Boutroux equations for one phase or a grid.
    Boutroux(Common),
    /// Residuals of the theta, sn, leading-order and primitive identities.
    Identities(Common),
    /// Integrate, fit the frame and compare with the predicted error terms.
    Verify(Common),
    /// Integrate along the ray only.
    Orbit(Common),
}

fn run(cli: Cli) -> Result<bool, CliError> {
    let (common, f): (&Common, fn(&RunConfig, &Path) -> commands::Outcome) = match &cli.command {
        Command::Boutroux(c) => (c, commands::boutroux),
        Command::Identities(c) => (c, commands::identities),
        Command::Verify(c) => (c, commands::verify),
        Command::Orbit(c) => (c, commands::orbit),
    };
    let cfg = RunConfig::load(&common.config)?.with_overrides(common.tol, common.phi)?;
    std::fs::create_dir_all(&common.out).map_err(|e| CliError::io(&common.out, e))?;
    f(&cfg, &common.out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("checks failed; see the report");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
