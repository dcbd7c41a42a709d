//! `grw`: run the collapse-model scenarios from a configuration and write
//! JSON or CSV reports.

mod commands;
mod config;
mod error;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::config::{Resolved, Settings};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "grw",
    version,
    about = "Spontaneous-localization and marble-counting simulations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML settings file, or a JSON report to repeat.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Write the report here instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(flatten)]
    settings: Settings,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Simulate packet trajectories under random hits.
    Trajectory,
    /// Regime time, equilibrium width, forced displacement and tail figures.
    Equilibrium,
    /// Criterion verdicts across a grid of marble counts.
    AnomalySweep,
    /// In-box and out-of-box mass accessibility for one marble count.
    Accessibility,
    /// Monte Carlo of the counting apparatus chain.
    Chain,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let config = Resolved::from_settings(cli.settings.over(file))?;
    let text = match cli.command {
        Command::Trajectory => commands::trajectory(&config)?,
        Command::Equilibrium => commands::equilibrium(&config)?,
        Command::AnomalySweep => commands::anomaly_sweep(&config)?,
        Command::Accessibility => commands::accessibility(&config)?,
        Command::Chain => commands::chain(&config)?,
    };
    match &cli.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display()))),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::runtime(format!("cannot write output: {e}"))),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::config(e.render().to_string().trim_end().to_owned());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
