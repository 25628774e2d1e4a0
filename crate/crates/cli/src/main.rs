mod analytic;
mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, Result};

/// Transition probabilities, moment surfaces and Monte Carlo checks for
/// semi-Markov modulated short-rate models.
#[derive(Debug, Parser)]
#[command(name = "smrate", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate the transition probabilities and their aged-start version.
    Phi(Args),
    /// Solve the bond-moment, rate-mean, product-moment and covariance surfaces.
    Moments(Args),
    /// Dump sample paths and Monte Carlo estimates against the solvers.
    Simulate(Args),
    /// Run every Monte Carlo check and fail unless all pass.
    Validate(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> Result<()> {
    let (Command::Phi(args) | Command::Moments(args) | Command::Simulate(args) | Command::Validate(args)) =
        &cli.command;
    let loaded = config::load(&args.config)?;
    let out = args.out.clone().or_else(|| loaded.config.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let seed = args.seed.unwrap_or(loaded.config.seed);
    let written = match cli.command {
        Command::Phi(_) => commands::phi(&loaded, &out)?,
        Command::Moments(_) => commands::moments(&loaded, &out)?,
        Command::Simulate(_) => {
            let (written, summary) = commands::simulate(&loaded, &out, seed)?;
            eprintln!("simulate: {} of {} estimates within 3 standard errors", summary.passed, summary.checks.len());
            written
        }
        Command::Validate(_) => {
            let (path, summary) = commands::validate(&loaded, &out, seed)?;
            println!("{}", path.display());
            for c in summary.checks.iter().filter(|c| !c.pass) {
                eprintln!(
                    "FAIL {}: analytic {:.10e}, estimate {:.10e} (se {:.3e}, z {:.2})",
                    serde_json::to_string(&c.target).unwrap_or_default(),
                    c.analytic,
                    c.mc_estimate,
                    c.std_error,
                    c.z
                );
            }
            eprintln!("validate: {} of {} checks pass", summary.passed, summary.checks.len());
            if summary.failed > 0 {
                return Err(CliError::Validation { failed: summary.failed, total: summary.checks.len() });
            }
            return Ok(());
        }
    };
    for path in written {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
