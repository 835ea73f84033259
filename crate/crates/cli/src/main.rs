//! `blockwise`: estimation, simulation and diagnostics for data with
//! blockwise missingness.
//!
//! Machine-readable output goes to stdout, diagnostics to stderr. Failures
//! print `{"error": {...}}` on stdout and exit with 2 (configuration),
//! 3 (data) or 4 (numerical failure).

mod commands;
mod config;
mod error;
mod ingest;

use clap::{Parser, Subcommand};

use commands::{EstimateArgs, GenerateArgs, LatticeArgs, RemainderArgs, SimulateArgs};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "blockwise", version, about = "Estimation with blockwise-missing data and model predictions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one estimator and print its report as JSON.
    Estimate(EstimateArgs),
    /// Run seeded replications and report per-estimator metrics.
    Simulate(SimulateArgs),
    /// Write a simulated dataset as CSV.
    Generate(GenerateArgs),
    /// Main and remainder variances for the three-variable Gaussian study.
    Remainder(RemainderArgs),
    /// Pattern proportions and weighting moments of a dataset.
    Lattice(LatticeArgs),
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            std::process::exit(0);
        }
        Err(e) => {
            let _ = e.print();
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or_default();
            let err = CliError::Config(first.trim_start_matches("error: ").to_string());
            println!("{}", err.to_json());
            std::process::exit(err.exit_code());
        }
    };
    let result = match &cli.command {
        Command::Estimate(a) => commands::run_estimate(a),
        Command::Simulate(a) => commands::run_simulate(a),
        Command::Generate(a) => commands::run_generate(a),
        Command::Remainder(a) => commands::run_remainder(a),
        Command::Lattice(a) => commands::run_lattice(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        println!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
