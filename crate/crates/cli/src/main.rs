//! `shuffle-ev`: batch explainable-variance estimation, permutation checks and
//! simulation sweeps from the command line.

mod alpha;
mod common;
mod config;
mod diagnose;
mod estimate;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "shuffle-ev", version, about = "Signal and explainable variance under autocorrelated noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate signal variance and explainable variance for every series in a dataset.
    Estimate(estimate::Args),
    /// Report the mixing coefficient of permutations for a schedule.
    Alpha(alpha::Args),
    /// Run a Monte Carlo sweep from a preset or a config file.
    Simulate(simulate::Args),
    /// Consistency and noise-conservation diagnostics for a schedule.
    Diagnose(diagnose::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => estimate::run(args),
        Command::Alpha(args) => alpha::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Diagnose(args) => diagnose::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
