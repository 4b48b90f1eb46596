//! `mspbe-lab`: run evaluation experiments, sweep error surfaces, compare
//! algorithms, train the gridworld controller and plot results.
//!
//! Exit codes: 0 success, 1 usage/config/I-O error, 2 a run diverged (its
//! output is still written).

mod commands;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "mspbe-lab",
    version,
    about = "Projected Bellman error laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Config file (repeat for compare)
    #[arg(long = "config", value_name = "PATH")]
    pub configs: Vec<PathBuf>,
    /// Output file; standard output if omitted
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Override a config key, applied after the file (repeatable, last wins)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed; for compare, the parent seed from which each run's seed is derived
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress status messages on standard error
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write its artifact
    Evaluate(Common),
    /// Tabulate exact MSBE and MSPBE over a parameter grid
    Sweep(Common),
    /// Run several experiments on one scenario and align their MSPBE curves
    Compare(Common),
    /// Train tabular cooperative Q-learning on a gridworld
    Control(Common),
    /// Render CSV columns as an SVG line chart
    Plot(Common),
    /// Check configs without running them
    Validate(Common),
}

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    Diverged,
}

fn main() -> ExitCode {
    let color = if std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty()) {
        clap::ColorChoice::Never
    } else {
        clap::ColorChoice::Auto
    };
    let matches = match Cli::command().color(color).try_get_matches() {
        Ok(m) => m,
        Err(e) => return usage_error(e),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => return usage_error(e),
    };
    let result = match cli.command {
        Command::Evaluate(c) => commands::evaluate(&c),
        Command::Sweep(c) => commands::sweep(&c),
        Command::Compare(c) => commands::compare(&c),
        Command::Control(c) => commands::control(&c),
        Command::Plot(c) => commands::plot(&c),
        Command::Validate(c) => commands::validate(&c),
    };
    match result {
        Ok(Outcome::Completed) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn usage_error(e: clap::Error) -> ExitCode {
    let _ = e.print();
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
        _ => ExitCode::from(1),
    }
}
