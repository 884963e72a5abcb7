//! `fusionscreen`: generate data, train, tune, screen, evaluate and report.
//!
//! Every command reads an optional TOML config (`--config`), applies flag
//! overrides, and writes `run-manifest.json` plus `run-timings.json` into
//! its output directory. Exit status: 0 success, 1 usage, 2 stage failure,
//! 3 finished with missing ranges.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod run;

use run::{RunStatus, UsageError};

#[derive(Parser)]
#[command(name = "fusionscreen", version, about = "Fusion-model virtual screening pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic complexes, and optionally a pose library with assay values.
    Gen(commands::gen::GenArgs),
    /// Train heads or a fusion model on a generated dataset.
    Train(commands::train::TrainArgs),
    /// Population-based bandit tuning.
    Hpo(commands::hpo::HpoArgs),
    /// Score a pose library in fault-tolerant jobs.
    Screen(commands::screen::ScreenArgs),
    /// Compare screening output and external methods against assay values.
    Eval(commands::eval::EvalArgs),
    /// Summaries of screening and evaluation runs.
    Report(commands::report::ReportArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Gen(a) => commands::gen::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Hpo(a) => commands::hpo::run(a),
        Command::Screen(a) => commands::screen::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Report(a) => commands::report::run(a),
    };
    match result {
        Ok(RunStatus::Complete) => ExitCode::SUCCESS,
        Ok(RunStatus::Incomplete) => {
            log::warn!("finished with missing ranges");
            ExitCode::from(3)
        }
        Ok(RunStatus::Failed) => ExitCode::from(2),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
