//! Command-line front end for the patch classification stack.
//!
//! Subcommands: `extract` (images + expert maps -> labeled patches),
//! `split` (patient-grouped train/val/test or folds), `train`, and `eval`
//! (internal checkpoints or external prediction files through the same
//! scorer). All randomness flows from `--seed`; identical inputs and seed
//! reproduce outputs byte for byte.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 input validation failure.
//! `GLEASON_LOG` controls log verbosity (error/warn/info/debug/trace).

mod commands;
mod config;
mod dataset;
mod errors;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "gleason-mamba", version, about = "Patch-level tissue grading pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract labeled patches from images and expert annotation maps.
    Extract(commands::extract::ExtractArgs),
    /// Assign patient-grouped splits or folds to a manifest.
    Split(commands::split::SplitArgs),
    /// Train the classifier on a split manifest.
    Train(commands::train::TrainArgs),
    /// Score a checkpoint or an external prediction file on the test split.
    Eval(commands::eval::EvalArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GLEASON_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(args) => commands::extract::run(args),
        Command::Split(args) => commands::split::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}
