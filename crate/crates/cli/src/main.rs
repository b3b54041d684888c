//! `udor`: dataset generation, training, evaluation, editing, sweeps, plots.
//!
//! Exit codes: 0 ok, 2 configuration/usage, 3 I/O, 4 numeric failure.

mod commands;
mod run_record;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use udor_core::UdorError;

#[derive(Parser, Debug)]
#[command(name = "udor", version, about = "Disassembled object representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic scene dataset.
    GenerateData(commands::data::GenerateArgs),
    /// Train a model on a dataset.
    Train(commands::train::TrainArgs),
    /// Score a checkpoint: modularity, integrity, linear probe.
    Eval(commands::eval::EvalArgs),
    /// Object-removed and object-swapped reconstructions.
    Edit(commands::edit::EditArgs),
    /// Run a part-length or offset sweep.
    Sweep(commands::sweep::SweepArgs),
    /// Run one sweep cell (used by `sweep --jobs`).
    #[command(hide = true)]
    SweepCell(commands::sweep::CellArgs),
    /// Line charts from a sweep's results.csv.
    Plot(commands::sweep::PlotArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<UdorError>() {
            return match e {
                UdorError::Config(_) | UdorError::Shape(_) | UdorError::Index { .. } | UdorError::Degenerate(_) => 2,
                UdorError::Io { .. } | UdorError::Format(_) => 3,
                UdorError::Numeric { .. } => 4,
                UdorError::Backend(_) => 1,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData(a) => commands::data::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Eval(a) => commands::eval::run(a),
        Command::Edit(a) => commands::edit::run(a),
        Command::Sweep(a) => commands::sweep::run(a),
        Command::SweepCell(a) => commands::sweep::run_cell(a),
        Command::Plot(a) => commands::sweep::plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
