//! `ecgdel`: ingest WFDB data, run cross-validation, predict, evaluate,
//! augment and plot.

mod commands;
mod error;
mod io;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{augment, crossval, evaluate, ingest, plot, predict, synth};

#[derive(Parser)]
#[command(name = "ecgdel", version, about = "ECG delineation with 1D U-Nets")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a directory of WFDB records into interchange JSON.
    Ingest(ingest::Args),
    /// Subject-wise k-fold training and evaluation.
    Crossval(crossval::Args),
    /// Delineate one record with a trained checkpoint.
    Predict(predict::Args),
    /// Score predicted fiducials against reference labels.
    Evaluate(evaluate::Args),
    /// Write noise-augmented windows of a record.
    Augment(augment::Args),
    /// Render a record, its labels or a report as SVG.
    Plot(plot::Args),
    /// Generate synthetic labelled records.
    Synth(synth::Args),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { error::EXIT_USAGE as u8 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let result = match cli.command {
        Command::Ingest(a) => ingest::run(a),
        Command::Crossval(a) => crossval::run(a),
        Command::Predict(a) => predict::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Augment(a) => augment::run(a),
        Command::Plot(a) => plot::run(a),
        Command::Synth(a) => synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::from(error::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e) as u8)
        }
    }
}

