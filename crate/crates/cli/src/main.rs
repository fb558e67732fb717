//! `morphreg`: train, register, warp, evaluate and generate synthetic data.

mod commands;
mod error;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{eval::EvalArgs, register::RegisterArgs, synth::SynthArgs, train::TrainArgs, warp::WarpArgs};
use error::{CliError, CliResult};
use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "morphreg", version, about = "Learned and classical deformable image registration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic image pairs with labels and true fields.
    Synth(SynthArgs),
    /// Train a registration network.
    Train(TrainArgs),
    /// Register one pair with a network and/or per-pair optimization.
    Register(RegisterArgs),
    /// Resample an image or label map with a displacement field.
    Warp(WarpArgs),
    /// Dice overlap and folding of a registration.
    Eval(EvalArgs),
    /// Repeat the run recorded in a manifest.
    Rerun {
        manifest: PathBuf,
    },
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => commands::synth::run(&a),
        Command::Train(a) => commands::train::run(&a),
        Command::Register(a) => commands::register::run(&a),
        Command::Warp(a) => commands::warp::run(&a),
        Command::Eval(a) => commands::eval::run(&a),
        Command::Rerun { manifest } => {
            let m = Manifest::read(&manifest)?;
            if m.subcommand == "rerun" {
                return Err(CliError::Usage("a manifest cannot rerun another rerun".into()));
            }
            let cli = Cli::try_parse_from(m.to_args())
                .map_err(|e| CliError::Usage(format!("{}: {}", manifest.display(), e.to_string().trim_end())))?;
            dispatch(cli.command)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
