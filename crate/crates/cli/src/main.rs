//! `safeflow`: dataset generation, training, planning, sweeps and
//! certificate checks from the command line.
//!
//! Exit codes: 0 success, 1 validation, 2 certificate violation, 3 I/O.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Failure;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => commands::generate(&cli.global, a),
        Command::Train(a) => commands::train(&cli.global, a),
        Command::Plan(a) => commands::plan(&cli.global, a),
        Command::Sweep(a) => commands::sweep(&cli.global, a),
        Command::Verify(a) => commands::verify(&cli.global, a),
        Command::Report(a) => commands::report(&cli.global, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if let Failure::Error(e) = &f {
                eprintln!("error: {e}");
            }
            ExitCode::from(f.code())
        }
    }
}
