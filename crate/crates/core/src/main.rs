use std::process::ExitCode;

use clap::Parser;
use parcer_core::cli::{execute, Cli};

fn main() -> ExitCode {
    ExitCode::from(execute(Cli::parse()))
}
