use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    metahdr::cli::run(metahdr::cli::Cli::parse())
}
