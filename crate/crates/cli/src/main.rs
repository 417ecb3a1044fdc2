use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    artrec_cli::main_with(artrec_cli::Cli::parse())
}
