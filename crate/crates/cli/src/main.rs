use std::process::ExitCode;

use clap::Parser;
use tfce_cli::cli::Cli;

fn main() -> ExitCode {
    // Usage errors exit with status 2 inside `parse`.
    let cli = Cli::parse();
    match tfce_cli::commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", tfce_cli::format_error(&e));
            ExitCode::from(1)
        }
    }
}
