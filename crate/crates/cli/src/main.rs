use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = cirkit_cli::Cli::parse();
    match cirkit_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
