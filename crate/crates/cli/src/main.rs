use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = ksmooth::Cli::parse();
    match ksmooth::run(&cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
