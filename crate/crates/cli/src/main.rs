use std::process::ExitCode;

use clap::Parser;
use sideband_cli::{output::file_name, run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.report);
            for f in &outcome.files {
                eprintln!("wrote {}", outcome.dir.join(file_name(f)).display());
            }
            if let Some(e) = &outcome.error {
                eprintln!("error: {e}");
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
