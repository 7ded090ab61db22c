use std::process::ExitCode;

use clap::Parser;
use echoflow::cli::{exit_code, run, Cli, EXIT_CONFIG};
use echoflow::par;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("ECHOFLOW_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => par::init_threads(n),
            _ => {
                eprintln!("error: ECHOFLOW_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(EXIT_CONFIG);
            }
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
