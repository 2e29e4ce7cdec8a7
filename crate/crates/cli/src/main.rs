//! `kavguard` command-line driver.

use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;

use args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(err) = configure_threads() {
        eprintln!("kavguard: {err}");
        return ExitCode::from(err.exit_code() as u8);
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("kavguard: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

/// Honors `KAVGUARD_THREADS` as a cap on the worker pool.
fn configure_threads() -> kavguard::Result<()> {
    let Ok(raw) = std::env::var("KAVGUARD_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        kavguard::Error::usage(format!(
            "KAVGUARD_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| kavguard::Error::usage(e.to_string()))
}
