//! `mergelab` command-line tool.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data errors.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::{Cli, CliError};

const THREADS_ENV: &str = "MERGELAB_THREADS";

fn thread_count() -> Result<usize, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| {
            CliError::usage(format!(
                "{THREADS_ENV}: expected a non-negative integer, got `{v}`"
            ))
        }),
        Err(_) => Ok(0),
    }
}

fn run() -> Result<(), CliError> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count()?)
        .build()
        .map_err(|e| CliError::usage(format!("{THREADS_ENV}: {e}")))?;
    pool.install(|| commands::execute(cli.command))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
