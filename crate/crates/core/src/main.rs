use std::process::ExitCode;

use clap::Parser;
use lshctl::cli::{run, Cli, LOG_ENV};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    run(Cli::parse())
}
