mod args;
mod commands;
mod exit;
mod manifest;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};
use crate::exit::CliResult;

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PANELCTRL_LOG", "warn"))
        .format_timestamp(None)
        .init();
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(panelctrl_core::Error::InvalidConfig("--threads must be at least 1".into()).into());
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match &cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Cv(a) => commands::cv(a),
        Command::Placebo(a) => commands::placebo(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Diagnose(a) => commands::diagnose(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match run(&cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
