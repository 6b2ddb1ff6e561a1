mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;
use robreg_core::Error;

use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable files or malformed input.
    Usage(String),
    Core(Error),
    /// Failure writing results.
    Output(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Output(_) => 1,
            CliError::Core(e) => match e {
                Error::InvalidInput(_)
                | Error::AlphaOutOfRange(_)
                | Error::DimensionMismatch(_)
                | Error::Parse { .. }
                | Error::Io(_) => 1,
                _ => 2,
            },
        }
    }

    fn report(&self) {
        match self {
            CliError::Usage(m) => eprintln!("error: {m}"),
            CliError::Output(m) => eprintln!("error: cannot write output: {m}"),
            CliError::Core(e) => eprintln!("error: {}: {e}", e.name()),
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(out) = cli.global.out.as_deref() {
        commands::ensure_parent(out)?;
    }
    match &cli.command {
        Command::Fit(a) => commands::cmd_fit(&cli.global, a),
        Command::Select(a) => commands::cmd_select(&cli.global, a),
        Command::Influence(a) => commands::cmd_influence(&cli.global, a),
        Command::Simulate(a) => commands::cmd_simulate(&cli.global, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ROBREG_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.exit_code())
        }
    }
}
