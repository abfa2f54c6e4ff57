mod args;
mod bench;
mod commands;

use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, CommandFactory, FromArgMatches};

use args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or an invalid parameter combination.
    Usage(String),
    /// Unreadable or inconsistent input data.
    Data(String),
}

fn alpha_explicit(matches: &ArgMatches) -> bool {
    match matches.subcommand() {
        Some(("cluster" | "compare", sub)) => sub.value_source("alpha") == Some(ValueSource::CommandLine),
        _ => false,
    }
}

fn run(cli: &Cli, alpha_explicit: bool) -> Result<(), CliError> {
    match &cli.command {
        Command::Cluster(a) => commands::cluster(a, alpha_explicit),
        Command::Eval(a) => commands::eval(a),
        Command::Compare(a) => commands::compare(a, alpha_explicit),
        Command::Synth(a) => commands::synth(a),
        Command::Bench(a) => bench::run(a),
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(&cli, alpha_explicit(&matches)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
