//! `dbrsplash` command-line front end.

mod cmd;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Exit codes shared by every subcommand.
pub mod exit {
    pub const OK: u8 = 0;
    pub const FAILURE: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const NOT_CONVERGED: u8 = 3;
    pub const CAPACITY: u8 = 4;
}

#[derive(Parser, Debug)]
#[command(name = "dbrsplash", version, about = "Distributed belief-residual Splash BP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a model file.
    Generate(cmd::generate::Args),
    /// Cut a graph across workers.
    Partition(cmd::partition::Args),
    /// Run inference and write beliefs, update counts and metrics.
    Infer(cmd::infer::Args),
    /// Compare beliefs against a reference.
    Validate(cmd::validate::Args),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DBRS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE } else { exit::OK });
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd::generate::run(a),
        Command::Partition(a) => cmd::partition::run(a),
        Command::Infer(a) => cmd::infer::run(a),
        Command::Validate(a) => cmd::validate::run(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(cmd::exit_code(&e))
        }
    }
}
