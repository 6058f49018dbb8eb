//! `fairsvi` command-line front end.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;
use fairsvi::ErrorClass;

use args::{Cli, Command};

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Divergence => 4,
        ErrorClass::Internal => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let out = cli.output_dir.as_deref();
    let result = match &cli.command {
        Command::Train(a) => commands::cmd_train(a, out),
        Command::Grid(a) => commands::cmd_grid(a, out),
        Command::Audit(a) => commands::cmd_audit(a, out),
        Command::Evaluate(a) => commands::cmd_evaluate(a, out),
        Command::Synth(a) => commands::cmd_synth(a, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
