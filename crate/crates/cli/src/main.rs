//! `mxql`: deterministic CSV experiments for Gumbel regression and
//! expanded-loss value learning.
//!
//! Exit codes: 0 on success (diverged runs are data, not failures), 2 for
//! usage and configuration errors, 1 for everything else.

mod args;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;
use crate::config::UsageError;

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let seed = match &cli.command {
        args::Command::LossCurve(a) => a.common.seed,
        args::Command::ErrDist(a) => a.common.seed,
        args::Command::Regress(a) => a.common.seed,
        args::Command::MdpTrain(a) => a.common.seed,
        args::Command::Compare(a) => a.common.seed,
    };
    let result =
        commands::run(&cli.command).and_then(|r| output::emit(&r, cli.command.name(), seed));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
