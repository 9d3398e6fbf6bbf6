//! Library side of the `promptcl` binary: argument definitions, the resolved
//! run spec, command implementations, and artifact handling. Kept as a lib
//! so integration tests can drive commands directly.

pub mod args;
pub mod artifacts;
pub mod commands;
pub mod spec;
pub mod sweeps;

use args::{Cli, Command};
use promptcl::Result;

/// Worker-thread cap requested by the invoked command, if any.
fn jobs_of(command: &Command) -> usize {
    match command {
        Command::Train(a) => a.jobs,
        Command::SweepRatio(a) => a.train.jobs,
        Command::SweepKshot(a) => a.train.jobs,
        _ => 0,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let jobs = jobs_of(&cli.command);
    if jobs > 0 {
        // Bounds all parallel fan-out (grid points, seeds, evaluation).
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| promptcl::Error::Config(format!("cannot size thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Split(args) => commands::cmd_split(args),
        Command::Train(args) => commands::cmd_train(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::SweepRatio(args) => sweeps::cmd_sweep_ratio(args),
        Command::SweepKshot(args) => sweeps::cmd_sweep_kshot(args),
        Command::Report(args) => sweeps::cmd_report(args),
    }
}
