//! Command implementations behind the `syncurator` binary.

pub mod args;
pub mod commands;
pub mod config;
pub mod io;

use args::{Cli, Command};
use commands::Outcome;
use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Runs one parsed invocation inside a worker pool of `--jobs` threads.
pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let cfg = RunConfig::resolve(&cli.global)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs.unwrap_or(0))
        .build()?;
    let out = &cli.global.out;
    pool.install(|| match &cli.command {
        Command::Score { inputs } => commands::score(&cfg, inputs, out),
        Command::Filter { scores } => commands::filter(&cfg, scores, out),
        Command::Eval {
            pairs,
            embeddings,
            traces,
        } => commands::eval(&cfg, pairs, embeddings, *traces, out),
        Command::Synth(a) => commands::synth(&cfg, a, out),
        Command::Trace {
            pair,
            stage,
            channel,
        } => commands::trace(&cfg, pair, stage, channel, out),
        Command::Report {
            scores,
            manifest,
            metrics,
        } => commands::report(&cfg, scores, manifest.as_deref(), metrics.as_deref(), out),
    })
}

/// Exit code for a finished or failed run.
pub fn exit_code(result: &anyhow::Result<Outcome>) -> i32 {
    match result {
        Ok(o) if o.failures == 0 => EXIT_OK,
        Ok(_) => EXIT_PARTIAL,
        Err(e) if e.is::<config::UsageError>() => EXIT_USAGE,
        Err(_) => EXIT_PARTIAL,
    }
}
