//! `explorer`: run the exploration engine and its verification tools.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

mod dedup_cmd;
mod explore;
mod index_cmd;
mod verify;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "explorer",
    version,
    about = "Targeted concept exploration engine"
)]
struct Cli {
    /// Global seed; overrides the config file seed.
    #[arg(long, global = true, env = "IE_SEED")]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the exploration loop and write metrics CSV plus a run manifest.
    Explore(explore::Args),
    /// Analytic and simulated concept-discovery times.
    Lemma(verify::LemmaArgs),
    /// Build, query and measure caption-embedding indexes.
    Index(index_cmd::Args),
    /// Count near-duplicate images between a reference and a test set.
    Dedup(dedup_cmd::Args),
    /// Compare the GP posterior with a dense linear-solve oracle.
    GprCheck(verify::GprArgs),
}

/// Bad input from the user; maps to exit code 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let usage = e.chain().any(|c| {
        c.downcast_ref::<Usage>().is_some()
            || c.downcast_ref::<explore_core::Error>()
                .is_some_and(explore_core::Error::is_usage)
    });
    if usage {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let res = match cli.command {
        Command::Explore(a) => explore::run(a, cli.seed),
        Command::Lemma(a) => verify::lemma(a, cli.seed),
        Command::Index(a) => index_cmd::run(a, cli.seed),
        Command::Dedup(a) => dedup_cmd::run(a),
        Command::GprCheck(a) => verify::gpr_check(a, cli.seed),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
