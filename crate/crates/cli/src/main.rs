use std::path::PathBuf;
use std::process::ExitCode;

use branchlab_cli::config::Command;
use branchlab_cli::run::{execute, Invocation};
use clap::Parser;

/// Spectral checks, evolution-equation solves, Monte Carlo and limit
/// theorem verification for branching processes with immigration.
#[derive(Parser)]
#[command(name = "branchlab", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Theorem id for `verify` (overrides the config).
    #[arg(long)]
    theorem: Option<u8>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let status = execute(&Invocation {
        command: args.command,
        config: args.config,
        seed: args.seed,
        threads: args.threads,
        out: args.out,
        theorem: args.theorem,
    });
    ExitCode::from(status as u8)
}
