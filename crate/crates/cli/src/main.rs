//! `robinlab` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or geometry error, 3 solver or
//! numerical failure, 4 walk timeout budget exceeded.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use robinlab::Error;

use config::{Flags, RunConfig};

#[derive(Parser)]
#[command(name = "robinlab", version, about = "Partially reflected Brownian motion and Robin problems on prefractal domains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a prefractal or polygon domain and write its geometry JSON.
    Geometry(Flags),
    /// Finite-difference Robin solve with the source held at 1.
    Solve(Flags),
    /// Partially reflected walks: boundary hits or a point estimate of u.
    Walk(Flags),
    /// Information dimension or L^q spectrum from a hits CSV.
    Measure(Flags),
    /// Sweeps over a, over generation, or the dimension comparison.
    Sweep(Flags),
    /// Discrete Robin Green function with a single pole.
    Green(Flags),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Geometry(_)
        | Error::Domain(_)
        | Error::ResourceGuard(_)
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => 2,
        Error::NonConvergence { .. } | Error::Numerics(_) | Error::Internal(_) => 3,
        Error::TimeoutBudget(_) => 4,
    }
}

fn run(name: &str, flags: &Flags, f: fn(RunConfig) -> robinlab::Result<()>) -> robinlab::Result<()> {
    let cfg = RunConfig::resolve(name, flags)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot start {n} threads: {e}")))?;
    }
    f(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Geometry(f) => run("geometry", f, commands::geometry),
        Command::Solve(f) => run("solve", f, commands::solve),
        Command::Walk(f) => run("walk", f, commands::walk),
        Command::Measure(f) => run("measure", f, commands::measure),
        Command::Sweep(f) => run("sweep", f, commands::sweep),
        Command::Green(f) => run("green", f, commands::green),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
