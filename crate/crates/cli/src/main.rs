//! `besm`: simulate matrix Bessel processes and run the verification suites.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 bad configuration, 3 a
//! verifier ran and failed (its reports are still written).

mod output;
mod report;
mod simulate;
mod suites;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "besm", version, about = "Matrix Bessel process simulation and verification")]
struct Cli {
    /// Worker threads (defaults to the number of CPUs). Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate BESM paths and write a path archive plus a summary.
    Simulate(simulate::SimulateArgs),
    /// Run one verification suite and write JSON-lines reports.
    Verify(VerifyArgs),
    /// Aggregate the reports in a run directory.
    Report {
        dir: PathBuf,
    },
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[command(subcommand)]
    suite: suites::Suite,
    #[command(flatten)]
    common: suites::Common,
}

/// How a command ended.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl From<besm_core::Error> for Failure {
    fn from(e: besm_core::Error) -> Self {
        use besm_core::Error as E;
        match e {
            E::NotPsd(_) | E::NotSymmetric(_) | E::SingularInput { .. } | E::BlowupPath | E::NonFinite => {
                Failure::Runtime(e.to_string())
            }
            other => Failure::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// `Ok(true)` when everything that was checked passed.
pub type Outcome = Result<bool, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match cli.command {
        Command::Simulate(args) => simulate::run(&args),
        Command::Verify(args) => suites::run(&args.suite, &args.common),
        Command::Report { dir } => report::run(&dir),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
