use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use dqm::runner::{self, error_json, exit_code, Command};
use dqm::{DqmError, ScenarioConfig};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    /// Operators and polar decomposition of the initial state.
    Analyze,
    /// Propagate and write the time series and snapshots.
    Evolve,
    /// Action functionals over the configured λ grid.
    SweepLambda,
    /// Run the invariant suite.
    Check,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Analyze => Command::Analyze,
            Cmd::Evolve => Command::Evolve,
            Cmd::SweepLambda => Command::SweepLambda,
            Cmd::Check => Command::Check,
        }
    }
}

/// Deformed-momentum and Fisher-information laboratory on periodic grids.
///
/// Exit status: 0 pass, 1 invariant failure, 2 config error, 3 numerical abort.
#[derive(Debug, Parser)]
#[command(name = "dqm", version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides integrator.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Deformation parameter (overrides physics.lambda).
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
}

fn fail(err: &DqmError) -> ExitCode {
    eprintln!("{}", error_json(err));
    ExitCode::from(exit_code(err) as u8)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(runner::EXIT_CONFIG as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let mut cfg = match ScenarioConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Some(out) = args.out {
        cfg.output.dir = out;
    }
    if let Some(seed) = args.seed {
        cfg.integrator.seed = seed;
    }
    if let Some(lambda) = args.lambda {
        cfg.physics.lambda = lambda;
    }
    match runner::run(&cfg, args.command.into()) {
        Ok(outcome) => {
            println!("{}", outcome.report);
            if !outcome.passed {
                let failed = outcome.report["failed"].clone();
                eprintln!(
                    "{}",
                    serde_json::json!({
                        "status": "error",
                        "kind": "invariant_failure",
                        "exit_code": runner::EXIT_INVARIANT,
                        "message": format!("{failed} invariant check(s) failed; see report.json"),
                    })
                );
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => fail(&e),
    }
}
