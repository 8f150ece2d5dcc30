//! Scenario runner: parses a scenario file, executes it in the simulator,
//! evaluates embedded assertions and emits the trace and report.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use appraide::scenario::{parse_scenario, run_scenario};

/// Bundled example scenarios, runnable by name when no such file exists.
const FIXTURES: &[(&str, &str)] = &[
    (
        "scenario1_intersection.txt",
        include_str!("../fixtures/scenario1_intersection.txt"),
    ),
    (
        "scenario2_personlist.txt",
        include_str!("../fixtures/scenario2_personlist.txt"),
    ),
    (
        "deletion_churn.txt",
        include_str!("../fixtures/deletion_churn.txt"),
    ),
    (
        "matching_basic.txt",
        include_str!("../fixtures/matching_basic.txt"),
    ),
    (
        "reputation_thresholds.txt",
        include_str!("../fixtures/reputation_thresholds.txt"),
    ),
];

#[derive(Parser)]
#[command(name = "appraide", about = "Scripted-scenario runner for the ApprAide simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (or a bundled fixture by name).
    Run {
        file: String,
        /// Overrides the scenario's seed directive.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the event trace to this path.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the final world snapshot to this path.
        #[arg(long)]
        dump_world: Option<PathBuf>,
    },
    /// List the bundled example scenarios.
    Fixtures,
}

fn load(file: &str) -> Result<String, String> {
    match std::fs::read_to_string(file) {
        Ok(text) => Ok(text),
        Err(read_err) => FIXTURES
            .iter()
            .find(|(name, _)| *name == file)
            .map(|(_, text)| text.to_string())
            .ok_or_else(|| format!("cannot read {file}: {read_err}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Fixtures => {
            for (name, _) in FIXTURES {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Run {
            file,
            seed,
            trace,
            dump_world,
        } => {
            let text = match load(&file) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let scenario = match parse_scenario(&text) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("parse error: {e}");
                    return ExitCode::from(2);
                }
            };
            let report = run_scenario(&scenario, seed);
            print!("{}", report.summary());
            if let Some(path) = trace {
                if let Err(e) = std::fs::write(&path, &report.trace) {
                    eprintln!("error: cannot write trace to {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            if let Some(path) = dump_world {
                if let Err(e) = std::fs::write(&path, report.world.dump()) {
                    eprintln!("error: cannot write snapshot to {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    }
}
