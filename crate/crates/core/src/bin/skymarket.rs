//! Command-line entry point: resolves a configuration (file, `SKYMARKET_*`
//! environment variables, flags), runs the selected experiment, and reports
//! artifact paths.
//!
//! Exit codes: 0 success, 2 configuration error, 3 infeasible scenario,
//! 4 training diverged.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use skymarket::config::{resolve, CliOverrides, ExperimentKind};
use skymarket::experiments::{run, ExperimentError};

const EXIT_CONFIG: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(
    name = "skymarket",
    version,
    about = "Desk-scale simulator for UAV control loops priced over a shared wireless backhaul"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment config; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact output directory (overrides the config file).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Suppress per-file progress output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario's pricing game and dump association/allocation tables.
    Equilibrium,
    /// Train pruned and dense pricing policies against greedy/random baselines.
    Train,
    /// Equilibrium rewards over a growing user population at fixed fleet size.
    SweepUsers,
    /// Equilibrium rewards over a growing fleet at fixed user population.
    SweepUavs,
    /// Pruned training runs across a set of pruning start epochs.
    SweepPruning,
    /// Load, validate, and print the fully resolved configuration.
    ValidateConfig,
}

impl Command {
    fn kind(&self) -> Option<ExperimentKind> {
        match self {
            Command::Equilibrium => Some(ExperimentKind::EquilibriumSnapshot),
            Command::Train => Some(ExperimentKind::TrainingRun),
            Command::SweepUsers => Some(ExperimentKind::UserSweep),
            Command::SweepUavs => Some(ExperimentKind::UavSweep),
            Command::SweepPruning => Some(ExperimentKind::PruningEpochSweep),
            Command::ValidateConfig => None,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = CliOverrides {
        kind: cli.command.kind(),
        seed: cli.seed,
        out_dir: cli.out.clone(),
    };
    let spec = match resolve(cli.config.as_deref(), &overrides) {
        Ok(spec) => spec,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    if matches!(cli.command, Command::ValidateConfig) {
        if !cli.quiet {
            print!("{}", spec.to_toml());
        }
        return ExitCode::SUCCESS;
    }

    match run(&spec) {
        Ok(summary) => {
            if !cli.quiet {
                for file in &summary.files {
                    println!("wrote {}", file.display());
                }
            }
            if summary.diverged.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("warning: training diverged for {}", summary.diverged.join(", "));
                ExitCode::from(EXIT_DIVERGED)
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_infeasible() {
                ExitCode::from(EXIT_INFEASIBLE)
            } else if matches!(err, ExperimentError::WrongKind(_)) {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
