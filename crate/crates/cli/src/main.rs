use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod failure;

use failure::Failure;

/// Staggered difference-in-differences with cross-fitted ML nuisances.
#[derive(Debug, Parser)]
#[command(name = "sdidml", version, about)]
struct Cli {
    /// Worker threads for cross-fitting, bootstrap and Monte Carlo loops.
    #[arg(long, global = true, env = "SDIDML_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate effects on a panel CSV and write results into a directory.
    Run {
        /// JSON run configuration; absent fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Panel CSV; overrides `input_path` from the config.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Permit K=1 (nuisances fit and evaluated on the same units).
        #[arg(long)]
        allow_no_crossfit: bool,
    },
    /// Draw a synthetic panel and write `panel.csv` plus `oracle.json`.
    Simulate {
        /// Scenario name (e.g. `S1_homogeneous` or `S1`).
        scenario: Option<String>,
        /// JSON generator configuration, used instead of a named scenario.
        #[arg(long, conflicts_with = "scenario")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        output: PathBuf,
    },
    /// Monte Carlo comparison of the estimator against TWFE and unadjusted DID.
    Benchmark {
        scenario: String,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON Monte Carlo configuration (pipeline, bootstrap, placebo).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = ".")]
        output: PathBuf,
    },
    /// Summarize the diagnostics of a previous run.
    Diagnose {
        /// Directory written by `run`.
        results_dir: PathBuf,
        /// Pretrend p-values below this level are flagged.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot configure thread pool: {e}")))?;
    }
    match cli.command {
        Command::Run { config, input, seed, output, allow_no_crossfit } => {
            commands::run(config, input, seed, output, allow_no_crossfit)
        }
        Command::Simulate { scenario, config, seed, output } => commands::simulate(scenario, config, seed, &output),
        Command::Benchmark { scenario, reps, seed, config, output } => {
            commands::benchmark(&scenario, reps, seed, config, &output)
        }
        Command::Diagnose { results_dir, alpha } => commands::diagnose(&results_dir, alpha),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.exit_code())
        }
    }
}
