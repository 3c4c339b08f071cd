use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use wsteer::commands::{self, exit, ScanArgs, ScanObjective};
use wsteer_core::solver::LineScanGrid;

/// Covariance steering with a squared Wasserstein terminal cost.
///
/// Exit codes: 0 success, 1 input or validation error, 2 solver did not converge.
#[derive(Parser)]
#[command(name = "wsteer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Objective {
    A,
    B,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the optimal policy and write a solution file.
    Solve {
        config: PathBuf,
        /// Solution path (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Evaluate J along the segment between two solved policies.
    Scan {
        config_a: PathBuf,
        config_b: PathBuf,
        #[arg(long, default_value_t = -0.5, allow_hyphen_values = true)]
        gamma_min: f64,
        #[arg(long, default_value_t = 1.5, allow_hyphen_values = true)]
        gamma_max: f64,
        #[arg(long, default_value_t = 401)]
        points: usize,
        /// Comma-separated weights; each is solved and scanned separately.
        #[arg(long, value_delimiter = ',')]
        lambda_sweep: Option<Vec<f64>>,
        /// Which config's target defines J along the segment.
        #[arg(long, value_enum, default_value = "b")]
        objective: Objective,
        /// CSV path (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Finite-difference and certificate checks on one instance.
    Check { config: PathBuf },
    /// Monte Carlo rollout of a solved policy.
    Simulate {
        config: PathBuf,
        solution: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    wsteer::init_threads()?;
    match cli.command {
        Command::Solve { config, output } => commands::cmd_solve(&config, output.as_deref()),
        Command::Scan {
            config_a,
            config_b,
            gamma_min,
            gamma_max,
            points,
            lambda_sweep,
            objective,
            output,
        } => {
            let args = ScanArgs {
                grid: LineScanGrid {
                    gamma_min,
                    gamma_max,
                    points,
                },
                lambdas: lambda_sweep,
                objective: match objective {
                    Objective::A => ScanObjective::A,
                    Objective::B => ScanObjective::B,
                },
            };
            commands::cmd_scan(&config_a, &config_b, &args, output.as_deref())
        }
        Command::Check { config } => commands::cmd_check(&config),
        Command::Simulate {
            config,
            solution,
            samples,
            seed,
            json,
        } => commands::cmd_simulate(&config, &solution, samples, seed, json.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::INPUT_ERROR)
        }
    }
}
