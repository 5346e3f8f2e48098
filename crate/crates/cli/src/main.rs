use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use window_rl_cli::commands::{self, Algorithm};
use window_rl_cli::config::{Experiment, Overrides};
use window_rl_cli::{Failure, EXIT_DOMAIN, EXIT_OK};

#[derive(Parser)]
#[command(name = "window-rl", version, about = "Finite-memory POMDP learning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run a single seed instead of the configured list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the number of learner steps.
    #[arg(long, global = true)]
    steps: Option<u64>,
    /// Override the output root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, env = "WINDOW_RL_JOBS", default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file and list every violated invariant.
    Validate { model: PathBuf },
    /// Exact policy value, optimal Q, invariant measure and fixed points.
    Oracle { config: PathBuf },
    /// Run a learner over every seed.
    Learn {
        #[arg(value_enum)]
        algorithm: LearnKind,
        config: PathBuf,
    },
    /// Evaluate the configured error bounds.
    Bounds { config: PathBuf },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum LearnKind {
    Td,
    Q,
}

fn run(cli: Cli) -> Result<i32, Failure> {
    let overrides = Overrides { seed: cli.seed, steps: cli.steps, out: cli.out };
    match cli.command {
        Command::Validate { model } => {
            let report = commands::validate(&model)?;
            if report.is_valid() {
                println!("{}: model is valid", model.display());
                return Ok(EXIT_OK);
            }
            for v in &report.violations {
                println!("{}: {v}", model.display());
            }
            Ok(EXIT_DOMAIN)
        }
        Command::Oracle { config } => {
            let exp = Experiment::load(&config, &overrides)?;
            report_paths(&commands::oracle(&exp)?);
            Ok(EXIT_OK)
        }
        Command::Learn { algorithm, config } => {
            let exp = Experiment::load(&config, &overrides)?;
            let algorithm = match algorithm {
                LearnKind::Td => Algorithm::Td,
                LearnKind::Q => Algorithm::Q,
            };
            report_paths(&commands::learn(&exp, algorithm)?);
            Ok(EXIT_OK)
        }
        Command::Bounds { config } => {
            let exp = Experiment::load(&config, &overrides)?;
            let (paths, out) = commands::bounds(&exp)?;
            for r in &out.reports {
                let verdict = if r.satisfied { "satisfied" } else { "VIOLATED" };
                println!("{}: lhs {:.6e} rhs {:.6e} {verdict}", r.name, r.lhs, r.rhs);
            }
            report_paths(&paths);
            Ok(EXIT_OK)
        }
    }
}

fn report_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(cli)),
        Err(err) => Err(Failure::Config(format!("cannot start {} worker threads: {err}", cli.jobs))),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
