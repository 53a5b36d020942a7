//! `clockgame`: solve, optimize, simulate and verify self-triggered games
//! from a JSON config.
//!
//! Exit codes: 0 success, 1 input error, 2 numerical non-convergence or a
//! failed verification.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] clockgame::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use clockgame::Error as E;
        match self {
            CliError::Numerical(_) => 2,
            CliError::Core(E::Numerical(_) | E::NotConverged(_)) => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GradArg {
    Implicit,
    Fd,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the solver tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Overrides the solver's iteration cap.
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Follower value iteration against the configured leader policy.
    SolveFollower(Common),
    /// Bilevel descent on the leader's head weights.
    OptimizeLeader {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "implicit")]
        grad: GradArg,
    },
    /// Damped simultaneous-move relaxation.
    Nash {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        damping: Option<f64>,
    },
    /// Rollouts of the leader against a solved follower policy.
    Simulate(Common),
    /// Dwell and control sensitivity table of a policy.
    Sweep(Common),
    /// Continuous LQ Nash feedback baseline.
    Baseline(Common),
    /// Re-checks saved follower artifacts.
    Verify(Common),
}

#[derive(Debug, Parser)]
#[command(name = "clockgame", version, about = "Self-triggered two-player games on PDMPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SolveFollower(c) => commands::solve_follower(&c),
        Command::OptimizeLeader { common, grad } => commands::optimize_leader(&common, grad),
        Command::Nash { common, damping } => commands::nash(&common, damping),
        Command::Simulate(c) => commands::simulate(&c),
        Command::Sweep(c) => commands::sweep(&c),
        Command::Baseline(c) => commands::baseline(&c),
        Command::Verify(c) => commands::verify(&c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
