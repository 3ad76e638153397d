//! `bspde-lab`: run degenerate backward SPDE experiments from a config file.
//!
//! Exit codes: 0 ok, 1 usage or config error, 2 violation or failure.

mod artifacts;
mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use config::LoadedConfig;
use error::CliError;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "bspde-lab", version, about = "Degenerate backward SPDE laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (sectioned key = value text).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `[output] directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the internal parallel loops.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for randomized fields; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Run the coefficient condition checkers.
    Check,
    /// Solve, verify the energy estimates and write artifacts.
    Solve,
    /// Viscosity or exponent sweep of the fitted constants.
    Sweep,
    /// Policy iteration, maximum-condition certificate and duality defect.
    Control,
    /// Compare the solver with the configured closed-form oracle.
    OracleTest,
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let path = cli
        .config
        .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let loaded = LoadedConfig::from_path(&path)?.with_overrides(cli.seed, cli.out);
    log::info!("config {} hash {}", path.display(), loaded.hash);
    match cli.command {
        Command::Check => commands::check(&loaded),
        Command::Solve => commands::solve_cmd(&loaded),
        Command::Sweep => commands::sweep(&loaded),
        Command::Control => commands::control(&loaded),
        Command::OracleTest => commands::oracle_test(&loaded),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(path) => println!("report: {}", path.display()),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
