//! `epphier`: fit, pool, evaluate and simulate area-level HIV epidemics.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "epphier", version, about = "Hierarchical EPP estimation across areas")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "epphier.toml")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Eight comma-separated variance ratios, one per parameter.
    #[arg(long, global = true)]
    lambda: Option<String>,
    /// Worker threads; 0 lets the runtime decide.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit every configured area independently and write its ensemble.
    Fit,
    /// Pool fitted ensembles under the hierarchical prior.
    Pool,
    /// Score independent against pooled fits on full and truncated data.
    Evaluate,
    /// Simulate ANC, survey and demography files from a known truth.
    Simulate,
}

fn run(cli: &Cli) -> Result<()> {
    let mut loaded = config::load(&cli.config, cli.seed, cli.out_dir.as_deref())?;
    if let Some(l) = &cli.lambda {
        loaded.config.pooling.lambda = config::parse_lambda(l)?;
    }
    match cli.command {
        Command::Fit => commands::fit(&loaded),
        Command::Pool => commands::pool(&loaded),
        Command::Evaluate => commands::evaluate(&loaded),
        Command::Simulate => commands::simulate(&loaded),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = cli.threads;
    let result = if threads > 0 {
        epphier::par::with_threads(threads, || run(&cli))
    } else {
        run(&cli)
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
