use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vsm_core::experiment::{run_with_threads, ExperimentConfig};
use vsm_core::Error;

/// Reproducible experiments for the volatility-stabilized market limit.
#[derive(Parser)]
#[command(name = "vsmhl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
        /// Exit with status 3 unless every acceptance check passes.
        #[arg(long)]
        assert: bool,
    },
}

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_ASSERT: u8 = 3;

fn main() -> ExitCode {
    let Command::Run { config, output_dir, seed, threads, assert } = Cli::parse().command;

    let mut cfg = match ExperimentConfig::load(&config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(dir) = output_dir {
        cfg.output_dir = dir;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_CONFIG);
    }

    let report = match run_with_threads(&cfg, threads) {
        Ok(r) => r,
        Err(e @ (Error::Config(_) | Error::Validation(_))) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
        Err(e) => {
            eprintln!("run failed: {e}");
            return ExitCode::from(EXIT_FAILURE);
        }
    };

    for table in &report.tables {
        println!("wrote {}", cfg.output_dir.join(table).display());
    }
    for c in &report.checks {
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {}: {:.4e} (threshold {:e})", c.name, c.value, c.threshold);
    }
    if assert && !report.passed() {
        return ExitCode::from(EXIT_ASSERT);
    }
    ExitCode::SUCCESS
}
