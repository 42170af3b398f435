use std::path::PathBuf;

use clap::Parser;

use moscolab::cli::{execute, Overrides};

/// Obstacle-problem experiments defined by a TOML configuration file.
#[derive(Debug, Parser)]
#[command(name = "moscolab", version)]
struct Args {
    /// Experiment configuration (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `out` in the configuration.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Random seed; overrides `seed` in the configuration.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for parallel solves (default: available parallelism).
    #[arg(long, value_name = "K", value_parser = clap::value_parser!(u32).range(1..))]
    threads: Option<u32>,
}

fn main() {
    let args = Args::parse();
    let overrides = Overrides {
        out: args.out,
        seed: args.seed,
        threads: args.threads.map(|k| k as usize),
    };
    std::process::exit(execute(&args.config, &overrides));
}
