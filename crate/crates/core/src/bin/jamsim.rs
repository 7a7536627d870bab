use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jamsim::scenario::{compare, preset, run_batch, BatchSummary, ScenarioConfig, PRESETS};
use jamsim::scenario::RunOptions;

#[derive(Parser)]
#[command(name = "jamsim", about = "Jamming attacks on consensus-controlled DC microgrids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or preset name over a range of seeds.
    Run {
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replicas: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write per-seed trace files.
        #[arg(long)]
        traces: bool,
    },
    /// Compare two batch output directories seed by seed.
    Compare { dir_a: PathBuf, dir_b: PathBuf },
    /// Shipped scenarios.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand)]
enum PresetAction {
    List,
}

fn load(config: &str) -> Result<ScenarioConfig, String> {
    let path = Path::new(config);
    let cfg = if path.exists() { ScenarioConfig::load(path) } else { preset(config) };
    cfg.map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, seed, replicas, out, traces } => {
            let mut cfg = match load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let s = &cfg.file.seeds;
            let (base, reps) = (seed.unwrap_or(s.base), replicas.unwrap_or(s.replicas));
            if reps == 0 {
                eprintln!("error: --replicas must be at least 1");
                return ExitCode::from(2);
            }
            cfg = cfg.with_seeds(base, reps);
            let batch = run_batch(&cfg, RunOptions { traces });
            if let Err(e) = batch.write(&cfg, &out) {
                eprintln!("error: writing {}: {e}", out.display());
                return ExitCode::FAILURE;
            }
            print!("{}", batch.summary(&cfg));
            if batch.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Compare { dir_a, dir_b } => {
            let report = BatchSummary::load(&dir_a)
                .and_then(|a| BatchSummary::load(&dir_b).map(|b| (a, b)))
                .and_then(|(a, b)| compare(&a, &b));
            match report {
                Ok(c) => {
                    print!("{c}");
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        Command::Presets { action: PresetAction::List } => {
            for (name, description, _) in PRESETS {
                println!("{name:<16} {description}");
            }
            ExitCode::SUCCESS
        }
    }
}
