use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};

use sixdma_cli::config::{load_config, ExperimentConfig, ExperimentKind};
use sixdma_cli::runner::{run_experiment, RunOptions};
use sixdma_cli::selftest::run_selftest;

/// Channel simulation and estimation experiments for movable-antenna THz
/// base stations.
#[derive(Parser)]
#[command(name = "sixdma", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML configuration file.
    Run {
        /// Path to the configuration file.
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (default: all hardware threads).
        #[arg(long)]
        threads: Option<usize>,
        /// Permit coarse grids beyond fifty million points.
        #[arg(long)]
        allow_huge_grid: bool,
    },
    /// Run the fast invariant suite and report one line per check.
    Selftest,
    /// Print the default configuration for an experiment kind.
    PrintConfig {
        /// One of: sparsity-map, capacity-vs-distance, mse-vs-snr, single-run.
        kind: String,
    },
}

fn parse_kind(kind: &str) -> Result<ExperimentKind> {
    Ok(match kind {
        "sparsity-map" => ExperimentKind::SparsityMap,
        "capacity-vs-distance" => ExperimentKind::CapacityVsDistance,
        "mse-vs-snr" => ExperimentKind::MseVsSnr,
        "single-run" => ExperimentKind::SingleRun,
        other => bail!(
            "unknown experiment kind {other:?}; expected sparsity-map, \
             capacity-vs-distance, mse-vs-snr, or single-run"
        ),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            config,
            seed,
            out,
            threads,
            allow_huge_grid,
        } => load_config(&config)
            .map_err(anyhow::Error::from)
            .and_then(|config| {
                run_experiment(
                    &config,
                    &RunOptions {
                        seed,
                        output_dir: out,
                        threads,
                        allow_huge_grid,
                    },
                )
            })
            .map(|summary| {
                println!(
                    "wrote {} and {}",
                    summary.paths.record.display(),
                    summary.paths.table.display()
                );
            }),
        Command::Selftest => {
            if run_selftest() {
                Ok(())
            } else {
                Err(anyhow::anyhow!("selftest reported failures"))
            }
        }
        Command::PrintConfig { kind } => parse_kind(&kind).map(|kind| {
            print!("{}", ExperimentConfig::default_for(kind).to_toml());
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}
