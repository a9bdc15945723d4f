use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fedpaw::harness::{self, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "fedpaw", version, about = "Federated speed-prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic client corpus.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Overwrite an existing corpus.
        #[arg(long)]
        force: bool,
    },
    /// Execute every run of the experiment matrix.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Skip runs that already completed.
        #[arg(long)]
        resume: bool,
    },
    /// Summarise run directories into CSV tables.
    Report {
        /// Run directories, or directories containing them.
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Output directory; defaults to `report` next to the first input.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Generate { config, force } => {
            let cfg = load(&config)?;
            let m = harness::generate(&cfg, force)?;
            let rows: usize = m.clients.iter().map(|c| c.rows).sum();
            println!(
                "wrote {} clients ({rows} rows) to {}",
                m.clients.len(),
                harness::corpus_dir(&cfg).display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, jobs, resume } => {
            let cfg = load(&config)?;
            let summary = harness::run_matrix(&cfg, &RunOptions { jobs, resume })?;
            for r in &summary.results {
                match (r.status, r.best_mae) {
                    (harness::RunStatus::Completed, Some(m)) => {
                        println!("{}: best MAE {m:.4} at round {}", r.id, r.best_round.unwrap_or(0))
                    }
                    _ => eprintln!(
                        "{}: {:?} {}",
                        r.id,
                        r.status,
                        r.error.as_deref().unwrap_or_default()
                    ),
                }
            }
            if summary.skipped > 0 {
                println!("{} completed runs reused", summary.skipped);
            }
            Ok(if summary.all_completed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::Report { runs, out } => {
            let report = harness::build_report(&runs)?;
            let out = out.unwrap_or_else(|| {
                let base = runs[0].parent().map(PathBuf::from).unwrap_or_default();
                base.join("report")
            });
            report.write(&out)?;
            println!("{} runs summarised into {}", report.runs.len(), out.display());
            for (dir, why) in &report.incomplete {
                eprintln!("incomplete: {} ({why})", dir.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
