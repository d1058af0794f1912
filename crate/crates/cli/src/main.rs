mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use medusa_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "medusa",
    version,
    about = "Multimodal speech emotion recognition: training, ensembling and reporting"
)]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Config override `dotted.key=value`; repeatable, recorded in the run's config snapshot.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Log progress (repeat for per-step detail).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Writes a synthetic corpus from a generator spec.
    Generate {
        /// Generator spec (TOML); either a bare spec or a config with a `[synthetic]` table.
        spec: PathBuf,
        /// Output directory.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Trains stage 1 or 2 and writes checkpoints, history and metrics into the run directory.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Stage 2: the stage-1 checkpoint to fine-tune. Otherwise a `last` checkpoint to continue.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Validate the config and print the parameter count.
        #[arg(long)]
        dry_run: bool,
    },
    /// Scores a checkpoint on one split.
    Evaluate {
        /// Defaults to the best checkpoint of the latest trained stage in the run directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to test when the corpus has a test split, else val.
        #[arg(long)]
        split: Option<String>,
        /// Print metrics as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Aggregates ensemble members by voting, a meta-classifier, or a soup of meta-classifiers.
    Ensemble {
        /// Member run directories or checkpoint files; defaults to `ensemble.members`.
        #[arg(long, value_delimiter = ',')]
        members: Vec<PathBuf>,
        /// Directory with precomputed `train/`, `val/` and `eval/` posterior sets.
        #[arg(long, conflicts_with = "members")]
        posteriors: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::All)]
        mode: Mode,
        /// Threads for member evaluation.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Trains every ablation variant over matched seeds.
    Ablate {
        /// Variants to compare against the full model (default: all).
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Seeds (default: the config seed).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Consolidates run directories into a table, a JSON report and optional plots.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write the machine-readable report here.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write SVG training curves and confusion matrices into this directory.
        #[arg(long)]
        plots: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Vote,
    Soft,
    Meta,
    Soup,
    All,
}

/// Failure with the exit code it maps to.
pub enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        let user = e.chain().any(|c| {
            matches!(
                c.downcast_ref::<Error>(),
                Some(
                    Error::Config(_)
                        | Error::Parse { .. }
                        | Error::MissingField { .. }
                        | Error::InvalidSpec(_)
                        | Error::StageMismatch { .. }
                )
            )
        });
        if user {
            Failure::Usage(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
