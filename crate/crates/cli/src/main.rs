//! `gsfm`: dataset generation, training, evaluation, inference, ablations
//! and self-verification.
//!
//! Exit codes: 0 success, 1 failed run or verification, 2 usage error.

mod commands;
mod config;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, configuration or input paths.
    Usage(String),
    /// The command ran and failed.
    Failure(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failure(m) => write!(f, "error: {m}"),
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

/// Turns library errors into run failures.
pub fn fail(e: impl std::fmt::Display) -> CliError {
    CliError::Failure(e.to_string())
}

#[derive(Parser)]
#[command(name = "gsfm", version, about = "Spectral filter memory networks for video object segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug, Default)]
pub struct ConfigArgs {
    /// JSON configuration file; missing fields take their defaults.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Override one field, e.g. `--set train.steps=50 --set model.lfm=off`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark in DAVIS layout (train/ and val/ splits).
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model: pseudo-video warm-up, then sequence training.
    Train {
        /// Dataset root from `gen-data`, or any DAVIS-layout directory.
        #[arg(long)]
        data: PathBuf,
        /// Run directory for the log, checkpoints and metrics.
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint directory written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many steps, counted from step 0 (for smoke runs and resumption tests).
        #[arg(long)]
        stop_at: Option<usize>,
        /// Skip the validation pass after training.
        #[arg(long)]
        no_eval: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a checkpoint (or a directory of predicted masks) on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, required_unless_present = "predictions", conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Directory with `<sequence>/NNNNN.png` label maps to score instead of running a model.
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Threads for sequence-level parallelism (overrides `eval.jobs`).
        #[arg(long)]
        jobs: Option<usize>,
        /// Write predicted masks as palette PNGs.
        #[arg(long)]
        save_masks: bool,
        /// Crop and resize sequences to the model input size (ground truth included).
        #[arg(long)]
        resize: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Segment sequences from their first-frame annotation and write palette PNGs.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// DAVIS-layout directory holding the sequences.
        #[arg(long)]
        input: PathBuf,
        /// Only these sequences (default: all).
        #[arg(long)]
        sequence: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
        /// Crop and resize sequences to the model input size.
        #[arg(long)]
        resize: bool,
    },
    /// Train and score the module and filter-placement variants over several seeds.
    Ablate {
        /// Dataset root from `gen-data`; without it the benchmark is generated in memory.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Grid cells trained in parallel (default: core count).
        #[arg(long)]
        jobs: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the oracle suite and print errors against tolerances.
    Verify,
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenData { out, force, cfg } => commands::gen_data(&out, force, &cfg),
        Command::Train {
            data,
            out,
            resume,
            stop_at,
            no_eval,
            cfg,
        } => commands::train(&commands::TrainArgs {
            data,
            out,
            resume,
            stop_at,
            evaluate: !no_eval,
            cfg,
        }),
        Command::Eval {
            data,
            checkpoint,
            predictions,
            out,
            jobs,
            save_masks,
            resize,
            cfg,
        } => commands::eval(&commands::EvalArgs {
            data,
            checkpoint,
            predictions,
            out,
            jobs,
            save_masks,
            resize,
            cfg,
        }),
        Command::Infer {
            checkpoint,
            input,
            sequence,
            out,
            jobs,
            resize,
        } => commands::infer(&checkpoint, &input, &sequence, &out, jobs, resize),
        Command::Ablate { data, out, jobs, cfg } => commands::ablate(data.as_deref(), &out, jobs, &cfg),
        Command::Verify => commands::verify(),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on its own for malformed command lines.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Failure(_) => 1,
            })
        }
    }
}
