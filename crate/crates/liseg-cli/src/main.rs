//! `liseg` — one binary wiring the segmentation stack together: phantom
//! dataset synthesis, semi-supervised training, checkpoint evaluation, and
//! self-verification.
//!
//! Configuration is layered (defaults < config file < LISEG_* environment <
//! flags); each command writes the merged `config.resolved` beside its
//! outputs. Exit codes: 0 success, 1 usage error, 2 runtime failure,
//! 3 verification failure.

mod commands;
mod config;
mod lock;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
    Verification(String),
}

impl From<liseg_core::error::Error> for CliError {
    fn from(e: liseg_core::error::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "liseg", version, about = "Semi-supervised 3D liver segmentation at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset and its manifest.
    Synth(SynthArgs),
    /// Train the co-trained segmentation networks from a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest split.
    Eval(EvalArgs),
    /// Run the self-verification suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// key=value config file, applied before environment and flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Labeled bright-liver training cases.
    #[arg(long)]
    labeled: Option<usize>,
    /// Unlabeled bright-liver training cases.
    #[arg(long)]
    unlabeled_bright: Option<usize>,
    /// Unlabeled dark-liver training cases.
    #[arg(long)]
    unlabeled_dark: Option<usize>,
    /// Validation cases (alternating bright/dark).
    #[arg(long)]
    val: Option<usize>,
    /// Test cases (alternating bright/dark).
    #[arg(long)]
    test: Option<usize>,
    /// Cubic volume edge in voxels.
    #[arg(long)]
    grid: Option<usize>,
    /// Gaussian intensity noise level.
    #[arg(long)]
    noise_sigma: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// key=value config file, applied before environment and flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Path to manifest.json.
    #[arg(long)]
    manifest: Option<String>,
    /// Run directory for checkpoints, logs, and the resolved config.
    #[arg(long)]
    run: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// supervised | cps
    #[arg(long)]
    mode: Option<String>,
    /// S | B | L | toy
    #[arg(long)]
    scale: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    /// Consistency weight ceiling.
    #[arg(long)]
    lambda_max: Option<f64>,
    /// Epochs over which the consistency weight ramps up (auto = epochs/5).
    #[arg(long)]
    lambda_rampup_epochs: Option<String>,
    /// Cubic training patch edge (multiple of 32).
    #[arg(long)]
    patch: Option<usize>,
    /// Validate every N epochs (0 = final epoch only).
    #[arg(long)]
    val_interval: Option<usize>,
    /// Continue an interrupted run from its latest checkpoint.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// key=value config file, applied before environment and flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Network checkpoint (.ckpt).
    #[arg(long)]
    checkpoint: Option<String>,
    /// Path to manifest.json.
    #[arg(long)]
    manifest: Option<String>,
    /// train | val | test
    #[arg(long)]
    split: Option<String>,
    /// Restrict to one acquisition tag (e.g. GED4-like, T2-like); "all" keeps every case.
    #[arg(long)]
    modality: Option<String>,
    /// Cubic inference window edge (multiple of 32).
    #[arg(long)]
    patch: Option<usize>,
    /// full | hd95
    #[arg(long)]
    hd: Option<String>,
    /// Also write report.csv.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    csv: Option<bool>,
    /// Report directory (auto = reports/ beside the checkpoint's run).
    #[arg(long)]
    out: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// gradcheck | params | metrics | all
    suite: Option<String>,
    /// key=value config file, applied before environment and flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds per gradient check.
    #[arg(long)]
    seeds: Option<u64>,
    /// Random mask pairs for the metric oracles.
    #[arg(long)]
    pairs: Option<usize>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Verify(args) => commands::verify::run(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(3)
        }
    }
}
