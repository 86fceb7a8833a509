//! Command-line driver: corpus preparation, GAN training, clip generation,
//! and evaluation reports.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error
//! (unreadable corpora, missing run artifacts), 3 numerical abort during
//! training.

mod commands;
mod manifest;
mod media;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use condvid::Error;

#[derive(Parser)]
#[command(
    name = "condvid",
    version,
    about = "Class-conditional video GAN: prepare data, train, generate, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the synthetic corpus (or index a preprocessed one) plus its
    /// zero-shot holdout split.
    Prepare(PrepareArgs),
    /// Run adversarial training, writing checkpoints, metrics, and sample
    /// grids under a run directory.
    Train(TrainArgs),
    /// Generate clips for one (motion, content) pair from a checkpoint.
    Generate(GenerateArgs),
    /// Score a checkpoint: FID plus classifier accuracy and class balance.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CommonOut {
    /// Write into this directory instead of a fresh timestamped one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parent for auto-named run directories.
    #[arg(long, default_value = "runs")]
    out_root: PathBuf,
}

#[derive(Args)]
struct PrepareArgs {
    /// Config file (TOML). Every key has a default; omit for the desk-scale
    /// synthetic setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset profile, overriding the config file (synthetic, weizmann, mug).
    #[arg(long)]
    profile: Option<String>,
    /// Clips per (motion, content) combination when generating the synthetic
    /// corpus.
    #[arg(long, default_value_t = 8)]
    clips_per_combo: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Directory of preprocessed clips for ingestion profiles
    /// (<root>/<motion>/<content>/<clip>/frame_0000.png).
    #[arg(long)]
    root: Option<PathBuf>,
    #[command(flatten)]
    out: CommonOut,
}

#[derive(Args)]
struct TrainArgs {
    /// A prepare run directory (its manifest locates corpus and split).
    #[arg(long)]
    data: PathBuf,
    /// Config file; defaults to the one recorded by prepare.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Step budget, overriding the config's `steps`.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value_t = 11)]
    seed: u64,
    /// Continue from this checkpoint instead of initializing fresh weights.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    out: CommonOut,
}

#[derive(Args)]
struct GenerateArgs {
    /// A train run directory; its manifest supplies config and checkpoints.
    #[arg(long)]
    run: PathBuf,
    /// Specific checkpoint file (default: the run's latest).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Motion class name, e.g. `up`.
    #[arg(long)]
    motion: String,
    /// Content class name, e.g. `red-square`.
    #[arg(long)]
    content: String,
    #[arg(long, default_value_t = 4)]
    count: usize,
    #[arg(long, default_value_t = 5)]
    seed: u64,
    #[command(flatten)]
    out: CommonOut,
}

#[derive(Args)]
struct EvalArgs {
    /// A train run directory; its manifest supplies config, corpus, and
    /// checkpoints.
    #[arg(long)]
    run: PathBuf,
    /// Specific checkpoint file (default: the run's latest).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Generated-clip count (default: the config's `fid_samples`).
    #[arg(long)]
    samples: Option<usize>,
    /// Classifier suite file: loaded if present, trained and saved there
    /// otherwise.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Also label generated clips with the synthetic-dataset oracle and
    /// report its accuracies (synthetic profile only).
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    #[command(flatten)]
    out: CommonOut,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite { .. } => 3,
        Error::Data(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successes; everything else is a usage error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Prepare(args) => commands::prepare(&args),
        Cmd::Train(args) => commands::train(&args),
        Cmd::Generate(args) => commands::generate(&args),
        Cmd::Eval(args) => commands::eval(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
