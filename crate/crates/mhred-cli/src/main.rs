//! Command-line front end for the dialogue response toolkit: corpus
//! synthesis, dataset preparation, training, generation, and evaluation as
//! reproducible seeded runs.
//!
//! Settings resolve as flag > config file > environment variable (paths
//! only) > default, and every run records its resolved configuration in a
//! manifest next to its outputs. Progress goes to stderr through the
//! logger; files and the stdout summaries hold the machine-readable
//! results.

mod commands;
mod dataset;
mod manifest;
mod overlay;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mhred::data::ExtractionMode;

use crate::overlay::Overlay;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModeArg {
    /// Whole turns with all their images
    Aggregated,
    /// One context element per image, text dropped
    Unrolled,
}

impl From<ModeArg> for ExtractionMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Aggregated => ExtractionMode::Aggregated,
            ModeArg::Unrolled => ExtractionMode::Unrolled,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mhred",
    version,
    about = "Multimodal hierarchical dialogue response toolkit"
)]
struct Cli {
    /// TOML config file; flags take precedence over its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split transcripts into example files with a vocabulary
    Prepare(commands::prepare::PrepareArgs),
    /// Train a model on a prepared dataset
    Train(commands::train::TrainArgs),
    /// Generate responses from a checkpoint
    Generate(commands::generate::GenerateArgs),
    /// Score a hypothesis file against references
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Compare two systems with paired bootstrap resampling
    Compare(commands::compare::CompareArgs),
    /// Synthesize a controlled dialogue corpus
    Synth(commands::synth::SynthArgs),
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let overlay = Overlay::load(cli.config.as_deref())?;
    match cli.command {
        Command::Prepare(args) => commands::prepare::run(args, &overlay),
        Command::Train(args) => commands::train::run(args, &overlay),
        Command::Generate(args) => commands::generate::run(args, &overlay),
        Command::Evaluate(args) => commands::evaluate::run(args, &overlay),
        Command::Compare(args) => commands::compare::run(args, &overlay),
        Command::Synth(args) => commands::synth::run(args, &overlay),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
