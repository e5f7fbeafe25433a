//! `chada`: synthetic data, self-distillation training and evaluation of the
//! channel-adaptive encoder and its two baselines.
//!
//! Data goes to files, progress and errors to stderr. Exit codes: 0 success,
//! 1 usage error, 2 data error, 3 numerical failure.

mod attmap;
mod config;
mod embeddings;
mod encode;
mod error;
mod evaluate;
mod model;
mod output;
mod pca;
mod reconstruct;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use chada_core::model::{Arch, Pooling};
use clap::{Args, Parser, Subcommand};

use crate::error::CliResult;

#[derive(Parser, Debug)]
#[command(name = "chada", version, about = "Channel-adaptive vision transformer workflow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command that builds or loads an encoder.
#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Trained checkpoint (`checkpoint.json`, with its `.bin` next to it).
    /// Without one, a randomly initialized encoder is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Encoder to initialize when no checkpoint is given.
    #[arg(long, value_parser = parse_arch)]
    pub arch: Option<Arch>,
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Initialization seed when no checkpoint is given.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset of MCIF images and a manifest.
    Synth(synth::SynthArgs),
    /// Self-distillation pretraining; writes checkpoints and a JSONL log.
    Train(train::TrainArgs),
    /// Embed every image of a dataset into a CSV.
    Encode(encode::EncodeArgs),
    /// Linear probe on an embeddings CSV over several seeds.
    Probe(evaluate::ProbeArgs),
    /// k-nearest-neighbour classification on an embeddings CSV.
    Knn(evaluate::KnnArgs),
    /// Train decoders that predict a held-out channel from the others.
    Reconstruct(reconstruct::ReconstructArgs),
    /// Write class-token attention heatmaps of one layer as PGM images.
    Attmap(attmap::AttmapArgs),
    /// Joint PCA of two embeddings CSVs.
    Pca(pca::PcaArgs),
    /// Aggregate report JSON files into one sorted table and JSON.
    Report(evaluate::ReportArgs),
}

pub fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e: chada_core::Error| e.to_string())
}

pub fn parse_pooling(s: &str) -> Result<Pooling, String> {
    s.parse().map_err(|e: chada_core::Error| e.to_string())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Train(a) => train::run(a),
        Command::Encode(a) => encode::run(a),
        Command::Probe(a) => evaluate::probe(a),
        Command::Knn(a) => evaluate::knn(a),
        Command::Reconstruct(a) => reconstruct::run(a),
        Command::Attmap(a) => attmap::run(a),
        Command::Pca(a) => pca::run(a),
        Command::Report(a) => evaluate::report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
