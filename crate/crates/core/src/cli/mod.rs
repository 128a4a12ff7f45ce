//! The `foregan` command-line tool.
//!
//! Exit status: 0 on success, 2 for usage or configuration problems, 3 for
//! runtime or numerical failures.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ModalitySelection, RunConfig};

use crate::data::Challenge;
use crate::error::Error;
use crate::eval::Aggregation;
use crate::gan::Modality;

#[derive(Parser, Debug)]
#[command(name = "foregan", version, about = "RGB-D moving object segmentation with GAN background models")]
pub struct Cli {
    /// Run configuration (JSON).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset description, overriding the config.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for training and inversion, overriding the config.
    #[arg(long, global = true, env = "FOREGAN_SEED")]
    pub seed: Option<u64>,
    /// Worker threads for frame-parallel stages (0 = one per core).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    /// Restrict to one sequence.
    #[arg(long, global = true)]
    pub sequence: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a background model per sequence.
    Train {
        #[arg(long, value_parser = parse_modality, default_value = "rgb")]
        modality: Modality,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Segment every frame and write rgb, depth and fused masks.
    Segment {
        /// Use the true backgrounds of a synthetic dataset instead of trained models.
        #[arg(long)]
        oracle: bool,
        #[arg(long, value_enum)]
        modality: Option<ModalitySelection>,
        /// Inversion steps per frame.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score masks against ground truth.
    Eval {
        /// Mask directory (defaults to `<out>/masks`).
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long, value_parser = parse_aggregation)]
        aggregation: Option<Aggregation>,
    },
    /// Render a synthetic RGB-D dataset with ground truth and true backgrounds.
    Synth {
        /// Destination directory.
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value = "synthetic")]
        name: String,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, value_parser = parse_challenge, default_value = "shadow")]
        challenge: Challenge,
    },
    /// Write per-frame comparison strips from segmentation intermediates.
    Visualize {
        /// Number of frames to render (default: all).
        #[arg(long)]
        frames: Option<usize>,
    },
}

fn parse_modality(s: &str) -> Result<Modality, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_json_enum<T: serde::de::DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

fn parse_aggregation(s: &str) -> Result<Aggregation, String> {
    parse_json_enum(s)
}

fn parse_challenge(s: &str) -> Result<Challenge, String> {
    parse_json_enum(s)
}

/// Marks an error as a usage problem (exit status 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::Parameter(_)
            | Error::Load { .. }
            | Error::Structural { .. }
            | Error::Shape(_)
            | Error::Json(_),
        ) => 2,
        _ => 3,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    commands::dispatch(cli)
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
