//! `xmodal`: generate synthetic scenes, run both pre-training stages, probe, visualize
//! and evaluate retrieval.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "xmodal", version, about = "Pixel-to-point contrastive pre-training on synthetic RGB-D scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` run config; the desk preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Print a complete config for a preset.
    Config {
        #[arg(long, default_value = "desk", value_parser = ["desk", "full"])]
        preset: String,
    },
    /// Generate scene directories and a seed manifest.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        scenes: usize,
    },
    /// Stage 1: pixel-level contrastive pre-training of the image model.
    #[command(name = "pretrain-2d")]
    Pretrain2d {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Stage 2: distil the frozen image model into the point model.
    #[command(name = "pretrain-3d")]
    Pretrain3d {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "frozen-2d")]
        frozen_2d: PathBuf,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Linear-probe segmentation with pretrained and random-init point features.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long = "features-from")]
        features_from: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        seeds: Option<usize>,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// t-SNE heatmaps of image or point embeddings.
    Visualize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
    },
    /// Top-1 point-to-pixel retrieval on one view of a scene.
    Retrieval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt2d: PathBuf,
        #[arg(long)]
        ckpt3d: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0)]
        view: usize,
        #[arg(long, default_value_t = 500)]
        pairs: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
