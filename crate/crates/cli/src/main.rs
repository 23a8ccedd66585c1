mod commands;

use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "dermafuse", version, about = "Skin-disease classification from images and patient narratives")]
struct Cli {
    /// Log level filter, e.g. `info` or `dermafuse=debug`.
    #[arg(long, global = true, default_value = "info", env = "DERMAFUSE_LOG")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and inspect the image dataset manifest.
    #[command(subcommand)]
    Forge(ForgeCmd),
    /// Validate and split the narrative corpus.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    TrainVision(TrainVisionArgs),
    EvalVision(EvalVisionArgs),
    /// Run (or resume) a grid of vision trainings.
    Sweep(SweepArgs),
    TrainText(TrainTextArgs),
    EvalText(EvalTextArgs),
    /// Classify one narrative by option elimination and print the trace.
    ChainRun(ChainRunArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Pair val images with val narratives and evaluate the fused pipeline.
    EvalFusion(EvalFusionArgs),
    /// Write a small synthetic dataset, corpus and stub models.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum ForgeCmd {
    /// Add one source directory to the manifest (created if missing).
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        source_id: String,
        /// JSON `{"labels": {"<dir>": code}, "ignore": [...]}`.
        #[arg(long)]
        label_map: PathBuf,
        /// Relative paths to skip, one per line.
        #[arg(long)]
        exclude: Option<PathBuf>,
        /// `skin26`, `toy4` or a registry JSON file. Only used for a new manifest.
        #[arg(long, default_value = "skin26")]
        registry: String,
        /// Also compute perceptual hashes.
        #[arg(long)]
        perceptual: bool,
    },
    /// Exact-hash dedup, or a near-duplicate pass with `--perceptual`.
    Dedup {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        perceptual: bool,
        #[arg(long, default_value_t = 4)]
        max_distance: u32,
    },
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        unstratified: bool,
    },
    Stats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Print the inverse-frequency sampling weights.
    Weights {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCmd {
    Validate {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 10)]
        per_class: usize,
    },
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        /// Defaults to rewriting the input file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the story-generation prompt for a keyword list.
    Prompt {
        #[arg(required = true)]
        keywords: Vec<String>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum Sampler {
    Plain,
    Weighted,
}

#[derive(Copy, Clone, ValueEnum)]
enum Augment {
    None,
    Standard,
    CropRotate,
}

#[derive(clap::Args)]
struct TrainVisionArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "tiny-cnn")]
    backbone: String,
    #[arg(long, default_value_t = 0.0)]
    freeze: f64,
    #[arg(long, default_value_t = 224)]
    resolution: u32,
    #[arg(long, value_enum, default_value = "weighted")]
    sampler: Sampler,
    #[arg(long, value_enum, default_value = "standard")]
    augmentation: Augment,
    /// Copy feature weights from this vision checkpoint.
    #[arg(long)]
    init_checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 20)]
    patience: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long)]
    samples_per_epoch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalVisionArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    ks: Vec<usize>,
    /// Also write the JSON report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SweepArgs {
    /// JSON `{"train": {...}, "cells": [...]}`.
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "sweep-results.json")]
    results: PathBuf,
}

#[derive(clap::Args)]
struct TrainTextArgs {
    /// Split narrative corpus.
    #[arg(long)]
    corpus: PathBuf,
    /// plain, mapping, options, chain, pred-N or pred-N-chain.
    #[arg(long, default_value = "plain")]
    mode: String,
    #[arg(long, default_value = "tiny-bow")]
    base: String,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    weight_decay: f64,
    /// Examples per narrative in the randomized modes.
    #[arg(long, default_value_t = 8)]
    per_narrative: usize,
    /// Chance that the gold class is among the noisy predictions. Use the
    /// image model's measured top-N accuracy. Required for pred modes.
    #[arg(long)]
    inclusion_prob: Option<f64>,
    /// Write the generated training examples as JSON lines.
    #[arg(long)]
    examples_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct EvalTextArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "plain")]
    mode: String,
    /// Evaluate through the elimination chain instead.
    #[arg(long)]
    chain_k: Option<usize>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ChainRunArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, conflicts_with = "narrative_file")]
    narrative: Option<String>,
    #[arg(long)]
    narrative_file: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Image predictions, most likely first, as class codes or names.
    #[arg(long, value_delimiter = ',')]
    predictions: Vec<String>,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
}

#[derive(clap::Args)]
struct EvalFusionArgs {
    #[arg(long)]
    vision: PathBuf,
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 5)]
    top_n: usize,
    /// Elimination target size, or `direct`.
    #[arg(long, default_value = "5")]
    chain_k: String,
    #[arg(long, default_value_t = 3)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    images_per_class: usize,
    #[arg(long, default_value_t = 40)]
    size: u32,
    #[arg(long, default_value_t = 10)]
    narratives_per_class: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_new(&cli.log).unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    if let Err(e) = commands::run(cli.command) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
