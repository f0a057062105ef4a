//! Argument parsing and dispatch.

use std::path::PathBuf;

use anyhow::{bail, Result};
use auscult_core::{ClassWeightMode, DatasetId, Error};
use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, PipelineConfig};
use crate::pipeline::{self, PipelineError, SynthOptions};

pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_CHECKPOINT: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "auscult", version, about = "Heart-sound classification from mel-spectrogram images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
    /// Debug-level logging (RUST_LOG overrides).
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// Key-value pipeline configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for splitting, augmentation, initialisation and batching.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dataset class set, A or B.
    #[arg(long, global = true)]
    pub dataset: Option<DatasetId>,
    /// Class-weight rule: paper-literal or inverse-frequency.
    #[arg(long, global = true)]
    pub class_weights: Option<ClassWeightMode>,
    /// Config override, repeatable: `--set epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic heart-sound recordings and a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Recordings per category.
        #[arg(long, default_value_t = 10)]
        count: usize,
        /// Comma-separated categories; defaults to the dataset's class set.
        #[arg(long, value_delimiter = ',')]
        categories: Vec<String>,
        #[arg(long, default_value_t = 6.0)]
        seconds: f64,
        /// Defaults to 44100 Hz for dataset A and 4000 Hz for B.
        #[arg(long)]
        sample_rate: Option<u32>,
    },
    /// Decimate, denoise and cut recordings into chunks.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn chunks into mel matrices and PNG images.
    Spectrogram {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Split, augment, train and score the test set.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score an image manifest with a trained checkpoint.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify WAV files or directories of WAV files.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

/// Builds the effective configuration: file (or dataset defaults), then the
/// dedicated flags, then `--set` overrides, validated as a whole.
pub fn resolve_config(g: &GlobalArgs) -> Result<PipelineConfig> {
    let fallback = g.dataset.unwrap_or(DatasetId::A);
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path, fallback)?,
        None => PipelineConfig::defaults(fallback),
    };
    if let Some(d) = g.dataset {
        if d != cfg.dataset {
            bail!(ConfigError::Invalid {
                key: "dataset".into(),
                reason: format!("--dataset {d} conflicts with dataset {} in the config file", cfg.dataset),
            });
        }
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(m) = g.class_weights {
        cfg.class_weights = m;
    }
    cfg.apply_overrides(&g.overrides)?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    match cli.command {
        Command::Synth { out, count, categories, seconds, sample_rate } => {
            let categories = if categories.is_empty() {
                cfg.dataset.class_set().iter().map(|s| s.to_string()).collect()
            } else {
                categories
            };
            let sample_rate = sample_rate.unwrap_or(match cfg.dataset {
                DatasetId::A => 44100,
                DatasetId::B => 4000,
            });
            let opts = SynthOptions { dataset: cfg.dataset, categories, count, seconds, sample_rate, seed: cfg.seed };
            let m = pipeline::run_synth(&opts, &out)?;
            log::info!("wrote {} recordings to {}", m.len(), out.display());
        }
        Command::Preprocess { manifest, out } => {
            let r = pipeline::run_preprocess(&manifest, &cfg, &out)?;
            log::info!("{} chunks, {} files skipped, {} failed", r.chunks, r.skipped, r.failed);
        }
        Command::Spectrogram { manifest, out } => {
            let m = pipeline::run_spectrogram(&manifest, &cfg, &out)?;
            log::info!("wrote {} spectrograms", m.len());
        }
        Command::Train { manifest, out } => {
            let r = pipeline::run_train(&manifest, &cfg, &out)?;
            let auroc = r.report.auroc.as_ref().map(|a| a.macro_auroc);
            log::info!(
                "best epoch {:?}; test accuracy {:.4}, macro AUROC {auroc:?}",
                r.history.best_epoch,
                r.report.categorical_accuracy
            );
        }
        Command::Evaluate { manifest, checkpoint, out } => {
            let r = pipeline::run_evaluate(&manifest, &checkpoint, &out)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
        }
        Command::Predict { checkpoint, out, inputs } => {
            let preds = pipeline::run_predict(&checkpoint, &inputs)?;
            let json = serde_json::to_string_pretty(&preds)? + "\n";
            match out {
                Some(p) => std::fs::write(&p, json)?,
                None => print!("{json}"),
            }
        }
    }
    Ok(())
}

fn core_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter { .. } | Error::UnknownDataset(_) => EXIT_CONFIG,
        Error::FileNotFound(_)
        | Error::MalformedWav { .. }
        | Error::UnsupportedCodec { .. }
        | Error::Io { .. }
        | Error::TooShort(_)
        | Error::UnknownClass(_)
        | Error::Empty(_)
        | Error::Manifest(_)
        | Error::Image(_) => EXIT_INPUT,
        Error::ShapeMismatch(_) | Error::NonFinite(_) | Error::StaleCache { .. } | Error::Diverged { .. } => {
            EXIT_NUMERIC
        }
        Error::Checkpoint(_) => EXIT_CHECKPOINT,
    }
}

/// Exit status for a failed run, taken from the first categorised error in the chain.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return core_code(e);
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return EXIT_CONFIG;
        }
        if let Some(e) = cause.downcast_ref::<PipelineError>() {
            return match e {
                PipelineError::DatasetMismatch { .. } => EXIT_CONFIG,
                PipelineError::AllFailed { .. } | PipelineError::DuplicateStem(_) => EXIT_INPUT,
                PipelineError::IncompatibleCheckpoint(_) => EXIT_CHECKPOINT,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_INPUT;
        }
    }
    EXIT_INTERNAL
}
