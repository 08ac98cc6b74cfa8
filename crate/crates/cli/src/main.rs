//! `hetcd`: heterogeneous change detection from the command line.
//!
//! Each subcommand is one pipeline stage and reads the previous stage's
//! outputs from disk, so the expensive translation network is trained once
//! and shared by any number of classifier runs.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "hetcd", version, about = "Heterogeneous change detection with code-aligned autoencoders and one-class classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML run configuration; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic pre/post bundle with known changes
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the code-aligned autoencoders on a bundle
    TrainCae {
        #[command(flatten)]
        common: Common,
        /// Bundle manifest (or its directory)
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Batches per epoch
        #[arg(long)]
        batches: Option<usize>,
    },
    /// Translate both images across domains with a trained CAE
    Translate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        /// CAE checkpoint
        #[arg(long)]
        model: PathBuf,
    },
    /// Unsupervised change map: Otsu threshold on the difference images
    CaeMap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        translation: PathBuf,
    },
    /// Write the stacked per-pixel feature vectors
    Features {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        translation: PathBuf,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<hetcd::occ::FeatureVariant>,
    },
    /// Train a one-class classifier from sampled positive labels
    TrainOcc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        translation: PathBuf,
        #[arg(long)]
        npos: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<hetcd::occ::FeatureVariant>,
        #[arg(long, value_parser = parse_method)]
        method: Option<hetcd::occ::Method>,
    },
    /// Apply a trained classifier
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        translation: PathBuf,
        /// Classifier directory written by train-occ
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Score a prediction against the bundle's ground truth
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        /// Change map written by predict or cae-map
        #[arg(long)]
        prediction: PathBuf,
    },
    /// Label-budget ablation over methods, feature variants and npos
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        translation: PathBuf,
        /// Comma-separated npos values
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Restrict to one method
        #[arg(long, value_parser = parse_method)]
        method: Option<hetcd::occ::Method>,
        /// Restrict to one feature variant
        #[arg(long, value_parser = parse_variant)]
        variant: Option<hetcd::occ::FeatureVariant>,
    },
}

fn parse_variant(s: &str) -> Result<hetcd::occ::FeatureVariant, String> {
    s.parse().map_err(|e: hetcd::Error| e.to_string())
}

fn parse_method(s: &str) -> Result<hetcd::occ::Method, String> {
    s.parse().map_err(|e: hetcd::Error| e.to_string())
}

/// An error in how the tool was invoked rather than in the work itself.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            eprintln!("run `hetcd --help` for usage");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
