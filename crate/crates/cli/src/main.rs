//! Command line driver for the dynarc toolkit.
//!
//! Subcommands cover the full loop: `synth` builds a long-tail toy dataset,
//! `train` fits the margin-head model, `predict` retrieves and rescores,
//! `eval` computes GAP and accuracy, `ensemble` fuses model outputs, and
//! `gradcheck` runs the finite-difference suite.
//!
//! Exit codes: 0 on success, 1 for usage or configuration problems, 2 for
//! runtime failures (I/O, malformed data, diverged training).

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

/// Failures split by exit code. Usage problems exit 1, runtime problems 2.
#[derive(Debug)]
pub(crate) enum AppError {
    Usage(String),
    Runtime(String),
}

impl From<dynarc::Error> for AppError {
    fn from(e: dynarc::Error) -> Self {
        AppError::Runtime(e.to_string())
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(msg) | AppError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

/// Retrieval rescoring mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Mode {
    /// Nearest gallery neighbor wins; confidence is its cosine.
    Baseline,
    /// Top-k neighbors pooled per class with the first power.
    Pp1,
    /// Pp1 plus classifier-head fusion with the second power.
    Pp1Pp2,
}

impl Mode {
    pub(crate) fn parse(s: &str) -> Result<Self, AppError> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "pp1" => Ok(Mode::Pp1),
            "pp1+pp2" => Ok(Mode::Pp1Pp2),
            other => Err(AppError::Usage(format!(
                "invalid mode `{other}` (choices: baseline, pp1, pp1+pp2)"
            ))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Mode::Baseline => "baseline",
            Mode::Pp1 => "pp1",
            Mode::Pp1Pp2 => "pp1+pp2",
        };
        write!(f, "{name}")
    }
}

#[derive(Parser)]
#[command(
    name = "dynarc",
    version,
    about = "Sub-center margin training and landmark retrieval at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic long-tail dataset and write features + labels.
    Synth(SynthArgs),
    /// Train the linear encoder and sub-center margin head.
    Train(Box<TrainArgs>),
    /// Retrieve against a gallery and write predictions.
    Predict(PredictArgs),
    /// Score a predictions file against ground truth (GAP and accuracy).
    Eval(EvalArgs),
    /// Fuse per-model features (and optionally head scores).
    Ensemble(EnsembleArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(clap::Args)]
pub(crate) struct SynthArgs {
    /// Number of classes.
    #[arg(long, default_value_t = 200)]
    pub classes: usize,
    /// Zipf exponent for the class-size profile (0 = flat).
    #[arg(long, default_value_t = 1.2)]
    pub zipf: f64,
    /// Total number of samples across all classes.
    #[arg(long, default_value_t = 5000)]
    pub samples: usize,
    /// Input feature dimension.
    #[arg(long = "input-dim", default_value_t = 24)]
    pub input_dim: usize,
    /// Gaussian noise sigma around each class center.
    #[arg(long, default_value_t = 0.35)]
    pub noise: f64,
    /// Seed for the deterministic generator streams.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path for the feature matrix (EMB1).
    #[arg(long = "out-features")]
    pub out_features: PathBuf,
    /// Output path for the labels CSV.
    #[arg(long = "out-labels")]
    pub out_labels: PathBuf,
}

#[derive(clap::Args)]
pub(crate) struct TrainArgs {
    /// Input feature matrix (EMB1).
    #[arg(long)]
    pub features: PathBuf,
    /// Labels CSV; every row must carry a class.
    #[arg(long)]
    pub labels: PathBuf,
    /// Optional `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Margin family: `constant` or `dynamic`.
    #[arg(long = "margin.kind")]
    pub margin_kind: Option<String>,
    /// Power-law exponent of the dynamic family.
    #[arg(long = "margin.lambda")]
    pub margin_lambda: Option<f64>,
    /// Margin lower bound (or the constant level).
    #[arg(long = "margin.lower")]
    pub margin_lower: Option<f64>,
    /// Margin upper bound.
    #[arg(long = "margin.upper")]
    pub margin_upper: Option<f64>,
    /// Class size pinned to the upper margin; defaults to the observed minimum.
    #[arg(long = "margin.n-min")]
    pub margin_n_min: Option<usize>,
    /// Class size pinned to the lower margin; defaults to the observed maximum.
    #[arg(long = "margin.n-max")]
    pub margin_n_max: Option<usize>,
    /// Embedding dimension.
    #[arg(long = "train.embed-dim")]
    pub embed_dim: Option<usize>,
    /// Sub-centers per class.
    #[arg(long = "train.subcenters")]
    pub subcenters: Option<usize>,
    /// Training epochs.
    #[arg(long = "train.epochs")]
    pub epochs: Option<usize>,
    /// SGD learning rate.
    #[arg(long = "train.lr")]
    pub lr: Option<f64>,
    /// SGD momentum, in [0, 1).
    #[arg(long = "train.momentum")]
    pub momentum: Option<f64>,
    /// Minibatch size.
    #[arg(long = "train.batch-size")]
    pub batch_size: Option<usize>,
    /// Logit scale.
    #[arg(long = "train.scale")]
    pub scale: Option<f64>,
    /// Stratified fold count for the train/val split.
    #[arg(long = "train.folds")]
    pub folds: Option<usize>,
    /// Which fold is held out for validation.
    #[arg(long = "train.val-fold")]
    pub val_fold: Option<usize>,
    /// Seed for split, initialization, and batch order.
    #[arg(long = "train.seed")]
    pub seed: Option<u64>,
    /// Output path for the head checkpoint (AFH1).
    #[arg(long = "out-head")]
    pub out_head: PathBuf,
    /// Output path for the encoder matrix (EMB1).
    #[arg(long = "out-encoder")]
    pub out_encoder: PathBuf,
    /// Optional output path for the per-epoch metrics CSV.
    #[arg(long = "out-metrics")]
    pub out_metrics: Option<PathBuf>,
}

#[derive(clap::Args)]
pub(crate) struct PredictArgs {
    /// Gallery feature matrix (EMB1).
    #[arg(long = "gallery-features")]
    pub gallery_features: PathBuf,
    /// Gallery labels CSV; every row must carry a class.
    #[arg(long = "gallery-labels")]
    pub gallery_labels: PathBuf,
    /// Query feature matrix (EMB1).
    #[arg(long = "query-features")]
    pub query_features: PathBuf,
    /// Optional CSV naming the queries (same format as labels; classes ignored).
    #[arg(long = "query-ids")]
    pub query_ids: Option<PathBuf>,
    /// Optional encoder matrix; when given, features are mapped through it.
    #[arg(long)]
    pub encoder: Option<PathBuf>,
    /// Head checkpoint (AFH1); required by mode pp1+pp2.
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Rescoring mode: baseline, pp1, or pp1+pp2 (default pp1).
    #[arg(long)]
    pub mode: Option<String>,
    /// Neighbors retrieved per query.
    #[arg(long = "neighbor-k")]
    pub neighbor_k: Option<usize>,
    /// Power applied to neighbor cosines.
    #[arg(long)]
    pub p1: Option<f64>,
    /// Power applied to head cosines.
    #[arg(long)]
    pub p2: Option<f64>,
    /// Top head classes joining the candidate set.
    #[arg(long = "head-candidates")]
    pub head_candidates: Option<usize>,
    /// Drop the head-fusion stage, downgrading pp1+pp2 to pp1.
    #[arg(long = "no-head-fusion", default_value_t = false)]
    pub no_head_fusion: bool,
    /// Optional `key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output path for the predictions CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(clap::Args)]
pub(crate) struct EvalArgs {
    /// Predictions CSV (query_id,class_id,confidence).
    #[arg(long)]
    pub predictions: PathBuf,
    /// Ground-truth labels CSV; empty class marks a distractor.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(clap::Args)]
pub(crate) struct EnsembleArgs {
    /// Model spec `features.emb` or `features.emb:head_scores.emb`; repeatable.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Output path for the fused feature matrix (EMB1).
    #[arg(long = "out-features")]
    pub out_features: PathBuf,
    /// Optional output path for the averaged head scores (EMB1).
    #[arg(long = "out-head-scores")]
    pub out_head_scores: Option<PathBuf>,
}

#[derive(clap::Args)]
pub(crate) struct GradcheckArgs {
    /// Well-conditioned instances to test.
    #[arg(long, default_value_t = 50)]
    pub trials: usize,
    /// Seed for the instance stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Largest acceptable normwise relative error.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.cmd {
        Cmd::Synth(a) => commands::synth(a),
        Cmd::Train(a) => commands::train(a),
        Cmd::Predict(a) => commands::predict(a),
        Cmd::Eval(a) => commands::eval(a),
        Cmd::Ensemble(a) => commands::ensemble(a),
        Cmd::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(AppError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
