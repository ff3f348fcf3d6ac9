use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lsgm::{Assignment, CovarianceMode};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(
    name = "lsgm",
    version,
    about = "Out-of-distribution detection with chained Gaussian mixtures over hidden-layer features"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a detector on a train_in manifest.
    Fit(FitArgs),
    /// Score every sample of a manifest with a fitted model.
    Score(ScoreArgs),
    /// Compare in-distribution and OOD score files.
    Eval(EvalArgs),
    /// Export normalized cluster transition counts between two layers.
    ExportTransitions(ExportArgs),
    /// Write a synthetic train/test/OOD fixture with manifests.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LsgmGmm,
    LsgmDp,
    Mahalanobis,
    Softmax,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(
            self.to_possible_value()
                .expect("no skipped variants")
                .get_name(),
        )
    }
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::LsgmDp)]
    pub model_kind: ModelKind,
    /// Components per layer (lsgm-gmm only, required there).
    #[arg(long)]
    pub k: Option<usize>,
    /// Maximum components per layer (lsgm-dp only).
    #[arg(long)]
    pub truncation: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub concentration: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub prune_threshold: f64,
    #[arg(long, default_value = "full")]
    pub covariance: CovarianceMode,
    /// Pseudo-count added to every transition cell.
    #[arg(long, default_value_t = 1.0)]
    pub smoothing: f64,
    #[arg(long, default_value = "hard")]
    pub assignment: Assignment,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 300)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
    /// Also write the diagnostics document here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Score file to write (NPY, N x 1).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Scores of in-distribution samples (the positive class).
    #[arg(long)]
    pub in_scores: PathBuf,
    /// Scores of out-of-distribution samples.
    #[arg(long)]
    pub ood_scores: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub tpr_target: f64,
    /// Also write the metrics document here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Adjacent layers as `FROM,TO`, by index or by name.
    #[arg(long)]
    pub layer_pair: String,
    /// Matrix file to write (NPY).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory receiving train/, test_in/ and test_ood/.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub layers: usize,
    /// Clusters per layer.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 5000)]
    pub n_train: usize,
    #[arg(long, default_value_t = 1000)]
    pub n_test: usize,
    /// Standard deviation of cluster means around the origin.
    #[arg(long, default_value_t = 3.0)]
    pub spread: f64,
    /// Probability of each cluster's preferred successor.
    #[arg(long, default_value_t = 0.85)]
    pub stickiness: f64,
    /// Distance, in noise standard deviations, that OOD means move.
    #[arg(long, default_value_t = 6.0)]
    pub shift: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
