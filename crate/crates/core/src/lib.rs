//! Latent sequential Gaussian mixtures for out-of-distribution detection.
//!
//! Each selected hidden layer of a classifier gets a Gaussian mixture over
//! its pooled activations; adjacent layers are linked by cluster transition
//! matrices. The log joint probability of an input's inference trace,
//! evaluated with a forward recursion, is the detection score.

pub mod baselines;
pub mod chain;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mixture;
pub mod synthetic;
pub mod tensor;

pub use baselines::{
    fit_mahalanobis, lsgm_maha_restricted_score, mahalanobis_ensemble_score,
    mahalanobis_layer_score, max_softmax_score, MahalanobisLayer, MahalanobisParams,
};
pub use chain::{
    brute_force_log_prob, entropy, estimate_transitions, forward_log_prob, forward_states,
    score_batch, traces_from_layers, transition_statistics, Assignment, ForwardState, LsgmModel,
    TraceSample, TransitionMatrix,
};
pub use error::{Error, Result};
pub use metrics::{aupr, auroc, evaluate, tnr_at_tpr, Label, MetricsReport, ScoredDataset};
pub use mixture::{
    fit_dpgmm, fit_gmm_em, CovarianceMode, DpConfig, FitDiagnostics, FitOptions, LayerMixture,
};
pub use tensor::{cholesky, empirical_mean_cov, gaussian_log_pdf, log_sum_exp, Matrix, SpdFactor};
