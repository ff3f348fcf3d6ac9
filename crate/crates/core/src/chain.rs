//! The sequential model over layers: cluster transition matrices between
//! adjacent representation spaces, the forward recursion for the joint
//! trace probability, and an exhaustive enumeration used to check it.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::LayerMixture;
use crate::tensor::{log_sum_exp_unchecked, Matrix};

/// Upper bound on the number of traces [`brute_force_log_prob`] enumerates.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// How samples are attributed to clusters when counting transitions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assignment {
    /// Most responsible component (ties to the lowest index).
    #[default]
    Hard,
    /// Full responsibility vectors.
    Soft,
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Assignment::Hard => "hard",
            Assignment::Soft => "soft",
        })
    }
}

impl FromStr for Assignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(Assignment::Hard),
            "soft" => Ok(Assignment::Soft),
            other => Err(Error::invalid(format!("unknown assignment mode '{other}'"))),
        }
    }
}

/// Row-stochastic matrix of `P(z_{i+1} = b | z_i = a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    probs: Matrix,
    smoothing: f64,
}

impl TransitionMatrix {
    pub fn new(probs: Matrix, smoothing: f64) -> Result<Self> {
        if probs.rows() == 0 || probs.cols() == 0 {
            return Err(Error::invalid("transition matrix must be non-empty"));
        }
        for (a, row) in probs.row_iter().enumerate() {
            if row.iter().any(|p| *p < 0.0) {
                return Err(Error::invalid(format!(
                    "transition row {a} has a negative entry"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("transition row {a} sums to {s}")));
            }
        }
        Ok(TransitionMatrix { probs, smoothing })
    }

    /// Normalizes a count matrix after adding `smoothing` to every cell.
    /// `layer` only labels errors.
    pub fn from_counts(counts: &Matrix, smoothing: f64, layer: usize) -> Result<Self> {
        if !(smoothing >= 0.0 && smoothing.is_finite()) {
            return Err(Error::invalid("smoothing must be finite and >= 0"));
        }
        let mut probs = Matrix::zeros(counts.rows(), counts.cols());
        for (a, row) in counts.row_iter().enumerate() {
            let total: f64 = row.iter().map(|c| c + smoothing).sum();
            if total.is_nan() || total <= 0.0 {
                return Err(Error::ZeroRow { layer, cluster: a });
            }
            for (b, c) in row.iter().enumerate() {
                probs[(a, b)] = (c + smoothing) / total;
            }
        }
        Self::new(probs, smoothing)
    }

    pub fn from_k(&self) -> usize {
        self.probs.rows()
    }

    pub fn to_k(&self) -> usize {
        self.probs.cols()
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }
}

/// Per-layer mixtures chained by transition matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct LsgmModel {
    layers: Vec<LayerMixture>,
    transitions: Vec<TransitionMatrix>,
    layer_names: Vec<String>,
}

impl LsgmModel {
    pub fn new(
        layers: Vec<LayerMixture>,
        transitions: Vec<TransitionMatrix>,
        layer_names: Vec<String>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("a model needs at least one layer"));
        }
        if transitions.len() + 1 != layers.len() {
            return Err(Error::invalid(format!(
                "{} layers need {} transitions, got {}",
                layers.len(),
                layers.len() - 1,
                transitions.len()
            )));
        }
        if layer_names.len() != layers.len() {
            return Err(Error::invalid(format!(
                "{} layer names for {} layers",
                layer_names.len(),
                layers.len()
            )));
        }
        for (i, t) in transitions.iter().enumerate() {
            let (from, to) = (layers[i].num_components(), layers[i + 1].num_components());
            if t.from_k() != from || t.to_k() != to {
                return Err(Error::invalid(format!(
                    "transition {i} is {}x{}, layers have {from} and {to} components",
                    t.from_k(),
                    t.to_k()
                )));
            }
        }
        Ok(LsgmModel {
            layers,
            transitions,
            layer_names,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[LayerMixture] {
        &self.layers
    }

    pub fn transitions(&self) -> &[TransitionMatrix] {
        &self.transitions
    }

    pub fn layer_names(&self) -> &[String] {
        &self.layer_names
    }

    fn check_trace(&self, trace: &TraceSample) -> Result<()> {
        if trace.num_layers() != self.num_layers() {
            return Err(Error::invalid(format!(
                "trace has {} layers, model has {}",
                trace.num_layers(),
                self.num_layers()
            )));
        }
        for (i, (x, layer)) in trace.per_layer.iter().zip(&self.layers).enumerate() {
            if x.len() != layer.dim() {
                return Err(Error::invalid(format!(
                    "layer {i}: feature dimension {} but mixture dimension {}",
                    x.len(),
                    layer.dim()
                )));
            }
        }
        Ok(())
    }
}

/// The observed features of one input, one vector per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSample {
    pub per_layer: Vec<Vec<f64>>,
}

impl TraceSample {
    pub fn new(per_layer: Vec<Vec<f64>>) -> Self {
        TraceSample { per_layer }
    }

    /// Row `index` of every layer's feature matrix.
    pub fn from_rows(features_per_layer: &[Matrix], index: usize) -> Self {
        TraceSample {
            per_layer: features_per_layer
                .iter()
                .map(|m| m.row(index).to_vec())
                .collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.per_layer.len()
    }
}

/// Splits per-layer feature matrices into traces.
pub fn traces_from_layers(features_per_layer: &[Matrix]) -> Result<Vec<TraceSample>> {
    let n = common_rows(features_per_layer)?;
    Ok((0..n)
        .map(|i| TraceSample::from_rows(features_per_layer, i))
        .collect())
}

fn common_rows(features_per_layer: &[Matrix]) -> Result<usize> {
    let n = features_per_layer
        .first()
        .map(|m| m.rows())
        .ok_or_else(|| Error::invalid("no feature layers given"))?;
    for (i, m) in features_per_layer.iter().enumerate() {
        if m.rows() != n {
            return Err(Error::invalid(format!(
                "layer {i} has {} samples, layer 0 has {n}",
                m.rows()
            )));
        }
    }
    Ok(n)
}

/// Log forward variable `ln alpha_i(z_i)` for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardState {
    pub layer_index: usize,
    pub log_alpha: Vec<f64>,
}

fn cluster_weights(
    layer: &LayerMixture,
    features: &Matrix,
    assignment: Assignment,
) -> Result<Vec<Vec<f64>>> {
    features
        .row_iter()
        .map(|x| match assignment {
            Assignment::Hard => {
                let mut v = vec![0.0; layer.num_components()];
                v[layer.map_component(x)?] = 1.0;
                Ok(v)
            }
            Assignment::Soft => layer.responsibilities(x),
        })
        .collect()
}

fn check_layers(layers: &[LayerMixture], features_per_layer: &[Matrix]) -> Result<usize> {
    if layers.len() != features_per_layer.len() {
        return Err(Error::invalid(format!(
            "{} mixtures but {} feature layers",
            layers.len(),
            features_per_layer.len()
        )));
    }
    let n = common_rows(features_per_layer)?;
    for (i, (l, f)) in layers.iter().zip(features_per_layer).enumerate() {
        if l.dim() != f.cols() {
            return Err(Error::invalid(format!(
                "layer {i}: features have {} columns, mixture dimension {}",
                f.cols(),
                l.dim()
            )));
        }
    }
    Ok(n)
}

/// Accumulates `sum_n w_a(n) w_b(n)` between two layers.
fn count_matrix(from: &[Vec<f64>], to: &[Vec<f64>], kf: usize, kt: usize) -> Matrix {
    let mut counts = Matrix::zeros(kf, kt);
    for (wa, wb) in from.iter().zip(to) {
        for (a, &pa) in wa.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (b, &pb) in wb.iter().enumerate() {
                counts[(a, b)] += pa * pb;
            }
        }
    }
    counts
}

/// Estimates every adjacent-layer transition matrix from co-occurrence
/// counts of cluster assignments on the same samples.
pub fn estimate_transitions(
    layers: &[LayerMixture],
    features_per_layer: &[Matrix],
    assignment: Assignment,
    smoothing: f64,
) -> Result<Vec<TransitionMatrix>> {
    check_layers(layers, features_per_layer)?;
    if !(smoothing >= 0.0 && smoothing.is_finite()) {
        return Err(Error::invalid("smoothing must be finite and >= 0"));
    }
    let weights: Vec<Vec<Vec<f64>>> = layers
        .iter()
        .zip(features_per_layer)
        .map(|(l, f)| cluster_weights(l, f, assignment))
        .collect::<Result<_>>()?;
    (0..layers.len().saturating_sub(1))
        .map(|i| {
            let counts = count_matrix(
                &weights[i],
                &weights[i + 1],
                layers[i].num_components(),
                layers[i + 1].num_components(),
            );
            TransitionMatrix::from_counts(&counts, smoothing, i)
        })
        .collect()
}

/// Runs the forward recursion and returns every layer's state.
pub fn forward_states(model: &LsgmModel, trace: &TraceSample) -> Result<Vec<ForwardState>> {
    model.check_trace(trace)?;
    let first = &model.layers[0];
    let mut log_alpha = first.component_log_pdfs(&trace.per_layer[0])?;
    for (a, lw) in log_alpha.iter_mut().zip(first.log_weights()) {
        *a += lw;
    }
    let mut states = Vec::with_capacity(model.num_layers());
    states.push(ForwardState {
        layer_index: 0,
        log_alpha,
    });
    for (i, t) in model.transitions.iter().enumerate() {
        let prev = &states[i].log_alpha;
        let emit = model.layers[i + 1].component_log_pdfs(&trace.per_layer[i + 1])?;
        let log_alpha = forward_step(prev, t.probs(), &emit);
        states.push(ForwardState {
            layer_index: i + 1,
            log_alpha,
        });
    }
    Ok(states)
}

/// `ln alpha'[b] = emit[b] + ln sum_a P[a, b] alpha[a]`, evaluated as a
/// matrix-vector product on `alpha` rescaled by its maximum.
fn forward_step(prev: &[f64], probs: &Matrix, emit: &[f64]) -> Vec<f64> {
    let max = prev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![f64::NEG_INFINITY; emit.len()];
    }
    let mut acc = vec![0.0; emit.len()];
    for (a, &la) in prev.iter().enumerate() {
        let scale = (la - max).exp();
        if scale == 0.0 {
            continue;
        }
        for (s, p) in acc.iter_mut().zip(probs.row(a)) {
            *s += scale * p;
        }
    }
    acc.iter()
        .zip(emit)
        .map(|(s, e)| {
            if *s > 0.0 {
                e + max + s.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// `ln P(x_1, ..., x_m)` by the forward recursion; O(m K^2) per trace.
pub fn forward_log_prob(model: &LsgmModel, trace: &TraceSample) -> Result<f64> {
    let states = forward_states(model, trace)?;
    let last = states.last().expect("model has at least one layer");
    Ok(log_sum_exp_unchecked(&last.log_alpha))
}

/// `ln P(x_1, ..., x_m)` by summing over every cluster trace explicitly.
pub fn brute_force_log_prob(model: &LsgmModel, trace: &TraceSample) -> Result<f64> {
    model.check_trace(trace)?;
    let total: u128 = model
        .layers
        .iter()
        .map(|l| l.num_components() as u128)
        .try_fold(1u128, |acc, k| acc.checked_mul(k))
        .unwrap_or(u128::MAX);
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge {
            traces: total,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let emits: Vec<Vec<f64>> = model
        .layers
        .iter()
        .zip(&trace.per_layer)
        .map(|(l, x)| l.component_log_pdfs(x))
        .collect::<Result<_>>()?;
    let log_trans: Vec<Vec<Vec<f64>>> = model
        .transitions
        .iter()
        .map(|t| {
            t.probs()
                .row_iter()
                .map(|row| row.iter().map(|p| p.ln()).collect())
                .collect()
        })
        .collect();
    let m = model.num_layers();
    let mut z = vec![0usize; m];
    let mut terms = Vec::with_capacity(total as usize);
    loop {
        let mut s = model.layers[0].log_weights()[z[0]] + emits[0][z[0]];
        for i in 1..m {
            s += log_trans[i - 1][z[i - 1]][z[i]] + emits[i][z[i]];
        }
        terms.push(s);
        // odometer increment
        let mut i = m;
        loop {
            if i == 0 {
                return Ok(log_sum_exp_unchecked(&terms));
            }
            i -= 1;
            z[i] += 1;
            if z[i] < model.layers[i].num_components() {
                break;
            }
            z[i] = 0;
        }
    }
}

/// Scores every trace; output order matches input order.
pub fn score_batch(model: &LsgmModel, traces: &[TraceSample]) -> Result<Vec<f64>> {
    traces
        .par_iter()
        .enumerate()
        .map(|(index, t)| {
            forward_log_prob(model, t).map_err(|e| Error::Trace {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Normalized frequency of hard cluster transitions between two adjacent
/// layers on a dataset; entries sum to one.
pub fn transition_statistics(
    model: &LsgmModel,
    features_per_layer: &[Matrix],
    layer_pair: (usize, usize),
) -> Result<Matrix> {
    let (i, j) = layer_pair;
    if j != i + 1 || j >= model.num_layers() {
        return Err(Error::invalid(format!(
            "layer pair ({i}, {j}) is not an adjacent pair of a {}-layer model",
            model.num_layers()
        )));
    }
    let n = check_layers(&model.layers, features_per_layer)?;
    if n == 0 {
        return Err(Error::invalid("no samples to count transitions over"));
    }
    let from = cluster_weights(&model.layers[i], &features_per_layer[i], Assignment::Hard)?;
    let to = cluster_weights(&model.layers[j], &features_per_layer[j], Assignment::Hard)?;
    let counts = count_matrix(
        &from,
        &to,
        model.layers[i].num_components(),
        model.layers[j].num_components(),
    );
    Ok(counts.scaled(1.0 / n as f64))
}

/// Shannon entropy (nats) of a matrix of probabilities.
pub fn entropy(probs: &Matrix) -> f64 {
    probs
        .as_slice()
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.ln())
        .sum()
}
