//! Per-layer density models: a finite Gaussian mixture fitted by EM and a
//! truncated Dirichlet-process mixture fitted by mean-field variational
//! inference over stick-breaking weights and Gaussian-Wishart components.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::tensor::{
    cholesky, empirical_mean_cov, gaussian_log_pdf, log_sum_exp_unchecked, Matrix, SpdFactor,
    LN_2PI,
};

/// Weight below which an EM component counts as collapsed.
const DEGENERATE_WEIGHT: f64 = 1e-10;
const MAX_RESEEDS: usize = 3;
const LLOYD_ITERS: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    #[default]
    Full,
    Diagonal,
    TiedFull,
}

impl CovarianceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CovarianceMode::Full => "full",
            CovarianceMode::Diagonal => "diagonal",
            CovarianceMode::TiedFull => "tied-full",
        }
    }
}

impl fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(CovarianceMode::Full),
            "diagonal" | "diag" => Ok(CovarianceMode::Diagonal),
            "tied-full" | "tied" => Ok(CovarianceMode::TiedFull),
            other => Err(Error::invalid(format!("unknown covariance mode '{other}'"))),
        }
    }
}

/// The fitted density of one representation space.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMixture {
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    cov_factors: Vec<SpdFactor>,
    covariance_mode: CovarianceMode,
    dim: usize,
}

impl LayerMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        cov_factors: Vec<SpdFactor>,
        covariance_mode: CovarianceMode,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        if means.len() != k || cov_factors.len() != k {
            return Err(Error::invalid(format!(
                "{k} weights but {} means and {} covariances",
                means.len(),
                cov_factors.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid(
                "mixture weights must be finite and non-negative",
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mixture weights sum to {total}, not 1"
            )));
        }
        let dim = means[0].len();
        for (j, (m, f)) in means.iter().zip(&cov_factors).enumerate() {
            if m.len() != dim || f.dim() != dim {
                return Err(Error::invalid(format!(
                    "component {j} has dimension {}/{}, expected {dim}",
                    m.len(),
                    f.dim()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("component {j} mean is not finite")));
            }
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(LayerMixture {
            weights,
            log_weights,
            means,
            cov_factors,
            covariance_mode,
            dim,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn cov_factors(&self) -> &[SpdFactor] {
        &self.cov_factors
    }

    pub fn covariance_mode(&self) -> CovarianceMode {
        self.covariance_mode
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::invalid(format!(
                "feature has dimension {}, mixture expects {}",
                x.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Unweighted log-density of `x` under every component.
    pub fn component_log_pdfs(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.means
            .iter()
            .zip(&self.cov_factors)
            .map(|(m, f)| gaussian_log_pdf(x, m, f))
            .collect()
    }

    /// `ln p(x)` under the full mixture.
    pub fn marginal_log_pdf(&self, x: &[f64]) -> Result<f64> {
        let joint = self.weighted_log_pdfs(x)?;
        Ok(log_sum_exp_unchecked(&joint))
    }

    /// Posterior probability of each component given `x`.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        let joint = self.weighted_log_pdfs(x)?;
        Ok(softmax_log(&joint))
    }

    /// Index of the most responsible component; ties go to the lowest index.
    pub fn map_component(&self, x: &[f64]) -> Result<usize> {
        let joint = self.weighted_log_pdfs(x)?;
        Ok(argmax(&joint))
    }

    fn weighted_log_pdfs(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut v = self.component_log_pdfs(x)?;
        for (a, lw) in v.iter_mut().zip(&self.log_weights) {
            *a += lw;
        }
        Ok(v)
    }
}

/// Normalizes log-weights into probabilities.
pub(crate) fn softmax_log(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp_unchecked(logits);
    if lse == f64::NEG_INFINITY {
        return vec![1.0 / logits.len() as f64; logits.len()];
    }
    let mut p: Vec<f64> = logits.iter().map(|v| (v - lse).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// First index of the maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitDiagnostics {
    pub iterations: usize,
    /// Mean per-sample log-likelihood (EM) or evidence lower bound (DP)
    /// after each iteration.
    pub log_likelihood_trace: Vec<f64>,
    pub converged: bool,
    pub effective_components: usize,
    pub warnings: Vec<String>,
}

/// Seed and stopping rule shared by both fitting routines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub seed: u64,
    pub max_iter: usize,
    /// Relative change in the objective below which the fit is converged.
    pub tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            seed: 0,
            max_iter: 300,
            tol: 1e-7,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::invalid("tol must be non-negative"));
        }
        Ok(())
    }

    fn converged(&self, prev: f64, cur: f64) -> bool {
        (cur - prev).abs() <= self.tol * prev.abs().max(1.0)
    }
}

/// Hyperparameters of the truncated Dirichlet-process mixture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    /// Maximum number of components.
    pub truncation: usize,
    pub concentration: f64,
    /// Components with expected weight below this are dropped.
    pub prune_threshold: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        DpConfig {
            truncation: 20,
            concentration: 1.0,
            prune_threshold: 1e-2,
        }
    }
}

impl DpConfig {
    /// Validates the configuration, returning a warning when the prune
    /// threshold is large enough to remove every component.
    pub fn validate(&self) -> Result<Option<String>> {
        if self.truncation == 0 {
            return Err(Error::invalid("truncation must be at least 1"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::invalid("concentration must be positive"));
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold < 1.0) {
            return Err(Error::invalid("prune_threshold must lie in (0, 1)"));
        }
        if self.prune_threshold >= 1.0 / self.truncation as f64 {
            return Ok(Some(format!(
                "prune threshold {} >= 1/truncation; every component may fall below it",
                self.prune_threshold
            )));
        }
        Ok(None)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by a few Lloyd iterations; returns the hard
/// label of every row.
fn kmeans_init(features: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = features.rows();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    centers.push(features.row(rng.random_range(0..n)).to_vec());
    let mut d2: Vec<f64> = features
        .row_iter()
        .map(|r| sq_dist(r, &centers[0]))
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = features.row(idx).to_vec();
        for (d, r) in d2.iter_mut().zip(features.row_iter()) {
            *d = d.min(sq_dist(r, &c));
        }
        centers.push(c);
    }

    let nearest = |r: &[f64], centers: &[Vec<f64>]| {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centers.iter().enumerate() {
            let d = sq_dist(r, c);
            if d < best.1 {
                best = (j, d);
            }
        }
        best.0
    };
    let mut labels: Vec<usize> = features.row_iter().map(|r| nearest(r, &centers)).collect();
    let d = features.cols();
    for _ in 0..LLOYD_ITERS {
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in features.row_iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(r) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next: Vec<usize> = features.row_iter().map(|r| nearest(r, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}

fn one_hot(labels: &[usize], k: usize) -> Matrix {
    let mut r = Matrix::zeros(labels.len(), k);
    for (i, &l) in labels.iter().enumerate() {
        r[(i, l)] = 1.0;
    }
    r
}

/// Weighted sufficient statistics of one component.
struct ComponentStats {
    count: f64,
    mean: Vec<f64>,
    /// `sum_n r_n (x_n - mean)(x_n - mean)^T`, not normalized.
    scatter: Matrix,
}

fn component_stats(features: &Matrix, resp: &Matrix, k: usize) -> ComponentStats {
    let d = features.cols();
    let count: f64 = (0..features.rows()).map(|i| resp[(i, k)]).sum();
    let mut mean = vec![0.0; d];
    let mut scatter = Matrix::zeros(d, d);
    if count <= 0.0 {
        return ComponentStats {
            count: 0.0,
            mean,
            scatter,
        };
    }
    for (i, r) in features.row_iter().enumerate() {
        let w = resp[(i, k)];
        for (m, v) in mean.iter_mut().zip(r) {
            *m += w * v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut c = vec![0.0; d];
    for (i, r) in features.row_iter().enumerate() {
        let w = resp[(i, k)];
        if w == 0.0 {
            continue;
        }
        for ((ci, v), m) in c.iter_mut().zip(r).zip(&mean) {
            *ci = v - m;
        }
        for a in 0..d {
            let wa = w * c[a];
            for b in 0..=a {
                scatter[(a, b)] += wa * c[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            scatter[(b, a)] = scatter[(a, b)];
        }
    }
    ComponentStats {
        count,
        mean,
        scatter,
    }
}

fn diagonal_of(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        out[(i, i)] = m[(i, i)];
    }
    out
}

struct EmState {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    factors: Vec<SpdFactor>,
}

/// E-step: returns the mean log-likelihood, the responsibility matrix and
/// each sample's log-likelihood.
fn e_step(features: &Matrix, state: &EmState) -> Result<(f64, Matrix, Vec<f64>)> {
    let n = features.rows();
    let k = state.weights.len();
    let log_w: Vec<f64> = state.weights.iter().map(|w| w.ln()).collect();
    let mut resp = Matrix::zeros(n, k);
    let mut point_ll = Vec::with_capacity(n);
    let mut buf = vec![0.0; k];
    for (i, x) in features.row_iter().enumerate() {
        for j in 0..k {
            buf[j] = log_w[j] + gaussian_log_pdf(x, &state.means[j], &state.factors[j])?;
        }
        let ll = log_sum_exp_unchecked(&buf);
        for j in 0..k {
            resp[(i, j)] = (buf[j] - ll).exp();
        }
        point_ll.push(ll);
    }
    let mean_ll = point_ll.iter().sum::<f64>() / n as f64;
    Ok((mean_ll, resp, point_ll))
}

struct Reseeder<'a> {
    /// Sample indices ordered from worst to best fit.
    order: Vec<usize>,
    next: usize,
    used: usize,
    global_factor: &'a SpdFactor,
}

fn m_step(
    features: &Matrix,
    resp: &Matrix,
    mode: CovarianceMode,
    reseeder: &mut Reseeder<'_>,
    diag: &mut FitDiagnostics,
) -> Result<EmState> {
    let n = features.rows() as f64;
    let k = resp.cols();
    let mut stats: Vec<ComponentStats> =
        (0..k).map(|j| component_stats(features, resp, j)).collect();

    let mut reseeded: Vec<(Vec<f64>, SpdFactor)> = Vec::new();
    let mut keep = Vec::with_capacity(k);
    for (j, s) in stats.iter().enumerate() {
        if s.count / n >= DEGENERATE_WEIGHT {
            keep.push(j);
        } else if reseeder.used < MAX_RESEEDS && reseeder.next < reseeder.order.len() {
            let idx = reseeder.order[reseeder.next];
            reseeder.next += 1;
            reseeder.used += 1;
            diag.warnings
                .push(format!("component {j} collapsed; reseeded at sample {idx}"));
            log::warn!("component {j} collapsed; reseeded at sample {idx}");
            reseeded.push((features.row(idx).to_vec(), reseeder.global_factor.clone()));
        } else {
            diag.warnings
                .push(format!("component {j} collapsed; pruned"));
            log::warn!("component {j} collapsed; pruned");
        }
    }

    let tied = if mode == CovarianceMode::TiedFull {
        let mut pooled = Matrix::zeros(features.cols(), features.cols());
        for &j in &keep {
            pooled.add_scaled(1.0, &stats[j].scatter);
        }
        Some(cholesky(&pooled.scaled(1.0 / n), 0.0)?)
    } else {
        None
    };

    let mut weights = Vec::with_capacity(keep.len() + reseeded.len());
    let mut means = Vec::with_capacity(weights.capacity());
    let mut factors = Vec::with_capacity(weights.capacity());
    for &j in &keep {
        let s = &mut stats[j];
        let factor = match (&tied, mode) {
            (Some(t), _) => t.clone(),
            (None, CovarianceMode::Diagonal) => {
                cholesky(&diagonal_of(&s.scatter.scaled(1.0 / s.count)), 0.0)?
            }
            (None, _) => cholesky(&s.scatter.scaled(1.0 / s.count), 0.0)?,
        };
        weights.push(s.count / n);
        means.push(std::mem::take(&mut s.mean));
        factors.push(factor);
    }
    for (mean, factor) in reseeded {
        weights.push(1.0 / n);
        means.push(mean);
        factors.push(match &tied {
            Some(t) => t.clone(),
            None if mode == CovarianceMode::Diagonal => {
                cholesky(&diagonal_of(&factor.reconstruct()), 0.0)?
            }
            None => factor,
        });
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(EmState {
        weights,
        means,
        factors,
    })
}

fn check_features(features: &Matrix, k: usize, what: &str) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid(format!("{what} must be at least 1")));
    }
    if features.cols() == 0 {
        return Err(Error::invalid("features have zero columns"));
    }
    if k > features.rows() {
        return Err(Error::invalid(format!(
            "{what} = {k} exceeds the number of samples ({})",
            features.rows()
        )));
    }
    Ok(())
}

/// Fits a `k`-component Gaussian mixture by expectation maximization,
/// initialized with k-means++ from `options.seed`.
pub fn fit_gmm_em(
    features: &Matrix,
    k: usize,
    mode: CovarianceMode,
    options: &FitOptions,
) -> Result<(LayerMixture, FitDiagnostics)> {
    check_features(features, k, "k")?;
    options.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let labels = kmeans_init(features, k, &mut rng);
    let (_, global_cov) = empirical_mean_cov(features, None)?;
    let global_factor = cholesky(&global_cov, 0.0)?;

    let mut diag = FitDiagnostics::default();
    // Before the first E-step, rank samples by distance to their center.
    let init_resp = one_hot(&labels, k);
    let init_state_means: Vec<Vec<f64>> = (0..k)
        .map(|j| component_stats(features, &init_resp, j).mean)
        .collect();
    let mut order: Vec<usize> = (0..features.rows()).collect();
    let dist: Vec<f64> = features
        .row_iter()
        .zip(&labels)
        .map(|(r, &l)| sq_dist(r, &init_state_means[l]))
        .collect();
    order.sort_by(|a, b| dist[*b].total_cmp(&dist[*a]).then(a.cmp(b)));
    let mut reseeder = Reseeder {
        order,
        next: 0,
        used: 0,
        global_factor: &global_factor,
    };

    let mut state = m_step(features, &init_resp, mode, &mut reseeder, &mut diag)?;
    loop {
        let (ll, resp, point_ll) = e_step(features, &state)?;
        let prev = diag.log_likelihood_trace.last().copied();
        diag.log_likelihood_trace.push(ll);
        if let Some(prev) = prev {
            if options.converged(prev, ll) {
                diag.converged = true;
                break;
            }
        }
        if diag.iterations >= options.max_iter {
            break;
        }
        let mut order: Vec<usize> = (0..features.rows()).collect();
        order.sort_by(|a, b| point_ll[*a].total_cmp(&point_ll[*b]).then(a.cmp(b)));
        reseeder.order = order;
        reseeder.next = 0;
        state = m_step(features, &resp, mode, &mut reseeder, &mut diag)?;
        diag.iterations += 1;
    }
    diag.effective_components = state.weights.len();
    let mixture = LayerMixture::new(state.weights, state.means, state.factors, mode)?;
    Ok((mixture, diag))
}

/// Normal-Wishart prior with empirical-Bayes scale.
struct DpPrior {
    concentration: f64,
    beta0: f64,
    nu0: f64,
    mean0: Vec<f64>,
    /// Inverse scale matrix `W0^{-1}`.
    w0_inv: Matrix,
    ln_b0: f64,
}

/// Variational posterior of one component: `q(mu, Lambda)` is
/// Normal-Wishart with parameters `(mean, beta, w_inv^{-1}, nu)`.
struct VarComponent {
    count: f64,
    xbar: Vec<f64>,
    scatter: Matrix,
    beta: f64,
    nu: f64,
    mean: Vec<f64>,
    w_inv: SpdFactor,
    /// `E[ln |Lambda|]`.
    e_log_det: f64,
}

struct DpState {
    components: Vec<VarComponent>,
    /// Beta parameters of the first `T - 1` sticks; the last stick is 1.
    sticks: Vec<(f64, f64)>,
    /// `E[ln pi_k]`.
    e_log_pi: Vec<f64>,
}

/// `ln B(W, nu)`, the Wishart log-normalizer, given `ln |W|`.
fn wishart_ln_b(ln_det_w: f64, nu: f64, d: usize) -> f64 {
    let df = d as f64;
    let lg: f64 = (1..=d).map(|i| ln_gamma((nu + 1.0 - i as f64) / 2.0)).sum();
    -0.5 * nu * ln_det_w - (0.5 * nu * df * 2f64.ln() + 0.25 * df * (df - 1.0) * PI.ln() + lg)
}

fn wishart_e_log_det(ln_det_w: f64, nu: f64, d: usize) -> f64 {
    let psi: f64 = (1..=d).map(|i| digamma((nu + 1.0 - i as f64) / 2.0)).sum();
    psi + d as f64 * 2f64.ln() + ln_det_w
}

fn outer_add(m: &mut Matrix, v: &[f64], s: f64) {
    for a in 0..v.len() {
        for b in 0..v.len() {
            m[(a, b)] += s * v[a] * v[b];
        }
    }
}

fn dp_update(features: &Matrix, resp: &Matrix, prior: &DpPrior) -> Result<DpState> {
    let d = features.cols();
    let t = resp.cols();
    let mut components = Vec::with_capacity(t);
    for k in 0..t {
        let stats = component_stats(features, resp, k);
        let count = stats.count;
        let xbar = if count > 0.0 {
            stats.mean
        } else {
            prior.mean0.clone()
        };
        let beta = prior.beta0 + count;
        let nu = prior.nu0 + count;
        let mean: Vec<f64> = prior
            .mean0
            .iter()
            .zip(&xbar)
            .map(|(m0, x)| (prior.beta0 * m0 + count * x) / beta)
            .collect();
        let mut w_inv = prior.w0_inv.clone();
        w_inv.add_scaled(1.0, &stats.scatter);
        let diff: Vec<f64> = xbar.iter().zip(&prior.mean0).map(|(a, b)| a - b).collect();
        outer_add(&mut w_inv, &diff, prior.beta0 * count / beta);
        let w_inv = cholesky(&w_inv, 0.0)?;
        let e_log_det = wishart_e_log_det(-w_inv.log_det(), nu, d);
        components.push(VarComponent {
            count,
            xbar,
            scatter: stats.scatter,
            beta,
            nu,
            mean,
            w_inv,
            e_log_det,
        });
    }

    let mut sticks = Vec::with_capacity(t.saturating_sub(1));
    let mut tail: f64 = components.iter().map(|c| c.count).sum();
    for c in components.iter().take(t.saturating_sub(1)) {
        tail -= c.count;
        sticks.push((1.0 + c.count, prior.concentration + tail.max(0.0)));
    }
    let mut e_log_pi = Vec::with_capacity(t);
    let mut acc = 0.0;
    for &(g1, g2) in &sticks {
        let s = digamma(g1 + g2);
        e_log_pi.push(acc + digamma(g1) - s);
        acc += digamma(g2) - s;
    }
    e_log_pi.push(acc);
    Ok(DpState {
        components,
        sticks,
        e_log_pi,
    })
}

/// Variational E-step: returns responsibilities and `sum r ln r`.
fn dp_e_step(features: &Matrix, state: &DpState) -> Result<(Matrix, f64)> {
    let d = features.cols() as f64;
    let t = state.components.len();
    let offsets: Vec<f64> = state
        .components
        .iter()
        .zip(&state.e_log_pi)
        .map(|(c, lp)| lp + 0.5 * c.e_log_det - 0.5 * d * LN_2PI - 0.5 * d / c.beta)
        .collect();
    let mut resp = Matrix::zeros(features.rows(), t);
    let mut neg_entropy = 0.0;
    let mut buf = vec![0.0; t];
    for (i, x) in features.row_iter().enumerate() {
        for (k, c) in state.components.iter().enumerate() {
            buf[k] = offsets[k] - 0.5 * c.nu * c.w_inv.mahalanobis_sq(x, &c.mean)?;
        }
        let lse = log_sum_exp_unchecked(&buf);
        for k in 0..t {
            let lr = buf[k] - lse;
            let r = lr.exp();
            resp[(i, k)] = r;
            if r > 0.0 {
                neg_entropy += r * lr;
            }
        }
    }
    Ok((resp, neg_entropy))
}

fn dp_elbo(state: &DpState, prior: &DpPrior, neg_entropy: f64, d: usize) -> Result<f64> {
    let df = d as f64;
    let mut elbo = 0.0;
    for (c, e_log_pi) in state.components.iter().zip(&state.e_log_pi) {
        let ln_det_w = -c.w_inv.log_det();
        let a = c.e_log_det;
        // E[ln p(x | z, mu, Lambda)]
        let trace_scatter = c.w_inv.trace_inv_mul(&c.scatter);
        let quad_x = c.w_inv.mahalanobis_sq(&c.xbar, &c.mean)?;
        elbo += 0.5
            * (c.count * (a - df / c.beta - df * LN_2PI)
                - c.nu * trace_scatter
                - c.nu * c.count * quad_x);
        // E[ln p(z | v)]
        elbo += c.count * e_log_pi;
        // E[ln p(mu, Lambda)]
        let quad_m = c.w_inv.mahalanobis_sq(&c.mean, &prior.mean0)?;
        let trace_prior = c.w_inv.trace_inv_mul(&prior.w0_inv);
        elbo += 0.5
            * (df * (prior.beta0 / (2.0 * PI)).ln() + a
                - df * prior.beta0 / c.beta
                - prior.beta0 * c.nu * quad_m)
            + prior.ln_b0
            + 0.5 * (prior.nu0 - df - 1.0) * a
            - 0.5 * c.nu * trace_prior;
        // -E[ln q(mu, Lambda)]
        let entropy_w =
            -wishart_ln_b(ln_det_w, c.nu, d) - 0.5 * (c.nu - df - 1.0) * a + 0.5 * c.nu * df;
        elbo -= 0.5 * a + 0.5 * df * (c.beta / (2.0 * PI)).ln() - 0.5 * df - entropy_w;
    }
    let alpha = prior.concentration;
    for &(g1, g2) in &state.sticks {
        let s = digamma(g1 + g2);
        let e_ln_v = digamma(g1) - s;
        let e_ln_1mv = digamma(g2) - s;
        // E[ln p(v)] for Beta(1, alpha)
        elbo += alpha.ln() + (alpha - 1.0) * e_ln_1mv;
        // -E[ln q(v)]
        elbo -= ln_gamma(g1 + g2) - ln_gamma(g1) - ln_gamma(g2)
            + (g1 - 1.0) * e_ln_v
            + (g2 - 1.0) * e_ln_1mv;
    }
    elbo -= neg_entropy;
    Ok(elbo)
}

/// Expected stick-breaking weights `E[pi_k]`.
fn expected_weights(sticks: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(sticks.len() + 1);
    let mut remaining = 1.0;
    for &(g1, g2) in sticks {
        let ev = g1 / (g1 + g2);
        out.push(remaining * ev);
        remaining *= 1.0 - ev;
    }
    out.push(remaining);
    out
}

/// Fits a truncated Dirichlet-process Gaussian mixture by coordinate-ascent
/// variational inference, then drops components whose expected weight is
/// below the prune threshold.
pub fn fit_dpgmm(
    features: &Matrix,
    config: &DpConfig,
    options: &FitOptions,
) -> Result<(LayerMixture, FitDiagnostics)> {
    let warning = config.validate()?;
    check_features(features, config.truncation, "truncation")?;
    options.validate()?;
    let n = features.rows() as f64;
    let d = features.cols();
    let t = config.truncation;

    let mut diag = FitDiagnostics::default();
    diag.warnings.extend(warning);

    let (mean0, global_cov) = empirical_mean_cov(features, None)?;
    let global = cholesky(&global_cov, 0.0)?;
    let nu0 = d as f64;
    let w0_inv = global.reconstruct().scaled(nu0);
    let w0_inv_factor = cholesky(&w0_inv, 0.0)?;
    let prior = DpPrior {
        concentration: config.concentration,
        beta0: 1.0,
        nu0,
        mean0,
        ln_b0: wishart_ln_b(-w0_inv_factor.log_det(), nu0, d),
        w0_inv,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let labels = kmeans_init(features, t, &mut rng);
    let mut state = dp_update(features, &one_hot(&labels, t), &prior)?;
    loop {
        let (resp, neg_entropy) = dp_e_step(features, &state)?;
        state = dp_update(features, &resp, &prior)?;
        diag.iterations += 1;
        let elbo = dp_elbo(&state, &prior, neg_entropy, d)? / n;
        let prev = diag.log_likelihood_trace.last().copied();
        diag.log_likelihood_trace.push(elbo);
        if let Some(prev) = prev {
            if options.converged(prev, elbo) {
                diag.converged = true;
                break;
            }
        }
        if diag.iterations >= options.max_iter {
            break;
        }
    }

    let expected = expected_weights(&state.sticks);
    let best = argmax(&expected);
    let mut weights = Vec::new();
    let mut means = Vec::new();
    let mut factors = Vec::new();
    for (k, (c, w)) in state.components.iter().zip(&expected).enumerate() {
        if *w < config.prune_threshold && k != best {
            continue;
        }
        weights.push(*w);
        means.push(c.mean.clone());
        factors.push(cholesky(&c.w_inv.reconstruct().scaled(1.0 / c.nu), 0.0)?);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    diag.effective_components = weights.len();
    let mixture = LayerMixture::new(weights, means, factors, CovarianceMode::Full)?;
    Ok((mixture, diag))
}
