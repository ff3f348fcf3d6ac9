//! Reference detectors: class-conditional Mahalanobis scores with a tied
//! covariance per layer, maximum softmax probability, and the
//! nearest-component restriction of the chain score that the Mahalanobis
//! ensemble reduces to.

use crate::chain::{LsgmModel, TraceSample, TransitionMatrix};
use crate::error::{Error, Result};
use crate::mixture::{CovarianceMode, LayerMixture};
use crate::tensor::{cholesky, Matrix, SpdFactor};

#[derive(Clone, Debug, PartialEq)]
pub struct MahalanobisLayer {
    pub class_means: Vec<Vec<f64>>,
    pub shared_cov: SpdFactor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MahalanobisParams {
    layers: Vec<MahalanobisLayer>,
    layer_weights: Vec<f64>,
}

impl MahalanobisParams {
    pub fn new(layers: Vec<MahalanobisLayer>, layer_weights: Vec<f64>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid(
                "Mahalanobis parameters need at least one layer",
            ));
        }
        if layer_weights.len() != layers.len() {
            return Err(Error::invalid(format!(
                "{} layer weights for {} layers",
                layer_weights.len(),
                layers.len()
            )));
        }
        if layer_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("layer weights must be finite"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.class_means.is_empty() {
                return Err(Error::invalid(format!("layer {i} has no classes")));
            }
            let d = l.shared_cov.dim();
            if l.class_means.iter().any(|m| m.len() != d) {
                return Err(Error::invalid(format!(
                    "layer {i}: class mean dimension differs from covariance dimension {d}"
                )));
            }
        }
        Ok(MahalanobisParams {
            layers,
            layer_weights,
        })
    }

    pub fn layers(&self) -> &[MahalanobisLayer] {
        &self.layers
    }

    pub fn layer_weights(&self) -> &[f64] {
        &self.layer_weights
    }

    pub fn with_layer_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.layer_weights = weights;
        Self::new(self.layers, self.layer_weights)
    }

    /// The chain whose layer `i` has one equally weighted component per
    /// class at the class mean with the tied covariance, joined by uniform
    /// transitions.
    pub fn to_lsgm(&self, layer_names: Vec<String>) -> Result<LsgmModel> {
        let mixtures = self
            .layers
            .iter()
            .map(|l| {
                let k = l.class_means.len();
                LayerMixture::new(
                    vec![1.0 / k as f64; k],
                    l.class_means.clone(),
                    vec![l.shared_cov.clone(); k],
                    CovarianceMode::TiedFull,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let transitions = mixtures
            .windows(2)
            .map(|w| {
                let (kf, kt) = (w[0].num_components(), w[1].num_components());
                TransitionMatrix::from_counts(&Matrix::zeros(kf, kt), 1.0, 0)
            })
            .collect::<Result<Vec<_>>>()?;
        LsgmModel::new(mixtures, transitions, layer_names)
    }
}

/// Class means and a class-centered pooled covariance per layer; layer
/// weights start uniform.
pub fn fit_mahalanobis(
    features_per_layer: &[Matrix],
    labels: &[usize],
) -> Result<MahalanobisParams> {
    if features_per_layer.is_empty() {
        return Err(Error::invalid("no feature layers given"));
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::invalid("no labeled samples"));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        counts[l] += 1;
    }
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(Error::invalid(format!("class {empty} has no samples")));
    }
    let mut layers = Vec::with_capacity(features_per_layer.len());
    for (i, f) in features_per_layer.iter().enumerate() {
        if f.rows() != n {
            return Err(Error::invalid(format!(
                "layer {i} has {} rows but there are {n} labels",
                f.rows()
            )));
        }
        let d = f.cols();
        let mut means = vec![vec![0.0; d]; num_classes];
        for (x, &l) in f.row_iter().zip(labels) {
            for (m, v) in means[l].iter_mut().zip(x) {
                *m += v;
            }
        }
        for (m, &c) in means.iter_mut().zip(&counts) {
            m.iter_mut().for_each(|v| *v /= c as f64);
        }
        let mut cov = Matrix::zeros(d, d);
        let mut c = vec![0.0; d];
        for (x, &l) in f.row_iter().zip(labels) {
            for ((ci, v), m) in c.iter_mut().zip(x).zip(&means[l]) {
                *ci = v - m;
            }
            for a in 0..d {
                for b in 0..=a {
                    cov[(a, b)] += c[a] * c[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov[(a, b)] / n as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        layers.push(MahalanobisLayer {
            class_means: means,
            shared_cov: cholesky(&cov, 0.0)?,
        });
    }
    let m = layers.len();
    MahalanobisParams::new(layers, vec![1.0 / m as f64; m])
}

/// `max_j -(x - mu_j)^T Sigma^{-1} (x - mu_j)` for one layer.
pub fn mahalanobis_layer_score(params: &MahalanobisParams, layer: usize, x: &[f64]) -> Result<f64> {
    let l = params
        .layers
        .get(layer)
        .ok_or_else(|| Error::invalid(format!("layer {layer} out of range")))?;
    let mut best = f64::NEG_INFINITY;
    for mu in &l.class_means {
        best = best.max(-l.shared_cov.mahalanobis_sq(x, mu)?);
    }
    Ok(best)
}

/// Layer-weighted sum of the per-layer Mahalanobis scores.
pub fn mahalanobis_ensemble_score(params: &MahalanobisParams, trace: &TraceSample) -> Result<f64> {
    if trace.num_layers() != params.layers.len() {
        return Err(Error::invalid(format!(
            "trace has {} layers, parameters have {}",
            trace.num_layers(),
            params.layers.len()
        )));
    }
    let mut total = 0.0;
    for (i, (x, w)) in trace
        .per_layer
        .iter()
        .zip(&params.layer_weights)
        .enumerate()
    {
        let s = mahalanobis_layer_score(params, i, x)?;
        if *w != 0.0 {
            total += w * s;
        }
    }
    Ok(total)
}

/// Largest softmax probability of a logit vector.
pub fn max_softmax_score(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::invalid("empty logit vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("logits must be finite"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    Ok(1.0 / denom)
}

/// Chain score restricted to the single trace of most responsible
/// components, without transition terms:
/// `sum_i w_i * ln N(x_i | mu_{z_i}, Sigma_{z_i})`.
pub fn lsgm_maha_restricted_score(
    model: &LsgmModel,
    trace: &TraceSample,
    layer_weights: &[f64],
) -> Result<f64> {
    if layer_weights.len() != model.num_layers() {
        return Err(Error::invalid(format!(
            "{} layer weights for a {}-layer model",
            layer_weights.len(),
            model.num_layers()
        )));
    }
    if trace.num_layers() != model.num_layers() {
        return Err(Error::invalid(format!(
            "trace has {} layers, model has {}",
            trace.num_layers(),
            model.num_layers()
        )));
    }
    let mut total = 0.0;
    for ((layer, x), w) in model
        .layers()
        .iter()
        .zip(&trace.per_layer)
        .zip(layer_weights)
    {
        let z = layer.map_component(x)?;
        let lp = layer.component_log_pdfs(x)?[z];
        total += w * lp;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gaussian_log_pdf;

    #[test]
    fn constant_single_class() {
        let f = Matrix::from_rows(&[[2.0, -1.0]; 10]).unwrap();
        let p = fit_mahalanobis(&[f], &[0; 10]).unwrap();
        let l = &p.layers()[0];
        assert_eq!(l.class_means, vec![vec![2.0, -1.0]]);
        let r = l.shared_cov.ridge_used();
        assert!(r > 0.0);
        assert!(
            l.shared_cov
                .reconstruct()
                .max_abs_diff(&Matrix::identity(2).scaled(r))
                < 1e-18
        );
    }

    #[test]
    fn duplicated_two_class_points() {
        let f = Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [2.0, 0.0], [2.0, 0.0]]).unwrap();
        let p = fit_mahalanobis(&[f], &[0, 0, 1, 1]).unwrap();
        let l = &p.layers()[0];
        assert_eq!(l.class_means, vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        let r = l.shared_cov.ridge_used();
        assert!(
            l.shared_cov
                .reconstruct()
                .max_abs_diff(&Matrix::identity(2).scaled(r))
                < 1e-18
        );
        assert_eq!(p.layer_weights(), &[1.0]);
    }

    #[test]
    fn empty_class_is_named() {
        let f = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let err = fit_mahalanobis(&[f], &[0, 2]).unwrap_err();
        assert!(err.to_string().contains("class 1"), "{err}");
    }

    #[test]
    fn layer_score_examples() {
        let cov = cholesky(&Matrix::identity(2), 0.0).unwrap();
        let p = MahalanobisParams::new(
            vec![MahalanobisLayer {
                class_means: vec![vec![0.0, 0.0], vec![5.0, 5.0]],
                shared_cov: cov.clone(),
            }],
            vec![1.0],
        )
        .unwrap();
        assert_eq!(mahalanobis_layer_score(&p, 0, &[5.0, 5.0]).unwrap(), 0.0);
        assert_eq!(mahalanobis_layer_score(&p, 0, &[1.0, 0.0]).unwrap(), -1.0);
        assert!(mahalanobis_layer_score(&p, 0, &[1.0]).is_err());
        assert!(mahalanobis_layer_score(&p, 1, &[1.0, 0.0]).is_err());
        let t = TraceSample::new(vec![vec![1.0, 0.0]]);
        assert_eq!(mahalanobis_ensemble_score(&p, &t).unwrap(), -1.0);
    }

    #[test]
    fn ensemble_weights() {
        let cov = cholesky(&Matrix::identity(1), 0.0).unwrap();
        let layer = |mu: f64| MahalanobisLayer {
            class_means: vec![vec![mu]],
            shared_cov: cov.clone(),
        };
        let p = MahalanobisParams::new(vec![layer(0.0), layer(0.0)], vec![1.0, 2.0]).unwrap();
        // layer scores -1 and -3
        let t = TraceSample::new(vec![vec![1.0], vec![3f64.sqrt()]]);
        assert!((mahalanobis_ensemble_score(&p, &t).unwrap() + 7.0).abs() < 1e-12);
        let zero = p.clone().with_layer_weights(vec![0.0, 0.0]).unwrap();
        assert_eq!(mahalanobis_ensemble_score(&zero, &t).unwrap(), 0.0);
        assert!(mahalanobis_ensemble_score(&p, &TraceSample::new(vec![vec![1.0]])).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(max_softmax_score(&[0.0, 0.0]).unwrap(), 0.5);
        let s = max_softmax_score(&[1000.0, 0.0]).unwrap();
        assert_eq!(s, 1.0);
        let base = [0.3, -1.2, 2.5];
        let shifted: Vec<f64> = base.iter().map(|v| v + 123.0).collect();
        assert!(
            (max_softmax_score(&base).unwrap() - max_softmax_score(&shifted).unwrap()).abs()
                <= 1e-12
        );
        assert!(max_softmax_score(&[]).is_err());
        assert!(max_softmax_score(&[f64::NAN]).is_err());
    }

    #[test]
    fn restricted_score_with_unit_layers() {
        let f1 = cholesky(&Matrix::identity(1), 0.0).unwrap();
        let f2 = cholesky(&Matrix::from_diag(&[2.0, 0.5]).unwrap(), 0.0).unwrap();
        let l1 = LayerMixture::new(
            vec![1.0],
            vec![vec![1.0]],
            vec![f1.clone()],
            CovarianceMode::Full,
        )
        .unwrap();
        let l2 = LayerMixture::new(
            vec![1.0],
            vec![vec![0.0, 1.0]],
            vec![f2.clone()],
            CovarianceMode::Full,
        )
        .unwrap();
        let single = LsgmModel::new(vec![l1.clone()], vec![], vec!["a".into()]).unwrap();
        let t1 = TraceSample::new(vec![vec![0.2]]);
        let g1 = gaussian_log_pdf(&[0.2], &[1.0], &f1).unwrap();
        assert_eq!(
            lsgm_maha_restricted_score(&single, &t1, &[1.0]).unwrap(),
            g1
        );

        let t = TransitionMatrix::new(Matrix::identity(1), 0.0).unwrap();
        let chain = LsgmModel::new(vec![l1, l2], vec![t], vec!["a".into(), "b".into()]).unwrap();
        let t2 = TraceSample::new(vec![vec![0.2], vec![1.0, -1.0]]);
        let g2 = gaussian_log_pdf(&[1.0, -1.0], &[0.0, 1.0], &f2).unwrap();
        let s = lsgm_maha_restricted_score(&chain, &t2, &[0.5, 2.0]).unwrap();
        assert!((s - (0.5 * g1 + 2.0 * g2)).abs() < 1e-12);
        assert!(lsgm_maha_restricted_score(&chain, &t2, &[1.0]).is_err());
    }
}
