//! Model files: a versioned TOML document whose floating-point payloads
//! are hexadecimal literals, so a saved model scores bit-identically after
//! loading.
//!
//! Covariances are stored as their packed lower Cholesky factor (row-major,
//! `d (d + 1) / 2` entries) with the log-determinant and the ridge that was
//! added while factoring.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hexfloat;
use crate::baselines::{MahalanobisLayer, MahalanobisParams};
use crate::chain::{LsgmModel, TransitionMatrix};
use crate::error::{Error, Result};
use crate::mixture::{CovarianceMode, LayerMixture};
use crate::tensor::{Matrix, SpdFactor};

pub const FORMAT_VERSION: i64 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum ModelFile {
    Lsgm(LsgmModel),
    Mahalanobis {
        layer_names: Vec<String>,
        params: MahalanobisParams,
    },
    /// Maximum softmax probability over the manifest's logits; nothing is
    /// fitted.
    Softmax,
}

impl ModelFile {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelFile::Lsgm(_) => "lsgm",
            ModelFile::Mahalanobis { .. } => "mahalanobis",
            ModelFile::Softmax => "softmax",
        }
    }

    /// Feature layers the model expects, in order; empty for softmax.
    pub fn layer_names(&self) -> &[String] {
        match self {
            ModelFile::Lsgm(m) => m.layer_names(),
            ModelFile::Mahalanobis { layer_names, .. } => layer_names,
            ModelFile::Softmax => &[],
        }
    }
}

type Hex = String;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FactorDoc {
    lower: Vec<Hex>,
    log_det: Hex,
    ridge: Hex,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureDoc {
    name: String,
    covariance_mode: CovarianceMode,
    dim: usize,
    weights: Vec<Hex>,
    means: Vec<Vec<Hex>>,
    covariances: Vec<FactorDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionDoc {
    from: String,
    to: String,
    smoothing: Hex,
    probs: Vec<Vec<Hex>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MahalanobisDoc {
    name: String,
    weight: Hex,
    class_means: Vec<Vec<Hex>>,
    shared_covariance: FactorDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "kebab-case", deny_unknown_fields)]
enum Body {
    Lsgm {
        layers: Vec<MixtureDoc>,
        #[serde(default)]
        transitions: Vec<TransitionDoc>,
    },
    Mahalanobis {
        layers: Vec<MahalanobisDoc>,
    },
    Softmax {},
}

#[derive(Serialize, Deserialize)]
struct Document {
    format_version: i64,
    #[serde(flatten)]
    body: Body,
}

fn hex_vec(v: &[f64]) -> Vec<Hex> {
    v.iter().map(|x| hexfloat::format(*x)).collect()
}

fn parse_vec(v: &[Hex]) -> Result<Vec<f64>> {
    v.iter().map(|s| hexfloat::parse(s)).collect()
}

fn factor_doc(f: &SpdFactor) -> FactorDoc {
    let l = f.lower();
    let mut packed = Vec::with_capacity(f.dim() * (f.dim() + 1) / 2);
    for i in 0..f.dim() {
        packed.extend_from_slice(&l.row(i)[..=i]);
    }
    FactorDoc {
        lower: hex_vec(&packed),
        log_det: hexfloat::format(f.log_det()),
        ridge: hexfloat::format(f.ridge_used()),
    }
}

fn parse_factor(doc: &FactorDoc, dim: usize) -> Result<SpdFactor> {
    let packed = parse_vec(&doc.lower)?;
    if packed.len() != dim * (dim + 1) / 2 {
        return Err(Error::Corrupt(format!(
            "packed factor has {} entries, dimension {dim} needs {}",
            packed.len(),
            dim * (dim + 1) / 2
        )));
    }
    let mut lower = Matrix::zeros(dim, dim);
    let mut it = packed.into_iter();
    for i in 0..dim {
        for j in 0..=i {
            lower[(i, j)] = it.next().expect("length checked");
        }
    }
    SpdFactor::from_parts(
        lower,
        hexfloat::parse(&doc.log_det)?,
        hexfloat::parse(&doc.ridge)?,
    )
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<Hex>> {
    m.row_iter().map(hex_vec).collect()
}

fn parse_rows(rows: &[Vec<Hex>]) -> Result<Vec<Vec<f64>>> {
    rows.iter().map(|r| parse_vec(r)).collect()
}

fn to_document(model: &ModelFile) -> Document {
    let body = match model {
        ModelFile::Lsgm(m) => {
            let names = m.layer_names();
            Body::Lsgm {
                layers: m
                    .layers()
                    .iter()
                    .zip(names)
                    .map(|(l, name)| MixtureDoc {
                        name: name.clone(),
                        covariance_mode: l.covariance_mode(),
                        dim: l.dim(),
                        weights: hex_vec(l.weights()),
                        means: l.means().iter().map(|mu| hex_vec(mu)).collect(),
                        covariances: l.cov_factors().iter().map(factor_doc).collect(),
                    })
                    .collect(),
                transitions: m
                    .transitions()
                    .iter()
                    .enumerate()
                    .map(|(i, t)| TransitionDoc {
                        from: names[i].clone(),
                        to: names[i + 1].clone(),
                        smoothing: hexfloat::format(t.smoothing()),
                        probs: matrix_rows(t.probs()),
                    })
                    .collect(),
            }
        }
        ModelFile::Mahalanobis {
            layer_names,
            params,
        } => Body::Mahalanobis {
            layers: params
                .layers()
                .iter()
                .zip(params.layer_weights())
                .zip(layer_names)
                .map(|((l, w), name)| MahalanobisDoc {
                    name: name.clone(),
                    weight: hexfloat::format(*w),
                    class_means: l.class_means.iter().map(|m| hex_vec(m)).collect(),
                    shared_covariance: factor_doc(&l.shared_cov),
                })
                .collect(),
        },
        ModelFile::Softmax => Body::Softmax {},
    };
    Document {
        format_version: FORMAT_VERSION,
        body,
    }
}

fn from_body(body: Body) -> Result<ModelFile> {
    match body {
        Body::Lsgm {
            layers,
            transitions,
        } => {
            let names: Vec<String> = layers.iter().map(|l| l.name.clone()).collect();
            let mixtures = layers
                .iter()
                .map(|l| {
                    let factors = l
                        .covariances
                        .iter()
                        .map(|c| parse_factor(c, l.dim))
                        .collect::<Result<Vec<_>>>()?;
                    LayerMixture::new(
                        parse_vec(&l.weights)?,
                        parse_rows(&l.means)?,
                        factors,
                        l.covariance_mode,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            for (i, t) in transitions.iter().enumerate() {
                if names.get(i) != Some(&t.from) || names.get(i + 1) != Some(&t.to) {
                    return Err(Error::Corrupt(format!(
                        "transition {i} joins '{}' -> '{}', which are not adjacent layers",
                        t.from, t.to
                    )));
                }
            }
            let transitions = transitions
                .iter()
                .map(|t| {
                    let probs = Matrix::from_rows(&parse_rows(&t.probs)?)?;
                    TransitionMatrix::new(probs, hexfloat::parse(&t.smoothing)?)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ModelFile::Lsgm(LsgmModel::new(
                mixtures,
                transitions,
                names,
            )?))
        }
        Body::Mahalanobis { layers } => {
            let layer_names = layers.iter().map(|l| l.name.clone()).collect();
            let weights = layers
                .iter()
                .map(|l| hexfloat::parse(&l.weight))
                .collect::<Result<Vec<_>>>()?;
            let layers = layers
                .iter()
                .map(|l| {
                    let class_means = parse_rows(&l.class_means)?;
                    let dim = class_means.first().map_or(0, Vec::len);
                    Ok(MahalanobisLayer {
                        class_means,
                        shared_cov: parse_factor(&l.shared_covariance, dim)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ModelFile::Mahalanobis {
                layer_names,
                params: MahalanobisParams::new(layers, weights)?,
            })
        }
        Body::Softmax {} => Ok(ModelFile::Softmax),
    }
}

pub fn model_to_string(model: &ModelFile) -> String {
    toml::to_string(&to_document(model)).expect("model document serializes")
}

pub fn model_from_str(text: &str) -> Result<ModelFile> {
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Corrupt(format!("model file: {e}")))?;
    match table
        .get("format_version")
        .and_then(toml::Value::as_integer)
    {
        Some(FORMAT_VERSION) => {}
        Some(v) => {
            return Err(Error::Unsupported(format!(
                "model format_version {v} (this reader handles {FORMAT_VERSION})"
            )))
        }
        None => {
            return Err(Error::Corrupt(
                "model file lacks an integer format_version".into(),
            ))
        }
    }
    let doc: Document = table
        .try_into()
        .map_err(|e| Error::Corrupt(format!("model file: {e}")))?;
    from_body(doc.body).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::Corrupt(format!("model file: {msg}")),
        other => other,
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelFile) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_string(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_str(&text).map_err(|e| match e {
        Error::Corrupt(msg) => Error::Corrupt(format!("{}: {msg}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{estimate_transitions, forward_log_prob, Assignment, TraceSample};
    use crate::mixture::{fit_gmm_em, FitOptions};
    use crate::synthetic::GroundTruth;

    fn fitted() -> (LsgmModel, Vec<TraceSample>) {
        let truth = GroundTruth::random(&[2, 3], &[3, 2], 4.0, 0.8, 5).unwrap();
        let data = truth.sample(200, 6);
        let opts = FitOptions::default();
        let layers: Vec<LayerMixture> = data
            .features
            .iter()
            .zip([2, 3])
            .map(|(x, k)| fit_gmm_em(x, k, CovarianceMode::Full, &opts).unwrap().0)
            .collect();
        let t = estimate_transitions(&layers, &data.features, Assignment::Hard, 1.0).unwrap();
        let model = LsgmModel::new(layers, t, vec!["a".into(), "b".into()]).unwrap();
        let probes = (0..10)
            .map(|i| TraceSample::from_rows(&data.features, i))
            .collect();
        (model, probes)
    }

    #[test]
    fn lsgm_round_trip_is_bit_exact() {
        let (model, probes) = fitted();
        let text = model_to_string(&ModelFile::Lsgm(model.clone()));
        let ModelFile::Lsgm(back) = model_from_str(&text).unwrap() else {
            panic!("kind changed")
        };
        assert_eq!(back, model);
        for p in &probes {
            let a = forward_log_prob(&model, p).unwrap();
            let b = forward_log_prob(&back, p).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(model_to_string(&ModelFile::Lsgm(back)), text);
    }

    #[test]
    fn softmax_round_trip() {
        let text = model_to_string(&ModelFile::Softmax);
        assert_eq!(model_from_str(&text).unwrap(), ModelFile::Softmax);
    }

    #[test]
    fn version_and_truncation() {
        let (model, _) = fitted();
        let text = model_to_string(&ModelFile::Lsgm(model));
        let v2 = text.replacen("format_version = 1", "format_version = 2", 1);
        assert!(matches!(model_from_str(&v2), Err(Error::Unsupported(_))));
        for cut in [10, text.len() / 3, text.len() / 2, text.len() - 40] {
            let err = model_from_str(&text[..cut]).unwrap_err();
            assert!(matches!(err, Error::Corrupt(_)), "cut {cut}: {err}");
        }
        assert!(matches!(model_from_str(""), Err(Error::Corrupt(_))));
        let unknown = text.replacen("model_kind = \"lsgm\"", "model_kind = \"hmm\"", 1);
        assert!(matches!(model_from_str(&unknown), Err(Error::Corrupt(_))));
    }
}
