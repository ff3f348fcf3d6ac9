use std::fs;
use std::path::{Path, PathBuf};

use lsgm::io::{
    load_bundle, load_model, read_npy, save_model, write_npy, DatasetManifest, FeatureBundle,
    ModelFile, Role,
};
use lsgm::{
    entropy, estimate_transitions, evaluate, fit_dpgmm, fit_gmm_em, fit_mahalanobis,
    mahalanobis_ensemble_score, max_softmax_score, score_batch, traces_from_layers,
    transition_statistics, Assignment, CovarianceMode, DpConfig, FitDiagnostics, FitOptions,
    LsgmModel, Matrix, ScoredDataset,
};
use serde::Serialize;

use crate::args::{EvalArgs, ExportArgs, FitArgs, ModelKind, ScoreArgs};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn show(p: &Path) -> String {
    p.display().to_string()
}

pub fn render<T: Serialize>(doc: &T, also_to: Option<&Path>) -> Result<String> {
    let text = toml::to_string(doc).expect("reports serialize");
    if let Some(p) = also_to {
        fs::write(p, &text).map_err(|e| lsgm::Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?;
    }
    Ok(text)
}

/// The manifest's feature matrices for `names`, in that order.
fn select_layers(bundle: &FeatureBundle, names: &[String]) -> Result<Vec<Matrix>> {
    names
        .iter()
        .map(|n| match bundle.layer_names.iter().position(|b| b == n) {
            Some(i) => Ok(bundle.per_layer[i].clone()),
            None => Err(CliError::Data(format!(
                "layer names do not match: model has [{}], manifest '{}' has [{}]",
                names.join(", "),
                bundle.name,
                bundle.layer_names.join(", ")
            ))),
        })
        .collect()
}

#[derive(Serialize)]
struct FitConfig {
    command: &'static str,
    manifest: String,
    out: String,
    model_kind: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truncation: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    concentration: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prune_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    covariance: Option<CovarianceMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    smoothing: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    assignment: Option<Assignment>,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
}

#[derive(Serialize)]
struct LayerDiagnostics {
    name: String,
    samples: usize,
    dim: usize,
    components: usize,
    effective_components: usize,
    iterations: usize,
    converged: bool,
    final_objective: f64,
    objective_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct FitReport {
    config: FitConfig,
    dataset: DatasetInfo,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    layers: Vec<LayerDiagnostics>,
}

#[derive(Serialize)]
struct DatasetInfo {
    name: String,
    role: String,
    samples: usize,
    layers: Vec<String>,
}

fn dataset_info(b: &FeatureBundle) -> DatasetInfo {
    DatasetInfo {
        name: b.name.clone(),
        role: b.role.to_string(),
        samples: b.len(),
        layers: b.layer_names.clone(),
    }
}

fn resolve_fit_config(a: &FitArgs) -> Result<FitConfig> {
    let lsgm = matches!(a.model_kind, ModelKind::LsgmGmm | ModelKind::LsgmDp);
    let dp = a.model_kind == ModelKind::LsgmDp;
    match (a.model_kind, a.k) {
        (ModelKind::LsgmGmm, None) => {
            return Err(CliError::Usage("--k is required for lsgm-gmm".into()))
        }
        (ModelKind::LsgmGmm, Some(_)) | (_, None) => {}
        (kind, Some(_)) => return Err(CliError::Usage(format!("--k does not apply to {kind}"))),
    }
    if a.truncation.is_some() && !dp {
        return Err(CliError::Usage(format!(
            "--truncation does not apply to {}",
            a.model_kind
        )));
    }
    if dp && a.covariance != CovarianceMode::Full {
        return Err(CliError::Usage("lsgm-dp fits full covariances only".into()));
    }
    Ok(FitConfig {
        command: "fit",
        manifest: show(&a.manifest),
        out: show(&a.out),
        model_kind: a.model_kind,
        k: a.k,
        truncation: dp.then(|| a.truncation.unwrap_or(DpConfig::default().truncation)),
        concentration: dp.then_some(a.concentration),
        prune_threshold: dp.then_some(a.prune_threshold),
        covariance: lsgm.then_some(a.covariance),
        smoothing: lsgm.then_some(a.smoothing),
        assignment: lsgm.then_some(a.assignment),
        seed: a.seed,
        max_iter: lsgm.then_some(a.max_iter),
        tol: lsgm.then_some(a.tol),
    })
}

fn layer_diagnostics(
    name: &str,
    x: &Matrix,
    components: usize,
    d: FitDiagnostics,
) -> LayerDiagnostics {
    LayerDiagnostics {
        name: name.to_string(),
        samples: x.rows(),
        dim: x.cols(),
        components,
        effective_components: d.effective_components,
        iterations: d.iterations,
        converged: d.converged,
        final_objective: d.log_likelihood_trace.last().copied().unwrap_or(f64::NAN),
        objective_trace: d.log_likelihood_trace,
        warnings: d.warnings,
    }
}

pub fn fit(a: &FitArgs) -> Result<String> {
    let config = resolve_fit_config(a)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    if manifest.role != Role::TrainIn {
        return Err(CliError::Data(format!(
            "fit needs a train_in manifest, '{}' has role {}",
            manifest.name, manifest.role
        )));
    }
    let bundle = load_bundle(&manifest)?;
    let mut diagnostics = Vec::new();
    let model = match a.model_kind {
        ModelKind::LsgmGmm | ModelKind::LsgmDp => {
            let mut layers = Vec::with_capacity(bundle.per_layer.len());
            for (i, (x, name)) in bundle.per_layer.iter().zip(&bundle.layer_names).enumerate() {
                let opts = FitOptions {
                    seed: a.seed.wrapping_add(i as u64),
                    max_iter: a.max_iter,
                    tol: a.tol,
                };
                let (mixture, diag) = match config.k {
                    Some(k) => fit_gmm_em(x, k, a.covariance, &opts)?,
                    None => {
                        let dp = DpConfig {
                            truncation: config.truncation.expect("resolved for lsgm-dp"),
                            concentration: a.concentration,
                            prune_threshold: a.prune_threshold,
                        };
                        fit_dpgmm(x, &dp, &opts)?
                    }
                };
                diagnostics.push(layer_diagnostics(name, x, mixture.num_components(), diag));
                layers.push(mixture);
            }
            let transitions =
                estimate_transitions(&layers, &bundle.per_layer, a.assignment, a.smoothing)?;
            ModelFile::Lsgm(LsgmModel::new(
                layers,
                transitions,
                bundle.layer_names.clone(),
            )?)
        }
        ModelKind::Mahalanobis => {
            let labels = bundle.labels.as_ref().ok_or_else(|| {
                CliError::Data(format!(
                    "labels required: manifest '{}' has no labels",
                    bundle.name
                ))
            })?;
            ModelFile::Mahalanobis {
                layer_names: bundle.layer_names.clone(),
                params: fit_mahalanobis(&bundle.per_layer, labels)?,
            }
        }
        ModelKind::Softmax => ModelFile::Softmax,
    };
    save_model(&a.out, &model)?;
    render(
        &FitReport {
            config,
            dataset: dataset_info(&bundle),
            layers: diagnostics,
        },
        a.report.as_deref(),
    )
}

#[derive(Serialize)]
struct ScoreConfig {
    command: &'static str,
    model: String,
    model_kind: &'static str,
    manifest: String,
    out: String,
}

#[derive(Serialize)]
struct Summary {
    count: usize,
    mean: f64,
    min: f64,
    max: f64,
}

#[derive(Serialize)]
struct ScoreReport {
    config: ScoreConfig,
    dataset: DatasetInfo,
    summary: Summary,
}

fn summarize(v: &[f64]) -> Summary {
    Summary {
        count: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

pub fn score(a: &ScoreArgs) -> Result<String> {
    let model = load_model(&a.model)?;
    let bundle = load_bundle(&DatasetManifest::load(&a.manifest)?)?;
    if bundle.is_empty() {
        return Err(CliError::Data(format!(
            "manifest '{}' has no samples",
            bundle.name
        )));
    }
    let scores = match &model {
        ModelFile::Lsgm(m) => {
            let traces = traces_from_layers(&select_layers(&bundle, m.layer_names())?)?;
            score_batch(m, &traces)?
        }
        ModelFile::Mahalanobis {
            layer_names,
            params,
        } => {
            let traces = traces_from_layers(&select_layers(&bundle, layer_names)?)?;
            traces
                .iter()
                .map(|t| mahalanobis_ensemble_score(params, t))
                .collect::<lsgm::Result<Vec<_>>>()?
        }
        ModelFile::Softmax => {
            let logits = bundle.logits.as_ref().ok_or_else(|| {
                CliError::Data(format!(
                    "softmax scoring needs logits, manifest '{}' has none",
                    bundle.name
                ))
            })?;
            logits
                .row_iter()
                .map(max_softmax_score)
                .collect::<lsgm::Result<Vec<_>>>()?
        }
    };
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(CliError::Numeric(format!(
            "score of sample {i} is {}",
            scores[i]
        )));
    }
    let summary = summarize(&scores);
    let n = scores.len();
    write_npy(&a.out, &Matrix::new(n, 1, scores)?)?;
    render(
        &ScoreReport {
            config: ScoreConfig {
                command: "score",
                model: show(&a.model),
                model_kind: model.kind(),
                manifest: show(&a.manifest),
                out: show(&a.out),
            },
            dataset: dataset_info(&bundle),
            summary,
        },
        a.report.as_deref(),
    )
}

#[derive(Serialize)]
struct EvalConfig {
    command: &'static str,
    in_scores: String,
    ood_scores: String,
    tpr_target: f64,
}

/// Metrics in percent.
#[derive(Serialize)]
struct EvalMetrics {
    tnr_at_tpr: f64,
    auroc: f64,
    aupr: f64,
    n_in: usize,
    n_ood: usize,
}

#[derive(Serialize)]
struct EvalReport {
    config: EvalConfig,
    metrics: EvalMetrics,
}

fn read_scores(p: &PathBuf) -> Result<Vec<f64>> {
    let m = read_npy(p)?;
    if m.rows() != 1 && m.cols() != 1 {
        return Err(CliError::Data(format!(
            "{}: score file must be N x 1, got {} x {}",
            p.display(),
            m.rows(),
            m.cols()
        )));
    }
    Ok(m.into_vec())
}

pub fn eval(a: &EvalArgs) -> Result<String> {
    let pos = read_scores(&a.in_scores)?;
    let neg = read_scores(&a.ood_scores)?;
    let data = ScoredDataset::from_pos_neg(&pos, &neg, "eval")?;
    let r = evaluate(&data, a.tpr_target)?;
    render(
        &EvalReport {
            config: EvalConfig {
                command: "eval",
                in_scores: show(&a.in_scores),
                ood_scores: show(&a.ood_scores),
                tpr_target: a.tpr_target,
            },
            metrics: EvalMetrics {
                tnr_at_tpr: 100.0 * r.tnr_at_95_tpr,
                auroc: 100.0 * r.auroc,
                aupr: 100.0 * r.aupr,
                n_in: r.n_pos,
                n_ood: r.n_neg,
            },
        },
        a.out.as_deref(),
    )
}

#[derive(Serialize)]
struct ExportConfig {
    command: &'static str,
    model: String,
    manifest: String,
    layer_pair: [usize; 2],
    out: String,
}

#[derive(Serialize)]
struct ExportSummary {
    from: String,
    to: String,
    shape: [usize; 2],
    samples: usize,
    total: f64,
    /// Nats.
    entropy: f64,
    max_entropy: f64,
}

#[derive(Serialize)]
struct ExportReport {
    config: ExportConfig,
    summary: ExportSummary,
}

fn parse_layer_ref(s: &str, names: &[String]) -> Result<usize> {
    let s = s.trim();
    if let Ok(i) = s.parse::<usize>() {
        if i < names.len() {
            return Ok(i);
        }
    }
    names.iter().position(|n| n == s).ok_or_else(|| {
        CliError::Usage(format!(
            "layer '{s}' is neither an index below {} nor one of [{}]",
            names.len(),
            names.join(", ")
        ))
    })
}

pub fn export_transitions(a: &ExportArgs) -> Result<String> {
    let ModelFile::Lsgm(model) = load_model(&a.model)? else {
        return Err(CliError::Data(
            "export-transitions needs an lsgm model".into(),
        ));
    };
    let names = model.layer_names();
    let (from, to) = a.layer_pair.split_once(',').ok_or_else(|| {
        CliError::Usage(format!("--layer-pair '{}' is not FROM,TO", a.layer_pair))
    })?;
    let pair = (parse_layer_ref(from, names)?, parse_layer_ref(to, names)?);
    let bundle = load_bundle(&DatasetManifest::load(&a.manifest)?)?;
    let features = select_layers(&bundle, names)?;
    let stats = transition_statistics(&model, &features, pair)?;
    write_npy(&a.out, &stats)?;
    render(
        &ExportReport {
            config: ExportConfig {
                command: "export-transitions",
                model: show(&a.model),
                manifest: show(&a.manifest),
                layer_pair: [pair.0, pair.1],
                out: show(&a.out),
            },
            summary: ExportSummary {
                from: names[pair.0].clone(),
                to: names[pair.1].clone(),
                shape: [stats.rows(), stats.cols()],
                samples: bundle.len(),
                total: stats.as_slice().iter().sum(),
                entropy: entropy(&stats),
                max_entropy: ((stats.rows() * stats.cols()) as f64).ln(),
            },
        },
        a.report.as_deref(),
    )
}
