//! Acceptance suite: one line per criterion, then a non-zero exit if any
//! criterion failed.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use lsgm::synthetic::{random_model, GroundTruth};
use lsgm::{
    aupr, auroc, brute_force_log_prob, fit_dpgmm, fit_gmm_em, fit_mahalanobis, forward_log_prob,
    lsgm_maha_restricted_score, mahalanobis_ensemble_score, tnr_at_tpr, CovarianceMode, DpConfig,
    FitOptions, LsgmModel, ScoredDataset, TraceSample,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_trace(model: &LsgmModel, rng: &mut ChaCha8Rng, half_width: f64) -> TraceSample {
    TraceSample::new(
        model
            .layers()
            .iter()
            .map(|l| {
                (0..l.dim())
                    .map(|_| rng.random_range(-half_width..half_width))
                    .collect()
            })
            .collect(),
    )
}

fn forward_vs_brute_force() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(1..=3);
        let ks: Vec<usize> = (0..m).map(|_| rng.random_range(1..=4)).collect();
        let ds: Vec<usize> = (0..m).map(|_| rng.random_range(1..=3)).collect();
        let model = random_model(&ks, &ds, seed).unwrap();
        for _ in 0..10 {
            let t = random_trace(&model, &mut rng, 5.0);
            let diff = (forward_log_prob(&model, &t).unwrap()
                - brute_force_log_prob(&model, &t).unwrap())
            .abs();
            worst = worst.max(diff);
            pairs += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-9 && elapsed < Duration::from_secs(10),
        format!(
            "{pairs} pairs, max |diff| {worst:.2e} (<= 1e-9), {:.2} s (< 10 s)",
            elapsed.as_secs_f64()
        ),
    )
}

fn em_monotonicity() -> Outcome {
    let modes = [
        CovarianceMode::Full,
        CovarianceMode::Diagonal,
        CovarianceMode::TiedFull,
    ];
    let mut worst_drop = 0.0f64;
    for fit in 0..20u64 {
        let d = 1 + (fit % 4) as usize;
        let truth = GroundTruth::random(&[3], &[d], 3.0, 1.0, 100 + fit).unwrap();
        let x = truth.sample(400, 200 + fit).features.remove(0);
        let k = 1 + (fit % 5) as usize;
        let opts = FitOptions {
            seed: fit,
            ..FitOptions::default()
        };
        let (_, diag) = fit_gmm_em(&x, k, modes[fit as usize % 3], &opts).unwrap();
        for w in diag.log_likelihood_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    outcome(
        worst_drop <= 1e-7,
        format!("20 fits, largest single-step decrease {worst_drop:.2e} (<= 1e-7)"),
    )
}

fn dp_recovery() -> Outcome {
    let centers = [
        [0.0, 0.0, 0.0, 0.0],
        [8.0, 0.0, 0.0, 0.0],
        [0.0, 8.0, 0.0, 0.0],
    ];
    let truth = GroundTruth {
        initial: vec![1.0 / 3.0; 3],
        means: vec![centers.iter().map(|c| c.to_vec()).collect()],
        transitions: vec![],
        sd: 1.0,
    };
    let cfg = DpConfig {
        truncation: 10,
        concentration: 1.0,
        prune_threshold: 1e-2,
    };
    let mut found = Vec::new();
    for seed in 0..5u64 {
        let x = truth.sample(600, seed).features.remove(0);
        let opts = FitOptions {
            seed,
            ..FitOptions::default()
        };
        found.push(fit_dpgmm(&x, &cfg, &opts).unwrap().1.effective_components);
    }
    let hits = found.iter().filter(|k| **k == 3 || **k == 4).count();
    outcome(
        hits >= 4,
        format!("effective components per seed {found:?}, {hits}/5 in {{3,4}} (>= 4)"),
    )
}

fn mahalanobis_equivalence() -> Outcome {
    let truth = GroundTruth::random(&[6, 6], &[3, 5], 5.0, 0.5, 41).unwrap();
    let data = truth.sample(3000, 42);
    let params = fit_mahalanobis(&data.features, &data.labels())
        .unwrap()
        .with_layer_weights(vec![0.4, 1.3])
        .unwrap();
    let model = params.to_lsgm(vec!["a".into(), "b".into()]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut pairs = Vec::new();
    while pairs.len() < 50 {
        let t = random_trace(&model, &mut rng, 10.0);
        // keep inputs whose nearest class is also the most responsible component
        let agree = params
            .layers()
            .iter()
            .zip(model.layers())
            .zip(&t.per_layer)
            .all(|((p, l), x)| {
                let nearest = (0..p.class_means.len())
                    .min_by(|&a, &b| {
                        let da = p.shared_cov.mahalanobis_sq(x, &p.class_means[a]).unwrap();
                        let db = p.shared_cov.mahalanobis_sq(x, &p.class_means[b]).unwrap();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                nearest == l.map_component(x).unwrap()
            });
        if agree {
            let l = lsgm_maha_restricted_score(&model, &t, params.layer_weights()).unwrap();
            let s = mahalanobis_ensemble_score(&params, &t).unwrap();
            pairs.push((l, s));
        }
    }
    let spread = |f: &dyn Fn(f64, f64) -> f64| {
        let v: Vec<f64> = pairs.iter().map(|(l, s)| f(*l, *s)).collect();
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - v.iter().copied().fold(f64::INFINITY, f64::min)
    };
    let corrected = spread(&|l, s| l - 0.5 * s);
    let literal = spread(&|l, s| l + 0.5 * s);
    let mut by_l: Vec<usize> = (0..pairs.len()).collect();
    let mut by_s = by_l.clone();
    by_l.sort_by(|&a, &b| pairs[a].0.total_cmp(&pairs[b].0));
    by_s.sort_by(|&a, &b| pairs[a].1.total_cmp(&pairs[b].1));
    let same_rank = by_l == by_s;
    outcome(
        corrected <= 1e-8 && same_rank,
        format!(
            "50 inputs, spread of L - S/2 {corrected:.2e} (<= 1e-8), rankings identical: {same_rank}; \
             the stated L + S/2 spreads {literal:.3e} since the layer score is -d^2 (see ledger)"
        ),
    )
}

fn metrics_oracle() -> Outcome {
    let mut mismatches = 0;
    for case in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let (np, nn) = (rng.random_range(1..=50), rng.random_range(1..=50));
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    if case % 2 == 0 {
                        f64::from(rng.random_range(0..6))
                    } else {
                        rng.random_range(-3.0..3.0)
                    }
                })
                .collect()
        };
        let pos = draw(np);
        let neg = draw(nn);
        let data = ScoredDataset::from_pos_neg(&pos, &neg, "case").unwrap();

        let (mut wins, mut ties) = (0u64, 0u64);
        for p in &pos {
            for n in &neg {
                wins += u64::from(p > n);
                ties += u64::from(p == n);
            }
        }
        let pair_auroc = (wins as f64 + 0.5 * ties as f64) / (np as f64 * nn as f64);

        let mut thresholds: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let at = |t: f64| {
            (
                pos.iter().filter(|s| **s >= t).count(),
                neg.iter().filter(|s| **s >= t).count(),
            )
        };
        let (mut area, mut prev) = (0.0, 0.0);
        let mut tnr = None;
        for &t in &thresholds {
            let (tp, fp) = at(t);
            let r = tp as f64 / np as f64;
            area += (r - prev) * (tp as f64 / (tp + fp) as f64);
            prev = r;
            if tnr.is_none() && r >= 0.95 {
                tnr = Some((nn - fp) as f64 / nn as f64);
            }
        }
        if auroc(&data).unwrap() != pair_auroc
            || aupr(&data).unwrap() != area
            || Some(tnr_at_tpr(&data, 0.95).unwrap()) != tnr
        {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("200 cases, {mismatches} not bit-identical to the oracles"),
    )
}

fn lsgm_bin(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_lsgm"))
        .args(args)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "lsgm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Pipeline {
    model: PathBuf,
    in_scores: PathBuf,
    ood_scores: PathBuf,
    auroc: f64,
    tnr: f64,
    elapsed: Duration,
}

fn run_pipeline(dir: &Path) -> Pipeline {
    let p = |f: &str| dir.join(f);
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let start = Instant::now();
    lsgm_bin(&[
        "synth",
        "--out",
        &s(dir),
        "--layers",
        "3",
        "--k",
        "4",
        "--dim",
        "8",
        "--n-train",
        "5000",
        "--n-test",
        "1000",
        "--shift",
        "6",
        "--seed",
        "7",
    ]);
    lsgm_bin(&[
        "fit",
        "--manifest",
        &s(&p("train/manifest.toml")),
        "--out",
        &s(&p("model.toml")),
        "--seed",
        "7",
    ]);
    lsgm_bin(&[
        "score",
        "--model",
        &s(&p("model.toml")),
        "--manifest",
        &s(&p("test_in/manifest.toml")),
        "--out",
        &s(&p("in.npy")),
    ]);
    lsgm_bin(&[
        "score",
        "--model",
        &s(&p("model.toml")),
        "--manifest",
        &s(&p("test_ood/manifest.toml")),
        "--out",
        &s(&p("ood.npy")),
    ]);
    let report: toml::Table = lsgm_bin(&[
        "eval",
        "--in-scores",
        &s(&p("in.npy")),
        "--ood-scores",
        &s(&p("ood.npy")),
    ])
    .parse()
    .unwrap();
    let metric = |k: &str| report["metrics"][k].as_float().unwrap();
    Pipeline {
        model: p("model.toml"),
        in_scores: p("in.npy"),
        ood_scores: p("ood.npy"),
        auroc: metric("auroc"),
        tnr: metric("tnr_at_tpr"),
        elapsed: start.elapsed(),
    }
}

fn end_to_end(run: &Pipeline) -> Outcome {
    outcome(
        run.auroc >= 99.0 && run.tnr >= 95.0 && run.elapsed < Duration::from_secs(60),
        format!(
            "AUROC {:.3} (>= 99.0), TNR@95TPR {:.3} (>= 95.0), {:.1} s single-threaded (< 60 s)",
            run.auroc,
            run.tnr,
            run.elapsed.as_secs_f64()
        ),
    )
}

fn determinism(a: &Pipeline, b: &Pipeline) -> Outcome {
    let same = |x: &Path, y: &Path| fs::read(x).unwrap() == fs::read(y).unwrap();
    let model = same(&a.model, &b.model);
    let scores = same(&a.in_scores, &b.in_scores) && same(&a.ood_scores, &b.ood_scores);
    outcome(
        model && scores,
        format!("model files identical: {model}, score files identical: {scores}"),
    )
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
fn r_squared(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy * sxy / (sxx * syy)
}

/// Best of several single-threaded passes over a batch of traces.
fn time_scoring(ks: &[usize], dim: usize) -> f64 {
    let dims = vec![dim; ks.len()];
    let model = random_model(ks, &dims, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let traces: Vec<TraceSample> = (0..100)
        .map(|_| random_trace(&model, &mut rng, 3.0))
        .collect();
    (0..7)
        .map(|_| {
            let start = Instant::now();
            let mut sink = 0.0;
            for t in &traces {
                sink += forward_log_prob(&model, t).unwrap();
            }
            std::hint::black_box(sink);
            start.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

fn scaling() -> Outcome {
    const DIM: usize = 32;
    let ms = [2usize, 4, 8];
    let t_m: Vec<f64> = ms
        .iter()
        .map(|&m| time_scoring(&vec![64; m], DIM))
        .collect();
    let ks = [50usize, 100, 150, 200, 250];
    let t_k: Vec<f64> = ks.iter().map(|&k| time_scoring(&[k; 3], DIM)).collect();
    let r_m = r_squared(&ms.map(|v| v as f64), &t_m);
    let r_k = r_squared(&ks.map(|v| v as f64), &t_k);
    let ms_str = |v: &[f64]| {
        v.iter()
            .map(|t| format!("{:.2}", t * 1e3))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        r_m >= 0.95 && r_k >= 0.95,
        format!(
            "R^2 over m {r_m:.4}, over K {r_k:.4} (both >= 0.95); ms per 100 traces m: {} K: {}",
            ms_str(&t_m),
            ms_str(&t_k)
        ),
    )
}

fn main() {
    let mut results = Vec::new();
    let mut record = |name: &str, r: Outcome| {
        println!(
            "[{}] {}. {name}: {}",
            if r.pass { "PASS" } else { "FAIL" },
            results.len() + 1,
            r.detail
        );
        results.push(r.pass);
    };

    record(
        "forward / brute-force equivalence",
        forward_vs_brute_force(),
    );
    record("EM monotonicity", em_monotonicity());
    record("DP component recovery", dp_recovery());
    record("Mahalanobis / LSGM equivalence", mahalanobis_equivalence());
    record("metrics oracle equivalence", metrics_oracle());
    let dir_a = tempfile::tempdir().unwrap();
    let first = run_pipeline(dir_a.path());
    record("end-to-end synthetic detection", end_to_end(&first));
    record("scaling in m and K", scaling());
    let dir_b = tempfile::tempdir().unwrap();
    record(
        "determinism",
        determinism(&first, &run_pipeline(dir_b.path())),
    );

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed} of {} criteria passed", results.len());
    if passed < results.len() {
        std::process::exit(1);
    }
}
