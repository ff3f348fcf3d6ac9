use std::fs;
use std::path::{Path, PathBuf};

use lsgm::io::{sha256_file, write_npy, DatasetManifest, FileEntry, LayerEntry, Role};
use lsgm::synthetic::{GroundTruth, SyntheticData};
use lsgm::Matrix;
use serde::Serialize;

use crate::args::SynthArgs;
use crate::commands::render;
use crate::CliError;

#[derive(Serialize)]
struct SynthConfig {
    command: &'static str,
    out: String,
    layers: usize,
    k: usize,
    dim: usize,
    n_train: usize,
    n_test: usize,
    spread: f64,
    stickiness: f64,
    shift: f64,
    seed: u64,
}

#[derive(Serialize)]
struct SynthReport {
    config: SynthConfig,
    manifests: Vec<String>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    lsgm::Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
    .into()
}

fn write_split(
    dir: &Path,
    name: &str,
    role: Role,
    data: &SyntheticData,
    truth: &GroundTruth,
) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let file = |f: &str| -> Result<FileEntry, CliError> {
        Ok(FileEntry {
            path: f.into(),
            sha256: Some(sha256_file(&dir.join(f))?),
        })
    };
    let mut layers = Vec::with_capacity(data.features.len());
    for (i, x) in data.features.iter().enumerate() {
        let f = format!("layer{i}.npy");
        write_npy(dir.join(&f), x)?;
        let entry = file(&f)?;
        layers.push(LayerEntry {
            name: format!("layer{i}"),
            path: entry.path,
            sha256: entry.sha256,
        });
    }
    let labels: Vec<f64> = data.labels().iter().map(|&c| c as f64).collect();
    write_npy(
        dir.join("labels.npy"),
        &Matrix::new(1, labels.len(), labels)?,
    )?;
    write_npy(dir.join("logits.npy"), &data.logits(truth))?;
    let manifest = DatasetManifest {
        name: name.to_string(),
        role,
        labels: Some(file("labels.npy")?),
        logits: Some(file("logits.npy")?),
        layers,
        base_dir: dir.to_path_buf(),
    };
    let path = dir.join("manifest.toml");
    manifest.save(&path)?;
    Ok(path)
}

pub fn run(a: &SynthArgs) -> Result<String, CliError> {
    if a.layers == 0 || a.k == 0 || a.dim == 0 {
        return Err(CliError::Usage(
            "--layers, --k and --dim must be positive".into(),
        ));
    }
    let truth = GroundTruth::random(
        &vec![a.k; a.layers],
        &vec![a.dim; a.layers],
        a.spread,
        a.stickiness,
        a.seed,
    )?;
    let ood_truth = truth.shifted(a.shift, a.seed.wrapping_add(1));
    let train = truth.sample(a.n_train, a.seed.wrapping_add(2));
    let test_in = truth.sample(a.n_test, a.seed.wrapping_add(3));
    let test_ood = ood_truth.sample(a.n_test, a.seed.wrapping_add(4));
    // logits always come from the in-distribution classifier
    let manifests = [
        write_split(
            &a.out.join("train"),
            "synthetic-train",
            Role::TrainIn,
            &train,
            &truth,
        )?,
        write_split(
            &a.out.join("test_in"),
            "synthetic-test-in",
            Role::TestIn,
            &test_in,
            &truth,
        )?,
        write_split(
            &a.out.join("test_ood"),
            "synthetic-test-ood",
            Role::TestOod,
            &test_ood,
            &truth,
        )?,
    ];
    render(
        &SynthReport {
            config: SynthConfig {
                command: "synth",
                out: a.out.display().to_string(),
                layers: a.layers,
                k: a.k,
                dim: a.dim,
                n_train: a.n_train,
                n_test: a.n_test,
                spread: a.spread,
                stickiness: a.stickiness,
                shift: a.shift,
                seed: a.seed,
            },
            manifests: manifests.iter().map(|p| p.display().to_string()).collect(),
        },
        None,
    )
}
