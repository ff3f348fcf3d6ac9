//! Dataset manifests: a TOML document naming the per-layer feature files
//! of one dataset split, plus optional labels and logits.
//!
//! ```toml
//! name = "cifar10-test"
//! role = "test_in"
//! labels = { path = "labels.npy", sha256 = "..." }
//!
//! [[layers]]
//! name = "block1"
//! path = "block1.npy"
//! sha256 = "..."
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::npy::{read_npy, read_npy_labels};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    TrainIn,
    TestIn,
    TestOod,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::TrainIn => "train_in",
            Role::TestIn => "test_in",
            Role::TestOod => "test_ood",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<FileEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<FileEntry>,
    pub layers: Vec<LayerEntry>,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Everything a manifest points at, loaded into memory.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub name: String,
    pub role: Role,
    pub layer_names: Vec<String>,
    pub per_layer: Vec<Matrix>,
    pub labels: Option<Vec<usize>>,
    pub logits: Option<Matrix>,
}

impl FeatureBundle {
    pub fn len(&self) -> usize {
        self.per_layer.first().map_or(0, Matrix::rows)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl DatasetManifest {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut m: DatasetManifest =
            toml::from_str(text).map_err(|e| Error::Corrupt(format!("manifest: {e}")))?;
        m.base_dir = base_dir.into();
        m.validate()?;
        Ok(m)
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(&text, base).map_err(|e| match e {
            Error::Corrupt(msg) => Error::Corrupt(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        for p in m.referenced_paths() {
            if !p.is_file() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file not found"),
                ));
            }
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid(format!(
                "manifest '{}' lists no layers",
                self.name
            )));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if self.layers[..i].iter().any(|o| o.name == l.name) {
                return Err(Error::invalid(format!("layer '{}' listed twice", l.name)));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn referenced_paths(&self) -> Vec<PathBuf> {
        self.layers
            .iter()
            .map(|l| &l.path)
            .chain(self.labels.iter().map(|f| &f.path))
            .chain(self.logits.iter().map(|f| &f.path))
            .map(|p| self.resolve(p))
            .collect()
    }

    pub fn layer_names(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.name.clone()).collect()
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn verify(path: &Path, expected: Option<&str>) -> Result<()> {
    if let Some(expected) = expected {
        let actual = sha256_file(path)?;
        if !actual.eq_ignore_ascii_case(expected.trim()) {
            return Err(Error::Corrupt(format!(
                "{}: sha256 {actual} does not match manifest ({expected})",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Loads every file of a manifest, verifying checksums where given and
/// that all members agree on the number of samples.
pub fn load_bundle(manifest: &DatasetManifest) -> Result<FeatureBundle> {
    let mut per_layer = Vec::with_capacity(manifest.layers.len());
    for l in &manifest.layers {
        let p = manifest.resolve(&l.path);
        verify(&p, l.sha256.as_deref())?;
        per_layer.push(read_npy(&p)?);
    }
    let n = per_layer[0].rows();
    for (l, m) in manifest.layers.iter().zip(&per_layer).skip(1) {
        if m.rows() != n {
            return Err(Error::invalid(format!(
                "layer '{}' has {} samples, layer '{}' has {n}",
                l.name,
                m.rows(),
                manifest.layers[0].name
            )));
        }
    }
    let labels = match &manifest.labels {
        Some(f) => {
            let p = manifest.resolve(&f.path);
            verify(&p, f.sha256.as_deref())?;
            let labels = read_npy_labels(&p)?;
            if labels.len() != n {
                return Err(Error::invalid(format!(
                    "labels have {} entries, layers have {n} samples",
                    labels.len()
                )));
            }
            Some(labels)
        }
        None => None,
    };
    let logits = match &manifest.logits {
        Some(f) => {
            let p = manifest.resolve(&f.path);
            verify(&p, f.sha256.as_deref())?;
            let logits = read_npy(&p)?;
            if logits.rows() != n {
                return Err(Error::invalid(format!(
                    "logits have {} rows, layers have {n} samples",
                    logits.rows()
                )));
            }
            Some(logits)
        }
        None => None,
    };
    Ok(FeatureBundle {
        name: manifest.name.clone(),
        role: manifest.role,
        layer_names: manifest.layer_names(),
        per_layer,
        labels,
        logits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::npy::write_npy;

    #[test]
    fn parses_minimal_manifest() {
        let m = DatasetManifest::parse(
            "name = \"x\"\nrole = \"test_ood\"\n[[layers]]\nname = \"a\"\npath = \"a.npy\"\n",
            "/data",
        )
        .unwrap();
        assert_eq!(m.role, Role::TestOod);
        assert_eq!(m.resolve(&m.layers[0].path), PathBuf::from("/data/a.npy"));
        assert!(m.labels.is_none());
    }

    #[test]
    fn rejects_bad_documents() {
        assert!(matches!(
            DatasetManifest::parse("name = \"x\"\nrole = \"validation\"\nlayers = []\n", "."),
            Err(Error::Corrupt(_))
        ));
        assert!(
            DatasetManifest::parse("name = \"x\"\nrole = \"train_in\"\nlayers = []\n", ".")
                .is_err()
        );
        let dup = "name = \"x\"\nrole = \"train_in\"\n[[layers]]\nname = \"a\"\npath = \"1\"\n[[layers]]\nname = \"a\"\npath = \"2\"\n";
        assert!(DatasetManifest::parse(dup, ".").is_err());
    }

    #[test]
    fn checksum_mismatch_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        write_npy(dir.path().join("a.npy"), &Matrix::identity(2)).unwrap();
        let good = sha256_file(&dir.path().join("a.npy")).unwrap();
        let text = |h: &str| {
            format!("name = \"x\"\nrole = \"train_in\"\n[[layers]]\nname = \"a\"\npath = \"a.npy\"\nsha256 = \"{h}\"\n")
        };
        fs::write(dir.path().join("m.toml"), text(&good)).unwrap();
        let m = DatasetManifest::load(dir.path().join("m.toml")).unwrap();
        assert_eq!(load_bundle(&m).unwrap().per_layer[0], Matrix::identity(2));
        fs::write(dir.path().join("m.toml"), text(&"0".repeat(64))).unwrap();
        let m = DatasetManifest::load(dir.path().join("m.toml")).unwrap();
        assert!(matches!(load_bundle(&m), Err(Error::Corrupt(_))));
    }
}
