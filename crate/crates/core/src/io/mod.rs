//! File formats: NPY arrays, dataset manifests and model files.

pub mod hexfloat;
pub mod manifest;
pub mod model;
pub mod npy;

pub use manifest::{
    load_bundle, sha256_file, DatasetManifest, FeatureBundle, FileEntry, LayerEntry, Role,
};
pub use model::{
    load_model, model_from_str, model_to_string, save_model, ModelFile, FORMAT_VERSION,
};
pub use npy::{encode_npy, parse_npy, read_npy, read_npy_labels, write_npy};
