//! Fixtures shared by the benchmarks.

use lsgm::synthetic::{random_model, GroundTruth};
use lsgm::{LsgmModel, Matrix, TraceSample};

/// A random chain with `ks[i]` components per layer, all of dimension
/// `dim`, and `n` traces sampled from an unrelated generator.
pub fn chain_fixture(ks: &[usize], dim: usize, n: usize) -> (LsgmModel, Vec<TraceSample>) {
    let dims = vec![dim; ks.len()];
    let model = random_model(ks, &dims, 1).expect("valid shape");
    let truth = GroundTruth::random(&vec![4; ks.len()], &dims, 2.0, 0.7, 2).expect("valid shape");
    let data = truth.sample(n, 3);
    let traces = (0..n)
        .map(|i| TraceSample::from_rows(&data.features, i))
        .collect();
    (model, traces)
}

/// `n` points from `k` separated blobs in `dim` dimensions.
pub fn blob_features(k: usize, dim: usize, n: usize) -> Matrix {
    let truth = GroundTruth::random(&[k], &[dim], 6.0, 1.0, 4).expect("valid shape");
    truth.sample(n, 5).features.remove(0)
}
