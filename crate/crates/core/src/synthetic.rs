//! Seeded ground-truth generators: a known chain of Gaussian mixtures to
//! sample in-distribution traces from, and a perturbed copy of it that
//! plays the out-of-distribution role.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::chain::{LsgmModel, TransitionMatrix};
use crate::error::{Error, Result};
use crate::mixture::{CovarianceMode, LayerMixture};
use crate::tensor::{cholesky, Matrix};

/// A generative chain with isotropic components of standard deviation `sd`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub initial: Vec<f64>,
    /// `means[layer][component]`.
    pub means: Vec<Vec<Vec<f64>>>,
    /// `transitions[layer][from][to]`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub sd: f64,
}

/// Samples drawn from a [`GroundTruth`].
#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub features: Vec<Matrix>,
    /// Hidden cluster of every sample at every layer: `clusters[layer][n]`.
    pub clusters: Vec<Vec<usize>>,
}

fn normal_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

fn categorical(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let mut u: f64 = rng.random();
    for (i, p) in probs.iter().enumerate() {
        if u < *p {
            return i;
        }
        u -= p;
    }
    probs.len() - 1
}

impl GroundTruth {
    /// Random chain with `components[i]` clusters of dimension `dims[i]`.
    ///
    /// Cluster means are drawn from `N(0, spread^2 I)`; each transition row
    /// puts `stickiness` on one preferred successor and spreads the rest
    /// uniformly.
    pub fn random(
        components: &[usize],
        dims: &[usize],
        spread: f64,
        stickiness: f64,
        seed: u64,
    ) -> Result<Self> {
        if components.is_empty() || components.len() != dims.len() {
            return Err(Error::invalid(
                "components and dims must be equally long and non-empty",
            ));
        }
        if components.contains(&0) || dims.contains(&0) {
            return Err(Error::invalid(
                "every layer needs at least one component and dimension",
            ));
        }
        if !(0.0..=1.0).contains(&stickiness) {
            return Err(Error::invalid("stickiness must lie in [0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = components
            .iter()
            .zip(dims)
            .map(|(&k, &d)| (0..k).map(|_| normal_vec(&mut rng, d, spread)).collect())
            .collect();
        let transitions = components
            .windows(2)
            .map(|w| {
                let (kf, kt) = (w[0], w[1]);
                (0..kf)
                    .map(|_| {
                        let preferred = rng.random_range(0..kt);
                        let rest = if kt > 1 {
                            (1.0 - stickiness) / (kt - 1) as f64
                        } else {
                            0.0
                        };
                        (0..kt)
                            .map(|b| {
                                if kt == 1 {
                                    1.0
                                } else if b == preferred {
                                    stickiness
                                } else {
                                    rest
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(GroundTruth {
            initial: vec![1.0 / components[0] as f64; components[0]],
            means,
            transitions,
            sd: 1.0,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.means.len()
    }

    /// Copy with every cluster mean moved `shift * sd` along its own random
    /// direction and every transition matrix's columns permuted.
    pub fn shifted(&self, shift: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = self
            .means
            .iter()
            .map(|layer| {
                layer
                    .iter()
                    .map(|m| {
                        let dir = normal_vec(&mut rng, m.len(), 1.0);
                        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                        m.iter()
                            .zip(&dir)
                            .map(|(a, u)| a + shift * self.sd * u / norm)
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let transitions = self
            .transitions
            .iter()
            .map(|t| {
                let kt = t[0].len();
                let identity: Vec<usize> = (0..kt).collect();
                let mut perm = identity.clone();
                if kt > 1 {
                    while perm == identity {
                        perm.shuffle(&mut rng);
                    }
                }
                t.iter()
                    .map(|row| perm.iter().map(|&p| row[p]).collect())
                    .collect()
            })
            .collect();
        GroundTruth {
            initial: self.initial.clone(),
            means,
            transitions,
            sd: self.sd,
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> SyntheticData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = self.num_layers();
        let mut rows: Vec<Vec<f64>> = self
            .means
            .iter()
            .map(|l| Vec::with_capacity(n * l[0].len()))
            .collect();
        let mut clusters = vec![Vec::with_capacity(n); m];
        for _ in 0..n {
            let mut z = categorical(&mut rng, &self.initial);
            for i in 0..m {
                if i > 0 {
                    z = categorical(&mut rng, &self.transitions[i - 1][z]);
                }
                clusters[i].push(z);
                let mean = &self.means[i][z];
                rows[i].extend(mean.iter().map(|mu| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    mu + self.sd * e
                }));
            }
        }
        let features = rows
            .into_iter()
            .zip(&self.means)
            .map(|(data, l)| {
                let d = l[0].len();
                Matrix::new(n, d, data).expect("samples are finite")
            })
            .collect();
        SyntheticData { features, clusters }
    }
}

/// A random chain with `components[i]` full-covariance components of
/// dimension `dims[i]`: Dirichlet(1) weights and transition rows, standard
/// normal means scaled by 2, and covariances `A A^T / d + I / 2`.
pub fn random_model(components: &[usize], dims: &[usize], seed: u64) -> Result<LsgmModel> {
    if components.is_empty() || components.len() != dims.len() {
        return Err(Error::invalid(
            "components and dims must be equally long and non-empty",
        ));
    }
    if components.contains(&0) || dims.contains(&0) {
        return Err(Error::invalid(
            "every layer needs at least one component and dimension",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let simplex = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> {
        let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let total: f64 = e.iter().sum();
        e.iter().map(|v| v / total).collect()
    };
    let mut layers = Vec::with_capacity(components.len());
    for (&k, &d) in components.iter().zip(dims) {
        let weights = simplex(&mut rng, k);
        let means = (0..k).map(|_| normal_vec(&mut rng, d, 2.0)).collect();
        let factors = (0..k)
            .map(|_| {
                let a = Matrix::new(d, d, normal_vec(&mut rng, d * d, 1.0))?;
                let mut cov = a.matmul(&a.transpose())?.scaled(1.0 / d as f64);
                for i in 0..d {
                    cov[(i, i)] += 0.5;
                }
                cholesky(&cov, 0.0)
            })
            .collect::<Result<Vec<_>>>()?;
        layers.push(LayerMixture::new(
            weights,
            means,
            factors,
            CovarianceMode::Full,
        )?);
    }
    let transitions = components
        .windows(2)
        .map(|w| {
            let rows: Vec<Vec<f64>> = (0..w[0]).map(|_| simplex(&mut rng, w[1])).collect();
            TransitionMatrix::new(Matrix::from_rows(&rows)?, 0.0)
        })
        .collect::<Result<Vec<_>>>()?;
    let names = (0..components.len()).map(|i| format!("layer{i}")).collect();
    LsgmModel::new(layers, transitions, names)
}

impl SyntheticData {
    pub fn len(&self) -> usize {
        self.features.first().map_or(0, |m| m.rows())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Class labels: the hidden cluster at the last layer.
    pub fn labels(&self) -> Vec<usize> {
        self.clusters.last().cloned().unwrap_or_default()
    }

    /// Logits of a nearest-mean classifier over the last layer's clusters
    /// of `truth`: `-|x - mu_k|^2 / 2`.
    pub fn logits(&self, truth: &GroundTruth) -> Matrix {
        let last = self.features.last().expect("at least one layer");
        let means = truth.means.last().expect("at least one layer");
        let mut out = Matrix::zeros(last.rows(), means.len());
        for (i, x) in last.row_iter().enumerate() {
            for (k, mu) in means.iter().enumerate() {
                out[(i, k)] = -0.5
                    * x.iter()
                        .zip(mu)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
            }
        }
        out
    }
}
