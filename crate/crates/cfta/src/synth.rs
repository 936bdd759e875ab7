//! Synthetic shared-covariance Gaussian mixtures with a Bayes oracle.
//!
//! Class means live on the unit sphere inside a cap around a random anchor,
//! mimicking the narrow cone that contrastive image embeddings occupy.
//! Samples are drawn from `N(mu_k, Sigma)` with one shared SPD covariance,
//! then unit-normalized. Prototypes are the true means plus a random offset,
//! which models the shift between text prototypes and image clusters.

use cfta_core::linalg::Matrix;
use cfta_core::{FeatureVector, PrototypeSet};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    /// Minimum Euclidean distance between any two true means.
    pub mean_separation: f64,
    /// Expected Euclidean norm of the prototype offset before renormalizing.
    pub prototype_noise: f64,
    /// Ratio of largest to smallest covariance eigenvalue.
    pub covariance_condition: f64,
    /// Root-mean-square per-coordinate standard deviation: `tr(Sigma) = d * noise_scale^2`.
    pub noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            dim: 32,
            n_per_class: 200,
            mean_separation: 0.3,
            prototype_noise: 0.3,
            covariance_condition: 5.0,
            noise_scale: 0.04,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(&'static str),
    #[error("could not place {classes} means at separation {separation} in {attempts} attempts")]
    SeparationInfeasible { classes: usize, separation: f64, attempts: usize },
    #[error("covariance is not positive definite")]
    NotPositiveDefinite,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |what| Err(SynthError::InvalidSpec(what));
        if self.classes < 2 {
            return bad("classes must be at least 2");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.n_per_class < 1 {
            return bad("n_per_class must be at least 1");
        }
        if !(self.covariance_condition >= 1.0 && self.covariance_condition.is_finite()) {
            return bad("covariance_condition must be >= 1");
        }
        if !(self.mean_separation >= 0.0 && self.mean_separation <= 2.0) {
            return bad("mean_separation must lie in [0, 2]");
        }
        if !(self.prototype_noise >= 0.0 && self.prototype_noise.is_finite()) {
            return bad("prototype_noise must be non-negative");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SynthData {
    pub spec: SynthSpec,
    /// Unit-normalized samples, rows shuffled.
    pub features: Vec<FeatureVector>,
    /// The same samples before normalization.
    pub raw: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub prototypes: PrototypeSet,
    /// Unit-norm true class means.
    pub true_means: Vec<Vec<f64>>,
    pub true_cov: Matrix,
}

impl SynthData {
    pub fn labels_i32(&self) -> Vec<i32> {
        self.labels.iter().map(|&l| l as i32).collect()
    }

    pub fn to_dataset(&self) -> Dataset {
        Dataset::from_parts(self.features.clone(), self.prototypes.clone(), Some(self.labels_i32()), None)
    }

    pub fn oracle(&self) -> Result<BayesOracle, SynthError> {
        BayesOracle::new(self.true_means.clone(), &self.true_cov)
    }

    /// Oracle accuracy on the normalized samples the adapters see and on the
    /// raw Gaussian draws.
    pub fn oracle_accuracy(&self) -> Result<OracleAccuracy, SynthError> {
        let oracle = self.oracle()?;
        let normalized: Vec<&[f64]> = self.features.iter().map(|f| f.as_slice()).collect();
        Ok(OracleAccuracy {
            normalized: oracle.accuracy(&normalized, &self.labels),
            raw: oracle.accuracy(&self.raw, &self.labels),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleAccuracy {
    pub normalized: f64,
    pub raw: f64,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn unit(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    v / n
}

/// Unit means with pairwise distance at least `sep`, spread around `anchor`
/// so that a typical pair is about `1.25 * sep` apart.
fn place_means(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<DVector<f64>>, SynthError> {
    let d = spec.dim;
    let anchor = unit(gaussian_vec(rng, d));
    // |normalize(c + rho u) - normalize(c + rho u')| ~ sqrt(2) rho / sqrt(1 + rho^2)
    let t = 1.25 * spec.mean_separation / 2f64.sqrt();
    let rho = if t < 0.999 { Some(t / (1.0 - t * t).sqrt()) } else { None };

    let attempts = 10 * spec.classes;
    let mut means: Vec<DVector<f64>> = Vec::with_capacity(spec.classes);
    for _ in 0..attempts {
        let g = gaussian_vec(rng, d);
        let candidate = match rho {
            Some(rho) => {
                let u = &g - &anchor * anchor.dot(&g);
                if u.norm() == 0.0 {
                    continue;
                }
                unit(&anchor + unit(u) * rho)
            }
            None => unit(g),
        };
        if means.iter().all(|m| (m - &candidate).norm() >= spec.mean_separation) {
            means.push(candidate);
            if means.len() == spec.classes {
                return Ok(means);
            }
        }
    }
    Err(SynthError::SeparationInfeasible {
        classes: spec.classes,
        separation: spec.mean_separation,
        attempts,
    })
}

/// Random orthogonal basis and log-spaced eigenvalues with the requested
/// condition number, scaled to `tr = d * noise_scale^2`.
fn shared_covariance(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DVector<f64>) {
    let d = spec.dim;
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let mut lambda =
        DVector::from_fn(d, |i, _| spec.covariance_condition.powf(-(i as f64) / (d - 1) as f64));
    let scale = d as f64 * spec.noise_scale * spec.noise_scale / lambda.sum();
    lambda *= scale;
    (q, lambda)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData, SynthError> {
    spec.validate()?;
    let (k, d, n) = (spec.classes, spec.dim, spec.n_per_class);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let means = place_means(spec, &mut rng)?;
    let (q, lambda) = shared_covariance(spec, &mut rng);
    let sqrt_lambda = lambda.map(f64::sqrt);
    let cov = &q * DMatrix::from_diagonal(&lambda) * q.transpose();

    let mut raw = Vec::with_capacity(k * n);
    let mut labels = Vec::with_capacity(k * n);
    for (c, mu) in means.iter().enumerate() {
        for _ in 0..n {
            let g = gaussian_vec(&mut rng, d).component_mul(&sqrt_lambda);
            let x = mu + &q * g;
            raw.push(x.as_slice().to_vec());
            labels.push(c);
        }
    }

    let protos = means
        .iter()
        .map(|mu| {
            let offset = gaussian_vec(&mut rng, d) * (spec.prototype_noise / (d as f64).sqrt());
            FeatureVector::normalized((mu + offset).as_slice().to_vec())
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| SynthError::InvalidSpec("degenerate prototype"))?;
    let prototypes = PrototypeSet::new(protos).map_err(|_| SynthError::InvalidSpec("degenerate prototypes"))?;

    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.shuffle(&mut rng);
    let raw: Vec<Vec<f64>> = order.iter().map(|&i| raw[i].clone()).collect();
    let labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
    let features = raw
        .iter()
        .map(|r| FeatureVector::normalized(r.clone()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| SynthError::InvalidSpec("sample with zero norm"))?;

    let true_cov = Matrix::from_row_major(d, (0..d * d).map(|i| cov[(i / d, i % d)]).collect())
        .expect("square covariance");
    Ok(SynthData {
        spec: spec.clone(),
        features,
        raw,
        labels,
        prototypes,
        true_means: means.iter().map(|m| m.as_slice().to_vec()).collect(),
        true_cov,
    })
}

/// Exact posterior under the generating mixture with a uniform class prior.
#[derive(Clone, Debug)]
pub struct BayesOracle {
    means: Vec<DVector<f64>>,
    chol: Cholesky<f64, Dyn>,
}

impl BayesOracle {
    pub fn new(means: Vec<Vec<f64>>, cov: &Matrix) -> Result<Self, SynthError> {
        let d = cov.dim();
        let m = DMatrix::from_row_slice(d, d, cov.as_slice());
        let chol = Cholesky::new(m).ok_or(SynthError::NotPositiveDefinite)?;
        Ok(Self { means: means.into_iter().map(DVector::from_vec).collect(), chol })
    }

    /// `-1/2 (x - mu_k)^T Sigma^{-1} (x - mu_k)` per class.
    pub fn log_densities(&self, x: &[f64]) -> Vec<f64> {
        let x = DVector::from_column_slice(x);
        self.means
            .iter()
            .map(|mu| {
                let diff = &x - mu;
                let sol = self.chol.solve(&diff);
                -0.5 * diff.dot(&sol)
            })
            .collect()
    }

    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        let mut l = self.log_densities(x);
        let max = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in &mut l {
            *v = (*v - max).exp();
            total += *v;
        }
        l.iter().map(|v| v / total).collect()
    }

    /// Highest-density class, ties toward the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let l = self.log_densities(x);
        let mut best = 0;
        for (k, &v) in l.iter().enumerate() {
            if v > l[best] {
                best = k;
            }
        }
        best
    }

    pub fn accuracy<R: AsRef<[f64]>>(&self, xs: &[R], labels: &[usize]) -> f64 {
        let hits = xs.iter().zip(labels).filter(|(x, &y)| self.predict(x.as_ref()) == y).count();
        hits as f64 / xs.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub labels: Vec<usize>,
    pub accuracy: f64,
}

/// Bayes-optimal labels for `xs` and their accuracy against `truth`.
pub fn bayes_oracle<R: AsRef<[f64]>>(
    xs: &[R],
    true_means: &[Vec<f64>],
    true_cov: &Matrix,
    truth: &[usize],
) -> Result<OracleResult, SynthError> {
    let oracle = BayesOracle::new(true_means.to_vec(), true_cov)?;
    let labels: Vec<usize> = xs.iter().map(|x| oracle.predict(x.as_ref())).collect();
    let hits = labels.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(OracleResult { accuracy: hits as f64 / labels.len().max(1) as f64, labels })
}
