//! Class-conditional Gaussian statistics.
//!
//! Means blend the bank (or batch) evidence with the prototype prior; the
//! covariance is pooled over bank deviations and inverted with the Bayesian
//! ridge rule `P = d ((N - 1) S + tr(S) I)^{-1}`. With a shared covariance the
//! discriminant is affine, `w_k . x + b_k` with `w_k = P mu_k` and
//! `b_k = -1/2 mu_k^T P mu_k`.

use alloc::vec;
use alloc::vec::Vec;

use crate::bank::KnowledgeBank;
use crate::error::{AdaptError, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::math;
use crate::types::{CovarianceMode, FeatureVector, PrototypeSet, SoftLabel};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `mu*_k = alpha mu'_k + (1 - alpha) mu_hat_k` with `mu'_k` the
/// soft-label-weighted bank mean. Empty classes keep the prototype.
pub fn means_online(bank: &KnowledgeBank, protos: &PrototypeSet, alpha: f64) -> Vec<Vec<f64>> {
    let d = protos.dim();
    (0..protos.num_classes())
        .map(|k| {
            let weight = bank.class_weight_sum(k).expect("bank sized to prototypes");
            let sum = bank.weighted_feature_sum(k, d).expect("bank sized to prototypes");
            blend(&sum, weight, protos.get(k).as_slice(), alpha)
        })
        .collect()
}

/// One-pass transductive means: batch and bank terms, both weighted by the
/// zero-shot labels, blended with the prototypes.
pub fn means_transductive(
    xs: &[FeatureVector],
    yhat: &[SoftLabel],
    bank: &KnowledgeBank,
    protos: &PrototypeSet,
    alpha: f64,
) -> Result<Vec<Vec<f64>>> {
    let d = protos.dim();
    let k_classes = protos.num_classes();
    if xs.len() != yhat.len() {
        return Err(AdaptError::DimensionMismatch { expected: xs.len(), found: yhat.len() });
    }
    for x in xs {
        protos.check_dim(x)?;
    }
    if let Some(y) = yhat.iter().find(|y| y.len() != k_classes) {
        return Err(AdaptError::DimensionMismatch { expected: k_classes, found: y.len() });
    }
    let mut sums = vec![vec![0.0; d]; k_classes];
    let mut weights = vec![0.0; k_classes];
    for (x, y) in xs.iter().zip(yhat) {
        for k in 0..k_classes {
            let w = y.get(k);
            weights[k] += w;
            for (a, &v) in sums[k].iter_mut().zip(x.as_slice()) {
                *a += w * v;
            }
        }
    }
    Ok((0..k_classes)
        .map(|k| {
            let mut sum = bank.weighted_feature_sum(k, d).expect("bank sized to prototypes");
            for (a, b) in sum.iter_mut().zip(&sums[k]) {
                *a += b;
            }
            let weight = weights[k] + bank.class_weight_sum(k).expect("bank sized to prototypes");
            blend(&sum, weight, protos.get(k).as_slice(), alpha)
        })
        .collect())
}

fn blend(sum: &[f64], weight: f64, prior: &[f64], alpha: f64) -> Vec<f64> {
    if weight > 0.0 {
        sum.iter().zip(prior).map(|(s, p)| alpha * (s / weight) + (1.0 - alpha) * p).collect()
    } else {
        prior.to_vec()
    }
}

/// `Sigma = (1/N) sum_k sum_{j in B_k} (x_j - mu_k)(x_j - mu_k)^T`; zero matrix when the bank is empty.
pub fn pooled_covariance(bank: &KnowledgeBank, means: &[Vec<f64>]) -> (Matrix, usize) {
    let d = means.first().map_or(0, Vec::len);
    let mut cov = Matrix::zeros(d);
    let mut n = 0usize;
    let mut dev = vec![0.0; d];
    for (k, mu) in means.iter().enumerate() {
        for e in bank.entries(k) {
            for ((o, &x), &m) in dev.iter_mut().zip(e.feature().as_slice()).zip(mu) {
                *o = x - m;
            }
            cov.add_outer(&dev, 1.0);
            n += 1;
        }
    }
    if n > 0 {
        cov.scale(1.0 / n as f64);
    }
    (cov, n)
}

/// Shrinkage precision and its log-determinant.
#[derive(Clone, Debug, PartialEq)]
pub struct Precision {
    pub matrix: Matrix,
    pub log_det: f64,
}

impl Precision {
    pub fn identity(d: usize) -> Self {
        Self { matrix: Matrix::identity(d), log_det: 0.0 }
    }
}

/// `d ((N - 1) cov + tr(cov) I)^{-1}`, or the identity when `n_bank < 2` or
/// the trace vanishes.
pub fn shrinkage_inverse(cov: &Matrix, n_bank: usize) -> Result<Matrix> {
    shrinkage_precision(cov, n_bank).map(|p| p.matrix)
}

pub fn shrinkage_precision(cov: &Matrix, n_bank: usize) -> Result<Precision> {
    let d = cov.dim();
    let tr = cov.trace();
    if n_bank < 2 || tr.is_nan() || tr <= 0.0 {
        return Ok(Precision::identity(d));
    }
    let mut reg = cov.clone();
    reg.scale((n_bank - 1) as f64);
    reg.add_diagonal(tr);
    let chol = Cholesky::new(&reg)?;
    let mut matrix = chol.inverse();
    matrix.scale(d as f64);
    let log_det = d as f64 * math::ln(d as f64) - chol.log_det();
    Ok(Precision { matrix, log_det })
}

/// Per-class covariance and precision for the class-wise variant.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassGaussian {
    pub covariance: Matrix,
    pub precision: Precision,
    pub count: usize,
}

/// Shrinkage rule applied per class with per-class counts; classes with
/// fewer than two entries get identity precision.
pub fn per_class_covariance(bank: &KnowledgeBank, means: &[Vec<f64>]) -> Result<Vec<ClassGaussian>> {
    let d = means.first().map_or(0, Vec::len);
    means
        .iter()
        .enumerate()
        .map(|(k, mu)| {
            let mut cov = Matrix::zeros(d);
            let mut dev = vec![0.0; d];
            let mut count = 0;
            for e in bank.entries(k) {
                for ((o, &x), &m) in dev.iter_mut().zip(e.feature().as_slice()).zip(mu) {
                    *o = x - m;
                }
                cov.add_outer(&dev, 1.0);
                count += 1;
            }
            if count > 0 {
                cov.scale(1.0 / count as f64);
            }
            let precision = shrinkage_precision(&cov, count)?;
            Ok(ClassGaussian { covariance: cov, precision, count })
        })
        .collect()
}

/// Snapshot of the current class-conditional model.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianModel {
    means: Vec<Vec<f64>>,
    covariance: Matrix,
    precision: Precision,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    n_bank: usize,
    per_class: Option<Vec<ClassGaussian>>,
}

impl GaussianModel {
    /// Identity precision: a prototype-style linear classifier.
    pub fn identity(means: Vec<Vec<f64>>, n_bank: usize) -> Self {
        let d = means.first().map_or(0, Vec::len);
        Self::shared_with(means, Matrix::zeros(d), Precision::identity(d), n_bank)
    }

    /// Shared covariance with the shrinkage inverse.
    pub fn shared(means: Vec<Vec<f64>>, covariance: Matrix, n_bank: usize) -> Result<Self> {
        let precision = shrinkage_precision(&covariance, n_bank)?;
        Ok(Self::shared_with(means, covariance, precision, n_bank))
    }

    fn shared_with(means: Vec<Vec<f64>>, covariance: Matrix, precision: Precision, n_bank: usize) -> Self {
        let weights: Vec<Vec<f64>> = means.iter().map(|m| precision.matrix.mul_vec(m)).collect();
        let bias = weights.iter().zip(&means).map(|(w, m)| -0.5 * math::dot(w, m)).collect();
        Self { means, covariance, precision, weights, bias, n_bank, per_class: None }
    }

    /// Class-wise covariances; `bias_k` also carries `1/2 ln det P_k`.
    pub fn per_class(means: Vec<Vec<f64>>, classes: Vec<ClassGaussian>, n_bank: usize) -> Self {
        let d = means.first().map_or(0, Vec::len);
        let weights: Vec<Vec<f64>> =
            means.iter().zip(&classes).map(|(m, c)| c.precision.matrix.mul_vec(m)).collect();
        let bias = weights
            .iter()
            .zip(&means)
            .zip(&classes)
            .map(|((w, m), c)| -0.5 * math::dot(w, m) + 0.5 * c.precision.log_det)
            .collect();
        Self {
            means,
            covariance: Matrix::zeros(d),
            precision: Precision::identity(d),
            weights,
            bias,
            n_bank,
            per_class: Some(classes),
        }
    }

    /// Model from bank statistics around `means`, honoring the covariance
    /// mode and the covariance-update toggle.
    pub fn build(
        bank: &KnowledgeBank,
        means: Vec<Vec<f64>>,
        mode: CovarianceMode,
        update_covariance: bool,
    ) -> Result<Self> {
        let n_bank = bank.total_len();
        if !update_covariance {
            return Ok(Self::identity(means, n_bank));
        }
        match mode {
            CovarianceMode::Identity => Ok(Self::identity(means, n_bank)),
            CovarianceMode::Shared => {
                let (cov, n) = pooled_covariance(bank, &means);
                Self::shared(means, cov, n)
            }
            CovarianceMode::PerClass => {
                let classes = per_class_covariance(bank, &means)?;
                Ok(Self::per_class(means, classes, n_bank))
            }
        }
    }

    /// Same covariance and precision around new means.
    pub fn with_means(&self, means: Vec<Vec<f64>>) -> Self {
        match &self.per_class {
            Some(classes) => Self::per_class(means, classes.clone(), self.n_bank),
            None => Self::shared_with(means, self.covariance.clone(), self.precision.clone(), self.n_bank),
        }
    }

    /// `v^T P_k v` with the precision used for class `k`.
    pub fn class_quad_form(&self, k: usize, v: &[f64]) -> f64 {
        self.class_precision(k).matrix.quad_form(v)
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.covariance.dim()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    /// Shared precision (identity in the per-class variant).
    pub fn precision(&self) -> &Matrix {
        &self.precision.matrix
    }

    pub fn gda_weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn gda_bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn n_bank(&self) -> usize {
        self.n_bank
    }

    pub fn class_gaussians(&self) -> Option<&[ClassGaussian]> {
        self.per_class.as_deref()
    }

    fn class_precision(&self, k: usize) -> &Precision {
        match &self.per_class {
            Some(c) => &c[k].precision,
            None => &self.precision,
        }
    }

    /// Discriminant logits. Shared mode: `w_k . x + b_k`. Per-class mode adds
    /// the class-dependent `-1/2 x^T P_k x`.
    pub fn logits(&self, x: &FeatureVector) -> Vec<f64> {
        let x = x.as_slice();
        let mut out: Vec<f64> =
            self.weights.iter().zip(&self.bias).map(|(w, b)| math::dot(w, x) + b).collect();
        if let Some(classes) = &self.per_class {
            for (o, c) in out.iter_mut().zip(classes) {
                *o -= 0.5 * c.precision.matrix.quad_form(x);
            }
        }
        out
    }

    /// `ln N(x; mu_k, Sigma~)` where `Sigma~^{-1}` is the model precision.
    pub fn log_likelihood(&self, x: &FeatureVector, k: usize) -> f64 {
        let p = self.class_precision(k);
        let dev: Vec<f64> = x.as_slice().iter().zip(&self.means[k]).map(|(a, m)| a - m).collect();
        let d = dev.len() as f64;
        -0.5 * d * LN_2PI + 0.5 * p.log_det - 0.5 * p.matrix.quad_form(&dev)
    }
}

pub fn gda_logits(x: &FeatureVector, model: &GaussianModel) -> Vec<f64> {
    model.logits(x)
}

pub fn log_likelihood(x: &FeatureVector, k: usize, model: &GaussianModel) -> f64 {
    model.log_likelihood(x, k)
}
