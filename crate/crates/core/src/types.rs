//! Domain types shared by every stage of the pipeline.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{AdaptError, ConfigError, Result};
use crate::math;

/// Tolerance for "unit norm" checks on stored embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Tolerance for the simplex sum check on soft labels.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// A unit-norm embedding of one test sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// L2-normalizes `values`.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        let n = math::norm(&values);
        if n == 0.0 {
            return Err(AdaptError::ZeroNorm);
        }
        values.iter_mut().for_each(|v| *v /= n);
        Ok(Self(values))
    }

    /// Accepts `values` as-is if already unit norm (within 1e-6).
    pub fn unit(values: Vec<f64>) -> Result<Self> {
        check_finite(&values)?;
        let n = math::norm(&values);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(AdaptError::NotUnitNorm { norm: n });
        }
        Ok(Self(values))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = AdaptError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::unit(values)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Self {
        v.0
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(AdaptError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Text-derived class prototypes; they double as the prior class means.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    prototypes: Vec<FeatureVector>,
    class_names: Option<Vec<String>>,
}

impl PrototypeSet {
    pub fn new(prototypes: Vec<FeatureVector>) -> Result<Self> {
        if prototypes.len() < 2 {
            return Err(AdaptError::InvalidPrototypes("need at least two classes"));
        }
        let d = prototypes[0].dim();
        if d == 0 {
            return Err(AdaptError::InvalidPrototypes("zero-dimensional prototypes"));
        }
        if let Some(p) = prototypes.iter().find(|p| p.dim() != d) {
            return Err(AdaptError::DimensionMismatch { expected: d, found: p.dim() });
        }
        for (i, a) in prototypes.iter().enumerate() {
            if prototypes[..i].iter().any(|b| a == b) {
                return Err(AdaptError::InvalidPrototypes("duplicate prototype rows"));
            }
        }
        Ok(Self { prototypes, class_names: None })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.prototypes.len() {
            return Err(AdaptError::DimensionMismatch {
                expected: self.prototypes.len(),
                found: names.len(),
            });
        }
        self.class_names = Some(names);
        Ok(self)
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.prototypes[0].dim()
    }

    #[inline]
    pub fn get(&self, k: usize) -> &FeatureVector {
        &self.prototypes[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &FeatureVector> {
        self.prototypes.iter()
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    /// Prototype rows as plain vectors (the prior means).
    pub fn means(&self) -> Vec<Vec<f64>> {
        self.prototypes.iter().map(|p| p.as_slice().to_vec()).collect()
    }

    pub(crate) fn check_dim(&self, x: &FeatureVector) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(AdaptError::DimensionMismatch { expected: self.dim(), found: x.dim() });
        }
        Ok(())
    }
}

/// A probability vector over the K classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SoftLabel(Vec<f64>);

impl SoftLabel {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_simplex(&probs)?;
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(alloc::vec![1.0 / k as f64; k])
    }

    /// Wraps output of an internal softmax; checked in debug builds.
    pub(crate) fn from_softmax(probs: Vec<f64>) -> Self {
        debug_assert!(check_simplex(&probs).is_ok(), "softmax produced {probs:?}");
        Self(probs)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn get(&self, k: usize) -> f64 {
        self.0[k]
    }

    /// Most probable class, ties toward the lowest index.
    pub fn argmax(&self) -> usize {
        math::argmax(&self.0)
    }
}

impl TryFrom<Vec<f64>> for SoftLabel {
    type Error = AdaptError;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Self::new(probs)
    }
}

impl From<SoftLabel> for Vec<f64> {
    fn from(s: SoftLabel) -> Self {
        s.0
    }
}

/// Simplex check used for every soft label in the system: entries finite and
/// non-negative, sum within 1e-9 of one.
pub fn check_simplex(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(AdaptError::InvalidSoftLabel("empty"));
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(AdaptError::InvalidSoftLabel("non-finite entry"));
    }
    if probs.iter().any(|&p| p < 0.0) {
        return Err(AdaptError::InvalidSoftLabel("negative entry"));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(AdaptError::InvalidSoftLabel("does not sum to one"));
    }
    Ok(())
}

/// How the class-conditional covariance is modelled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    /// One pooled covariance across classes with shrinkage inverse.
    #[default]
    Shared,
    /// Separate shrinkage-regularized covariance per class.
    PerClass,
    /// Identity precision (nearest-prototype style discriminant).
    Identity,
}

/// Processing order for the online stream.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamOrder {
    #[default]
    AsGiven,
    /// Most confident samples first.
    EasyToHard,
    /// Least confident samples first.
    HardToEasy,
    /// Seeded permutation using [`AdaptConfig::seed`].
    Shuffled,
}

/// Run configuration. Defaults follow the online setting (L = 16, alpha = 0.9).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub bank_capacity: usize,
    pub alpha: f64,
    /// Softmax temperature for zero-shot logits.
    pub tau: f64,
    pub covariance_mode: CovarianceMode,
    pub order: StreamOrder,
    pub use_bank: bool,
    pub update_means: bool,
    pub update_covariance: bool,
    /// Prior strength on the class means; used by the iterative solver only.
    pub beta: f64,
    pub seed: u64,
    /// Online only: predict the current sample before offering it to the bank.
    pub insert_after_predict: bool,
}

impl AdaptConfig {
    pub const ONLINE_BANK_CAPACITY: usize = 16;
    pub const TRANSDUCTIVE_BANK_CAPACITY: usize = 6;
    pub const DEFAULT_ALPHA: f64 = 0.9;
    pub const DEFAULT_TAU: f64 = 0.01;
    pub const DEFAULT_BETA: f64 = 1.0;

    pub fn online() -> Self {
        Self::default()
    }

    pub fn transductive() -> Self {
        Self { bank_capacity: Self::TRANSDUCTIVE_BANK_CAPACITY, ..Self::default() }
    }

    /// Checks every field; the error names the first offending one.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.bank_capacity < 1 {
            return Err(ConfigError { field: "bank_capacity", reason: "must be at least 1" });
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ConfigError { field: "alpha", reason: "must lie in [0, 1]" });
        }
        if self.tau <= 0.0 || !self.tau.is_finite() {
            return Err(ConfigError { field: "tau", reason: "must be positive and finite" });
        }
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(ConfigError { field: "beta", reason: "must be positive and finite" });
        }
        Ok(())
    }
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            bank_capacity: Self::ONLINE_BANK_CAPACITY,
            alpha: Self::DEFAULT_ALPHA,
            tau: Self::DEFAULT_TAU,
            covariance_mode: CovarianceMode::Shared,
            order: StreamOrder::AsGiven,
            use_bank: true,
            update_means: true,
            update_covariance: true,
            beta: Self::DEFAULT_BETA,
            seed: 0,
            insert_after_predict: false,
        }
    }
}

/// Outcome for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_index: usize,
    pub zero_shot: SoftLabel,
    pub adapted: SoftLabel,
    /// Negative entropy of `zero_shot`.
    pub confidence: f64,
    pub bank_inserted: bool,
    pub argmax_class: usize,
}
