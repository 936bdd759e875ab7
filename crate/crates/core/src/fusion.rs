//! Closed-form label posterior.
//!
//! The adapted label minimizes, over the simplex,
//! `-z . loglik + KL(z || yhat) - z . votes`, whose stationary point is
//! `z_k ∝ yhat_k exp(gda_k + votes_k)`. Everything is evaluated in log space:
//! with a shrinkage precision the discriminant logits easily exceed the
//! range of `exp`.

use alloc::vec;
use alloc::vec::Vec;

use crate::bank::KnowledgeBank;
use crate::error::{AdaptError, Result};
use crate::math;
use crate::types::{FeatureVector, SoftLabel};

/// Similarity-weighted bank evidence per class:
/// `votes[k] = sum_{j in B_k} max(0, x . x_j) yhat_{j,k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BankVote(Vec<f64>);

impl BankVote {
    pub fn zeros(k: usize) -> Self {
        Self(vec![0.0; k])
    }

    pub fn from_vec(votes: Vec<f64>) -> Self {
        Self(votes)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn bank_votes(x: &FeatureVector, bank: &KnowledgeBank) -> BankVote {
    BankVote(
        (0..bank.num_classes())
            .map(|k| {
                bank.entries(k)
                    .map(|e| {
                        let w = math::dot(x.as_slice(), e.feature().as_slice()).max(0.0);
                        w * e.soft_label().get(k)
                    })
                    .sum()
            })
            .collect(),
    )
}

/// `softmax(ln yhat + gda + votes)`; classes with `yhat_k = 0` stay at zero.
pub fn fuse(yhat: &SoftLabel, gda: &[f64], votes: &BankVote) -> Result<SoftLabel> {
    let k = yhat.len();
    if gda.len() != k {
        return Err(AdaptError::DimensionMismatch { expected: k, found: gda.len() });
    }
    if votes.0.len() != k {
        return Err(AdaptError::DimensionMismatch { expected: k, found: votes.0.len() });
    }
    let mut logits: Vec<f64> = (0..k)
        .map(|i| {
            let p = yhat.get(i);
            if p > 0.0 {
                math::ln(p) + gda[i] + votes.0[i]
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(AdaptError::DegenerateInput("non-finite discriminant logits"));
    }
    if !math::softmax_in_place(&mut logits) {
        return Err(AdaptError::DegenerateInput("zero-shot label has no support"));
    }
    Ok(SoftLabel::from_softmax(logits))
}

/// The `z`-dependent part of the per-sample objective:
/// `-z . loglik + sum_k z_k ln(z_k / yhat_k) - z . votes`.
///
/// `loglik` may be the full Gaussian log-density or the affine discriminant;
/// they differ by a class-independent constant, which shifts the objective by
/// that same constant for every `z` on the simplex.
pub fn objective_z(z: &SoftLabel, yhat: &SoftLabel, loglik: &[f64], votes: &BankVote) -> f64 {
    let mut total = 0.0;
    for k in 0..z.len() {
        let zk = z.get(k);
        total -= zk * (loglik[k] + votes.0[k]);
        if zk > 0.0 {
            total += zk * (math::ln(zk) - math::ln(yhat.get(k)));
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::BankEntry;

    #[test]
    fn empty_bank_votes_are_zero() {
        let bank = KnowledgeBank::new(3, 2);
        let x = FeatureVector::unit(vec![1.0, 0.0]).unwrap();
        assert_eq!(bank_votes(&x, &bank), BankVote::zeros(3));
    }

    #[test]
    fn self_vote_and_clamp() {
        let mut bank = KnowledgeBank::new(2, 4);
        let x = FeatureVector::unit(vec![1.0, 0.0]).unwrap();
        bank.try_insert(0, BankEntry::new(x.clone(), SoftLabel::new(vec![1.0, 0.0]).unwrap(), 0)).unwrap();
        assert_eq!(bank_votes(&x, &bank).as_slice(), &[1.0, 0.0]);

        let opposite = FeatureVector::unit(vec![-0.6, 0.8]).unwrap();
        let mut bank = KnowledgeBank::new(2, 4);
        bank.try_insert(1, BankEntry::new(opposite, SoftLabel::new(vec![0.0, 1.0]).unwrap(), 0)).unwrap();
        assert_eq!(bank_votes(&x, &bank).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn constant_gda_passes_prior_through() {
        let y = SoftLabel::new(vec![0.2, 0.5, 0.3]).unwrap();
        let z = fuse(&y, &[4.0, 4.0, 4.0], &BankVote::zeros(3)).unwrap();
        for k in 0..3 {
            assert!((z.get(k) - y.get(k)).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_prior_gives_softmax_of_gda() {
        let gda = [0.3, -1.2, 2.0];
        let z = fuse(&SoftLabel::uniform(3), &gda, &BankVote::zeros(3)).unwrap();
        let mut expect = gda.to_vec();
        math::softmax_in_place(&mut expect);
        for k in 0..3 {
            assert!((z.get(k) - expect[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn reference_two_class_value() {
        let y = SoftLabel::new(vec![0.7, 0.3]).unwrap();
        let z = fuse(&y, &[0.0, 1.0], &BankVote::zeros(2)).unwrap();
        // direct evaluation of 0.7 / (0.7 + 0.3 e)
        let e = core::f64::consts::E;
        assert!((z.get(0) - 0.7 / (0.7 + 0.3 * e)).abs() < 1e-15);
        assert!((z.get(0) - 0.4619).abs() < 1e-4);
        assert!((z.get(1) - 0.5381).abs() < 1e-4);
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let y = SoftLabel::new(vec![0.5, 0.5]).unwrap();
        let z = fuse(&y, &[1500.0, 1490.0], &BankVote::zeros(2)).unwrap();
        assert!(z.get(0) > 0.9999 && z.get(1).is_finite());
    }

    #[test]
    fn zero_prior_mass_is_preserved() {
        let y = SoftLabel::new(vec![0.0, 1.0]).unwrap();
        let z = fuse(&y, &[100.0, 0.0], &BankVote::from_vec(vec![5.0, 0.0])).unwrap();
        assert_eq!(z.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn objective_vanishes_on_prior() {
        let y = SoftLabel::new(vec![0.2, 0.8]).unwrap();
        assert_eq!(objective_z(&y, &y, &[0.0, 0.0], &BankVote::zeros(2)), 0.0);
        let u = SoftLabel::uniform(4);
        assert_eq!(objective_z(&u, &u, &[0.0; 4], &BankVote::zeros(4)), 0.0);
    }

    #[test]
    fn rejects_mismatched_lengths() {
        let y = SoftLabel::uniform(2);
        assert!(fuse(&y, &[0.0; 3], &BankVote::zeros(2)).is_err());
        assert!(fuse(&y, &[0.0; 2], &BankVote::zeros(3)).is_err());
        assert!(matches!(
            fuse(&y, &[f64::NAN, 0.0], &BankVote::zeros(2)),
            Err(AdaptError::DegenerateInput(_))
        ));
    }
}
