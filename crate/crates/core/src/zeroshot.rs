//! Zero-shot scoring against class prototypes and the entropy-based
//! confidence used to rank samples.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::math;
use crate::types::{FeatureVector, PrototypeSet, SoftLabel};

/// Negative entropy (nats) of a soft label; 0 for one-hot, `-ln K` for uniform.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Confidence(pub f64);

impl Confidence {
    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Cosine-similarity logits `t_k . x / tau`.
pub fn zero_shot_logits(x: &FeatureVector, protos: &PrototypeSet, tau: f64) -> Result<Vec<f64>> {
    protos.check_dim(x)?;
    Ok(protos.iter().map(|t| math::dot(t.as_slice(), x.as_slice()) / tau).collect())
}

/// Temperature-scaled softmax over prototype similarities.
pub fn zero_shot(x: &FeatureVector, protos: &PrototypeSet, tau: f64) -> Result<SoftLabel> {
    let mut logits = zero_shot_logits(x, protos, tau)?;
    // logits are finite for unit vectors and tau > 0
    let ok = math::softmax_in_place(&mut logits);
    debug_assert!(ok);
    Ok(SoftLabel::from_softmax(logits))
}

pub fn confidence(y: &SoftLabel) -> Confidence {
    Confidence(y.as_slice().iter().map(|&p| math::xlnx(p)).sum())
}
