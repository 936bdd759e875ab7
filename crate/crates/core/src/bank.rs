//! Per-class knowledge banks: fixed-capacity buffers that keep the most
//! confident samples seen so far for each pseudo-class.
//!
//! Each buffer is a min-ordered map keyed by `(confidence, seq)`, so the
//! eviction candidate is always the first key and mutation is `O(log L)`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{AdaptError, Result};
use crate::math;
use crate::types::{FeatureVector, SoftLabel};
use crate::zeroshot::confidence;

/// A cached sample with the zero-shot label it had when admitted.
#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry {
    feature: FeatureVector,
    soft_label: SoftLabel,
    confidence: f64,
    seq: u64,
    sample_index: usize,
}

impl BankEntry {
    /// `confidence` is derived from `soft_label`; `sample_index` defaults to `seq`.
    pub fn new(feature: FeatureVector, soft_label: SoftLabel, seq: u64) -> Self {
        let confidence = confidence(&soft_label).value();
        Self { feature, soft_label, confidence, seq, sample_index: seq as usize }
    }

    pub fn with_sample_index(mut self, index: usize) -> Self {
        self.sample_index = index;
        self
    }

    pub fn feature(&self) -> &FeatureVector {
        &self.feature
    }

    pub fn soft_label(&self) -> &SoftLabel {
        &self.soft_label
    }

    pub fn confidence(&self) -> f64 {
        self.confidence
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn sample_index(&self) -> usize {
        self.sample_index
    }

    fn key(&self) -> SlotKey {
        SlotKey { confidence: self.confidence, seq: self.seq }
    }
}

#[derive(Clone, Copy, Debug)]
struct SlotKey {
    confidence: f64,
    seq: u64,
}

impl PartialEq for SlotKey {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for SlotKey {}

impl PartialOrd for SlotKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SlotKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.confidence.total_cmp(&other.confidence).then(self.seq.cmp(&other.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum InsertOutcome {
    Inserted,
    Replaced { evicted_seq: u64 },
    Rejected,
}

impl InsertOutcome {
    pub fn admitted(self) -> bool {
        !matches!(self, InsertOutcome::Rejected)
    }
}

/// Debug view of one cached entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntrySummary {
    pub seq: u64,
    pub sample_index: usize,
    pub confidence: f64,
    pub argmax: usize,
}

#[derive(Clone, Debug)]
pub struct KnowledgeBank {
    classes: Vec<BTreeMap<SlotKey, BankEntry>>,
    capacity: usize,
}

impl KnowledgeBank {
    pub fn new(num_classes: usize, capacity: usize) -> Self {
        Self { classes: vec![BTreeMap::new(); num_classes], capacity }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Offers `entry` to buffer `class_k`.
    ///
    /// Admitted when the buffer has room, or when its confidence strictly
    /// exceeds the buffer minimum (which is then evicted). Ties are rejected.
    pub fn try_insert(&mut self, class_k: usize, entry: BankEntry) -> Result<InsertOutcome> {
        let classes = self.classes.len();
        let capacity = self.capacity;
        let buf = self
            .classes
            .get_mut(class_k)
            .ok_or(AdaptError::ClassIndexOutOfRange { class: class_k, classes })?;
        let outcome = if buf.len() < capacity {
            buf.insert(entry.key(), entry);
            InsertOutcome::Inserted
        } else {
            match buf.first_key_value() {
                Some((min, _)) if entry.confidence > min.confidence => {
                    let (evicted, _) = buf.pop_first().expect("non-empty buffer");
                    buf.insert(entry.key(), entry);
                    InsertOutcome::Replaced { evicted_seq: evicted.seq }
                }
                _ => InsertOutcome::Rejected,
            }
        };
        debug_assert!(buf.len() <= capacity);
        Ok(outcome)
    }

    /// Entries of class `k`, most confident first (ties: newer first).
    pub fn entries(&self, k: usize) -> impl DoubleEndedIterator<Item = &BankEntry> + '_ {
        self.classes[k].values().rev()
    }

    pub fn class_len(&self, k: usize) -> usize {
        self.classes[k].len()
    }

    /// Total number of cached samples across classes.
    pub fn total_len(&self) -> usize {
        self.classes.iter().map(BTreeMap::len).sum()
    }

    pub fn fill(&self) -> Vec<usize> {
        self.classes.iter().map(BTreeMap::len).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.iter().all(BTreeMap::is_empty)
    }

    pub fn contains_seq(&self, seq: u64) -> bool {
        self.classes.iter().any(|b| b.values().any(|e| e.seq == seq))
    }

    fn check_class(&self, k: usize) -> Result<()> {
        if k >= self.classes.len() {
            return Err(AdaptError::ClassIndexOutOfRange { class: k, classes: self.classes.len() });
        }
        Ok(())
    }

    /// `sum_{j in B_k} yhat_{j,k}`
    pub fn class_weight_sum(&self, k: usize) -> Result<f64> {
        self.check_class(k)?;
        Ok(self.entries(k).map(|e| e.soft_label.get(k)).sum())
    }

    /// `sum_{j in B_k} yhat_{j,k} x_j`
    pub fn weighted_feature_sum(&self, k: usize, dim: usize) -> Result<Vec<f64>> {
        self.check_class(k)?;
        let mut acc = vec![0.0; dim];
        for e in self.entries(k) {
            let w = e.soft_label.get(k);
            for (a, &x) in acc.iter_mut().zip(e.feature.as_slice()) {
                *a += w * x;
            }
        }
        Ok(acc)
    }

    /// Per-class debug dump: `K` arrays of `{seq, sample_index, confidence, argmax}`.
    pub fn summary(&self) -> Vec<Vec<EntrySummary>> {
        (0..self.classes.len())
            .map(|k| {
                self.entries(k)
                    .map(|e| EntrySummary {
                        seq: e.seq,
                        sample_index: e.sample_index,
                        confidence: e.confidence,
                        argmax: math::argmax(e.soft_label.as_slice()),
                    })
                    .collect()
            })
            .collect()
    }
}

/// Builds a bank holding, for each class, the `capacity` most confident
/// entries whose argmax is that class. Equal confidences prefer higher `seq`.
pub fn fill_top_l(
    entries: impl IntoIterator<Item = BankEntry>,
    num_classes: usize,
    capacity: usize,
) -> KnowledgeBank {
    let mut groups: Vec<Vec<BankEntry>> = vec![Vec::new(); num_classes];
    for e in entries {
        let k = e.soft_label.argmax();
        groups[k].push(e);
    }
    let mut bank = KnowledgeBank::new(num_classes, capacity);
    for (k, mut group) in groups.into_iter().enumerate() {
        group.sort_by_key(|e| core::cmp::Reverse(e.key()));
        group.truncate(capacity);
        for e in group {
            bank.classes[k].insert(e.key(), e);
        }
    }
    bank
}
