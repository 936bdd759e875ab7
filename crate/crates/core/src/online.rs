//! Streaming adaptation, one sample at a time.
//!
//! Per sample: zero-shot label, confidence, bank admission into the
//! pseudo-class buffer, statistics refresh, closed-form prediction. The
//! class means never include the current sample's own `z_i x_i` term; with
//! the default ordering the sample may already sit in the bank when it is
//! predicted (set `insert_after_predict` to offer it afterwards instead).

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bank::{BankEntry, KnowledgeBank};
use crate::error::{AdaptError, Result};
use crate::fusion::{bank_votes, fuse, BankVote};
use crate::gaussian::{means_online, GaussianModel};
use crate::types::{AdaptConfig, FeatureVector, PredictionRecord, PrototypeSet, SoftLabel, StreamOrder};
use crate::zeroshot::{confidence, zero_shot};

pub struct OnlineAdapter<'a> {
    protos: &'a PrototypeSet,
    cfg: AdaptConfig,
    bank: KnowledgeBank,
    model: GaussianModel,
    dirty: bool,
    step: u64,
    rebuilds: usize,
}

impl<'a> OnlineAdapter<'a> {
    pub fn new(protos: &'a PrototypeSet, cfg: AdaptConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            bank: KnowledgeBank::new(protos.num_classes(), cfg.bank_capacity),
            model: GaussianModel::identity(protos.means(), 0),
            protos,
            cfg,
            dirty: false,
            step: 0,
            rebuilds: 0,
        })
    }

    pub fn config(&self) -> &AdaptConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &KnowledgeBank {
        &self.bank
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Number of model rebuilds so far (one per bank change that was queried).
    pub fn rebuilds(&self) -> usize {
        self.rebuilds
    }

    /// Current model, rebuilt first if the bank changed.
    pub fn model(&mut self) -> Result<&GaussianModel> {
        self.refresh()?;
        Ok(&self.model)
    }

    pub fn step(&mut self, sample_index: usize, x: &FeatureVector) -> Result<PredictionRecord> {
        self.protos.check_dim(x)?;
        let yhat = zero_shot(x, self.protos, self.cfg.tau)?;
        let conf = confidence(&yhat).value();

        let mut inserted = false;
        if self.cfg.use_bank && !self.cfg.insert_after_predict {
            inserted = self.offer(sample_index, x, &yhat)?;
        }
        let adapted = self.predict(x, &yhat)?;
        if self.cfg.use_bank && self.cfg.insert_after_predict {
            inserted = self.offer(sample_index, x, &yhat)?;
        }
        self.step += 1;

        Ok(PredictionRecord {
            sample_index,
            argmax_class: adapted.argmax(),
            zero_shot: yhat,
            adapted,
            confidence: conf,
            bank_inserted: inserted,
        })
    }

    fn offer(&mut self, sample_index: usize, x: &FeatureVector, yhat: &SoftLabel) -> Result<bool> {
        let entry = BankEntry::new(x.clone(), yhat.clone(), self.step).with_sample_index(sample_index);
        let admitted = self.bank.try_insert(yhat.argmax(), entry)?.admitted();
        self.dirty |= admitted;
        Ok(admitted)
    }

    fn predict(&mut self, x: &FeatureVector, yhat: &SoftLabel) -> Result<SoftLabel> {
        self.refresh()?;
        let gda = self.model.logits(x);
        let votes = if self.cfg.use_bank {
            bank_votes(x, &self.bank)
        } else {
            BankVote::zeros(self.protos.num_classes())
        };
        fuse(yhat, &gda, &votes)
    }

    fn refresh(&mut self) -> Result<()> {
        if !self.dirty {
            return Ok(());
        }
        let means = if self.cfg.update_means {
            means_online(&self.bank, self.protos, self.cfg.alpha)
        } else {
            self.protos.means()
        };
        self.model = GaussianModel::build(
            &self.bank,
            means,
            self.cfg.covariance_mode,
            self.cfg.update_covariance,
        )?;
        self.dirty = false;
        self.rebuilds += 1;
        Ok(())
    }
}

/// Processing order for a stream given per-sample confidences.
/// Confidence orderings break ties by original index.
pub fn processing_order(confidences: &[f64], order: StreamOrder, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..confidences.len()).collect();
    match order {
        StreamOrder::AsGiven => {}
        StreamOrder::EasyToHard => {
            idx.sort_by(|&a, &b| confidences[b].total_cmp(&confidences[a]).then(a.cmp(&b)))
        }
        StreamOrder::HardToEasy => {
            idx.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]).then(a.cmp(&b)))
        }
        StreamOrder::Shuffled => idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
    }
    idx
}

pub(crate) fn check_stream(stream: &[FeatureVector], protos: &PrototypeSet) -> Result<()> {
    if stream.is_empty() {
        return Err(AdaptError::EmptyStream);
    }
    stream.iter().try_for_each(|x| protos.check_dim(x))
}

/// Processing order for `cfg.order`; confidence orderings use an upfront
/// zero-shot pass.
pub fn stream_order(
    stream: &[FeatureVector],
    protos: &PrototypeSet,
    cfg: &AdaptConfig,
) -> Result<Vec<usize>> {
    let confidences = match cfg.order {
        StreamOrder::EasyToHard | StreamOrder::HardToEasy => stream
            .iter()
            .map(|x| zero_shot(x, protos, cfg.tau).map(|y| confidence(&y).value()))
            .collect::<Result<Vec<_>>>()?,
        _ => alloc::vec![0.0; stream.len()],
    };
    Ok(processing_order(&confidences, cfg.order, cfg.seed))
}

/// Runs the whole stream; records come back in processing order.
pub fn run_online(
    stream: &[FeatureVector],
    protos: &PrototypeSet,
    cfg: &AdaptConfig,
) -> Result<Vec<PredictionRecord>> {
    cfg.validate()?;
    check_stream(stream, protos)?;
    let order = stream_order(stream, protos, cfg)?;
    let mut adapter = OnlineAdapter::new(protos, cfg.clone())?;
    order.into_iter().map(|i| adapter.step(i, &stream[i])).collect()
}
