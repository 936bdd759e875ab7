//! Full-batch adaptation in one pass: zero-shot labels for every sample,
//! a global top-L bank per pseudo-class, means from all samples weighted by
//! their zero-shot labels, shrinkage covariance over the bank, then the
//! closed-form posterior for each sample.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::bank::{fill_top_l, BankEntry, KnowledgeBank};
use crate::error::Result;
use crate::fusion::{bank_votes, fuse, BankVote};
use crate::gaussian::{means_transductive, GaussianModel};
use crate::online::check_stream;
use crate::par::map_indexed;
use crate::types::{AdaptConfig, FeatureVector, PredictionRecord, PrototypeSet, SoftLabel};
use crate::zeroshot::{confidence, zero_shot};

#[derive(Clone, Debug)]
pub struct TransductiveOutcome {
    /// One record per sample, in input order.
    pub records: Vec<PredictionRecord>,
    pub bank: KnowledgeBank,
    pub model: GaussianModel,
}

/// Zero-shot labels for every sample (parallel when enabled).
pub(crate) fn zero_shot_all(
    xs: &[FeatureVector],
    protos: &PrototypeSet,
    tau: f64,
) -> Result<Vec<SoftLabel>> {
    map_indexed(xs, |_, x| zero_shot(x, protos, tau)).into_iter().collect()
}

/// Top-L bank over the batch; `seq` is the sample index.
pub(crate) fn batch_bank(
    xs: &[FeatureVector],
    yhat: &[SoftLabel],
    k: usize,
    cfg: &AdaptConfig,
) -> KnowledgeBank {
    if !cfg.use_bank {
        return KnowledgeBank::new(k, cfg.bank_capacity);
    }
    let entries = xs
        .iter()
        .zip(yhat)
        .enumerate()
        .map(|(i, (x, y))| BankEntry::new(x.clone(), y.clone(), i as u64));
    fill_top_l(entries, k, cfg.bank_capacity)
}

pub(crate) fn predict_all(
    xs: &[FeatureVector],
    yhat: &[SoftLabel],
    bank: &KnowledgeBank,
    model: &GaussianModel,
    use_bank: bool,
) -> Result<Vec<SoftLabel>> {
    let k = model.num_classes();
    map_indexed(xs, |i, x| {
        let votes = if use_bank { bank_votes(x, bank) } else { BankVote::zeros(k) };
        fuse(&yhat[i], &model.logits(x), &votes)
    })
    .into_iter()
    .collect()
}

pub(crate) fn assemble_records(
    yhat: Vec<SoftLabel>,
    adapted: Vec<SoftLabel>,
    bank: &KnowledgeBank,
) -> Vec<PredictionRecord> {
    let in_bank: BTreeSet<usize> =
        (0..bank.num_classes()).flat_map(|k| bank.entries(k).map(|e| e.sample_index())).collect();
    yhat.into_iter()
        .zip(adapted)
        .enumerate()
        .map(|(i, (zero_shot, adapted))| PredictionRecord {
            sample_index: i,
            confidence: confidence(&zero_shot).value(),
            argmax_class: adapted.argmax(),
            bank_inserted: in_bank.contains(&i),
            zero_shot,
            adapted,
        })
        .collect()
}

pub fn run_transductive(
    xs: &[FeatureVector],
    protos: &PrototypeSet,
    cfg: &AdaptConfig,
) -> Result<TransductiveOutcome> {
    cfg.validate()?;
    check_stream(xs, protos)?;
    let k = protos.num_classes();

    let yhat = zero_shot_all(xs, protos, cfg.tau)?;
    let bank = batch_bank(xs, &yhat, k, cfg);
    let means = if cfg.update_means {
        means_transductive(xs, &yhat, &bank, protos, cfg.alpha)?
    } else {
        protos.means()
    };
    let model = GaussianModel::build(&bank, means, cfg.covariance_mode, cfg.update_covariance)?;
    let adapted = predict_all(xs, &yhat, &bank, &model, cfg.use_bank)?;
    let records = assemble_records(yhat, adapted, &bank);
    Ok(TransductiveOutcome { records, bank, model })
}
