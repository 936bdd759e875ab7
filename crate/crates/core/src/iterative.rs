//! Alternating (MM-style) reference solver.
//!
//! Instead of the one-pass shortcuts, this alternates exact block updates of
//! the regularized objective: the closed-form label update for fixed
//! statistics, and the stationary mean
//! `mu_k = (sum_i z_ik x_i + sum_{j in B_k} yhat_jk x_j + beta mu_hat_k) /
//! (sum_i z_ik + sum_{j in B_k} yhat_jk + beta)` for fixed labels. With the
//! covariance frozen the monitored objective is non-increasing.
//!
//! `beta` plays the role the fixed `alpha` has in the closed form:
//! `alpha = S / (S + beta)` for a class weight sum `S`.

use alloc::vec;
use alloc::vec::Vec;

use crate::bank::{BankEntry, KnowledgeBank};
use crate::error::Result;
use crate::fusion::{bank_votes, fuse, objective_z, BankVote};
use crate::gaussian::GaussianModel;
use crate::online::{check_stream, stream_order};
use crate::par::map_indexed;
use crate::transductive::{assemble_records, batch_bank, zero_shot_all};
use crate::types::{AdaptConfig, FeatureVector, PredictionRecord, PrototypeSet, SoftLabel};
use crate::zeroshot::{confidence, zero_shot};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterativeOptions {
    pub max_iters: usize,
    /// Stop once the largest change of any label entry falls below this.
    pub tol: f64,
    /// Re-estimate the covariance every iteration; otherwise keep the one
    /// built in the first iteration.
    pub refresh_covariance: bool,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self { max_iters: 20, tol: 1e-5, refresh_covariance: true }
    }
}

#[derive(Clone, Debug)]
pub struct IterativeOutcome {
    pub records: Vec<PredictionRecord>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each label update.
    pub objective_trace: Vec<f64>,
    pub model: GaussianModel,
    pub bank: KnowledgeBank,
}

/// Weighted sums `(sum w x, sum w)` per class, batch part.
fn batch_sums(xs: &[FeatureVector], z: &[SoftLabel], k: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut sums = vec![vec![0.0; d]; k];
    let mut weights = vec![0.0; k];
    for (x, zi) in xs.iter().zip(z) {
        for c in 0..k {
            let w = zi.get(c);
            weights[c] += w;
            for (a, &v) in sums[c].iter_mut().zip(x.as_slice()) {
                *a += w * v;
            }
        }
    }
    (sums, weights)
}

/// Stationary means for fixed batch weights.
fn prior_weighted_means(
    batch: (Vec<Vec<f64>>, Vec<f64>),
    bank: &KnowledgeBank,
    protos: &PrototypeSet,
    beta: f64,
) -> Vec<Vec<f64>> {
    let d = protos.dim();
    let (sums, weights) = batch;
    (0..protos.num_classes())
        .map(|k| {
            let bank_sum = bank.weighted_feature_sum(k, d).expect("bank sized to prototypes");
            let denom = weights[k] + bank.class_weight_sum(k).expect("bank sized to prototypes") + beta;
            (0..d)
                .map(|i| (sums[k][i] + bank_sum[i] + beta * protos.get(k).as_slice()[i]) / denom)
                .collect()
        })
        .collect()
}

/// Rebuilds the model around `means`, reusing the previous precision when
/// the covariance is frozen.
fn rebuild(
    bank: &KnowledgeBank,
    means: Vec<Vec<f64>>,
    cfg: &AdaptConfig,
    frozen: Option<&GaussianModel>,
) -> Result<GaussianModel> {
    match frozen {
        Some(prev) => Ok(prev.with_means(means)),
        None => GaussianModel::build(bank, means, cfg.covariance_mode, cfg.update_covariance),
    }
}

fn max_abs_change(a: &[SoftLabel], b: &[SoftLabel]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(u, v)| u.as_slice().iter().zip(v.as_slice()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

/// Batch objective for fixed statistics: per-sample label terms, bank
/// likelihood terms and the `beta/2 (mu_hat - mu)^T P (mu_hat - mu)` prior.
/// Terms constant in `(z, mu)` for a fixed precision are dropped.
#[allow(clippy::too_many_arguments)]
pub fn transductive_objective(
    xs: &[FeatureVector],
    z: &[SoftLabel],
    yhat: &[SoftLabel],
    votes: &[BankVote],
    bank: &KnowledgeBank,
    model: &GaussianModel,
    protos: &PrototypeSet,
    beta: f64,
) -> f64 {
    let k = model.num_classes();
    let mut total = 0.0;
    for i in 0..xs.len() {
        let ll: Vec<f64> = (0..k).map(|c| model.log_likelihood(&xs[i], c)).collect();
        total += objective_z(&z[i], &yhat[i], &ll, &votes[i]);
    }
    for c in 0..k {
        for e in bank.entries(c) {
            total -= e.soft_label().get(c) * model.log_likelihood(e.feature(), c);
        }
        let dev: Vec<f64> =
            protos.get(c).as_slice().iter().zip(&model.means()[c]).map(|(a, b)| a - b).collect();
        total += 0.5 * beta * model.class_quad_form(c, &dev);
    }
    total
}

pub fn run_transductive_iterative(
    xs: &[FeatureVector],
    protos: &PrototypeSet,
    cfg: &AdaptConfig,
    opts: &IterativeOptions,
) -> Result<IterativeOutcome> {
    cfg.validate()?;
    check_stream(xs, protos)?;
    let k = protos.num_classes();
    let d = protos.dim();
    let max_iters = opts.max_iters.max(1);

    let yhat = zero_shot_all(xs, protos, cfg.tau)?;
    let bank = batch_bank(xs, &yhat, k, cfg);
    let votes: Vec<BankVote> = map_indexed(xs, |_, x| {
        if cfg.use_bank {
            bank_votes(x, &bank)
        } else {
            BankVote::zeros(k)
        }
    });

    let mut z = yhat.clone();
    let mut model = GaussianModel::identity(protos.means(), bank.total_len());
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let means = if cfg.update_means {
            prior_weighted_means(batch_sums(xs, &z, k, d), &bank, protos, cfg.beta)
        } else {
            protos.means()
        };
        let frozen = (!opts.refresh_covariance && iterations > 0).then_some(&model);
        model = rebuild(&bank, means, cfg, frozen)?;
        let next: Vec<SoftLabel> = map_indexed(xs, |i, x| fuse(&yhat[i], &model.logits(x), &votes[i]))
            .into_iter()
            .collect::<Result<_>>()?;
        let change = max_abs_change(&z, &next);
        z = next;
        iterations += 1;
        trace.push(transductive_objective(xs, &z, &yhat, &votes, &bank, &model, protos, cfg.beta));
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    let records = assemble_records(yhat, z, &bank);
    Ok(IterativeOutcome { records, iterations, converged, objective_trace: trace, model, bank })
}

/// Solution of one online step's alternating updates.
#[derive(Clone, Debug)]
pub struct StepSolution {
    pub z: SoftLabel,
    pub iterations: usize,
    pub converged: bool,
    /// Means after each iteration.
    pub mean_history: Vec<Vec<Vec<f64>>>,
}

/// Alternates the label of one sample with the class means, keeping the
/// sample's own `z_ik x_i` term in the mean update.
pub fn solve_online_step(
    x: &FeatureVector,
    yhat: &SoftLabel,
    bank: &KnowledgeBank,
    protos: &PrototypeSet,
    cfg: &AdaptConfig,
    opts: &IterativeOptions,
) -> Result<StepSolution> {
    protos.check_dim(x)?;
    let k = protos.num_classes();
    let d = protos.dim();
    let votes = if cfg.use_bank { bank_votes(x, bank) } else { BankVote::zeros(k) };
    let mut z = yhat.clone();
    let mut model: Option<GaussianModel> = None;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iters.max(1) {
        let means = if cfg.update_means {
            let batch = batch_sums(core::slice::from_ref(x), core::slice::from_ref(&z), k, d);
            prior_weighted_means(batch, bank, protos, cfg.beta)
        } else {
            protos.means()
        };
        history.push(means.clone());
        let frozen = if opts.refresh_covariance { None } else { model.as_ref() };
        let m = rebuild(bank, means, cfg, frozen)?;
        let next = fuse(yhat, &m.logits(x), &votes)?;
        model = Some(m);
        let change = max_abs_change(core::slice::from_ref(&z), core::slice::from_ref(&next));
        z = next;
        iterations += 1;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(StepSolution { z, iterations, converged, mean_history: history })
}

#[derive(Clone, Debug)]
pub struct OnlineIterativeOutcome {
    /// Records in processing order.
    pub records: Vec<PredictionRecord>,
    /// Iterations used per step, in processing order.
    pub iterations: Vec<usize>,
    pub all_converged: bool,
}

/// Online driver with per-step alternating updates; bank handling and
/// ordering follow [`crate::online::run_online`].
pub fn run_online_iterative(
    stream: &[FeatureVector],
    protos: &PrototypeSet,
    cfg: &AdaptConfig,
    opts: &IterativeOptions,
) -> Result<OnlineIterativeOutcome> {
    cfg.validate()?;
    check_stream(stream, protos)?;
    let order = stream_order(stream, protos, cfg)?;
    let mut bank = KnowledgeBank::new(protos.num_classes(), cfg.bank_capacity);
    let mut records = Vec::with_capacity(stream.len());
    let mut iterations = Vec::with_capacity(stream.len());
    let mut all_converged = true;
    for (step, i) in order.into_iter().enumerate() {
        let x = &stream[i];
        let yhat = zero_shot(x, protos, cfg.tau)?;
        let offer = |bank: &mut KnowledgeBank| -> Result<bool> {
            let entry = BankEntry::new(x.clone(), yhat.clone(), step as u64).with_sample_index(i);
            Ok(bank.try_insert(yhat.argmax(), entry)?.admitted())
        };
        let mut inserted = false;
        if cfg.use_bank && !cfg.insert_after_predict {
            inserted = offer(&mut bank)?;
        }
        let sol = solve_online_step(x, &yhat, &bank, protos, cfg, opts)?;
        if cfg.use_bank && cfg.insert_after_predict {
            inserted = offer(&mut bank)?;
        }
        all_converged &= sol.converged;
        iterations.push(sol.iterations);
        records.push(PredictionRecord {
            sample_index: i,
            confidence: confidence(&yhat).value(),
            argmax_class: sol.z.argmax(),
            zero_shot: yhat,
            adapted: sol.z,
            bank_inserted: inserted,
        });
    }
    Ok(OnlineIterativeOutcome { records, iterations, all_converged })
}

/// `beta` that makes the iterative mean weight equal `alpha` for weight sum `s`.
pub fn beta_for_alpha(alpha: f64, s: f64) -> f64 {
    s * (1.0 - alpha) / alpha
}
