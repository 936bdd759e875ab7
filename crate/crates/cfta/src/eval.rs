//! Scoring, the ablation matrix, ordering experiments and run reports.

use std::fmt::Write as _;
use std::time::Instant;

use cfta_core::iterative::{run_online_iterative, run_transductive_iterative};
use cfta_core::{
    run_online, run_transductive, AdaptConfig, AdaptError, IterativeOptions, PredictionRecord,
    StreamOrder,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::format::UNLABELED;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Online,
    Transductive,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    #[default]
    Closed,
    Iterative,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterativeSettings {
    pub max_iters: usize,
    pub tol: f64,
    pub refresh_covariance: bool,
}

impl From<IterativeOptions> for IterativeSettings {
    fn from(o: IterativeOptions) -> Self {
        Self { max_iters: o.max_iters, tol: o.tol, refresh_covariance: o.refresh_covariance }
    }
}

impl From<IterativeSettings> for IterativeOptions {
    fn from(s: IterativeSettings) -> Self {
        Self { max_iters: s.max_iters, tol: s.tol, refresh_covariance: s.refresh_covariance }
    }
}

/// Everything that determines one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mode: Mode,
    pub solver: Solver,
    pub adapt: AdaptConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterative: Option<IterativeSettings>,
    /// Record `wall_time_ms` in reports.
    #[serde(skip)]
    pub timing: bool,
}

impl RunSpec {
    /// Defaults for `mode`: bank size 16 online, 6 transductive.
    pub fn new(mode: Mode) -> Self {
        let adapt = match mode {
            Mode::Online => AdaptConfig::online(),
            Mode::Transductive => AdaptConfig::transductive(),
        };
        Self { mode, solver: Solver::Closed, adapt, iterative: None, timing: true }
    }

    pub fn iterative(mut self, opts: IterativeOptions) -> Self {
        self.solver = Solver::Iterative;
        self.iterative = Some(opts.into());
        self
    }

    fn iterative_options(&self) -> IterativeOptions {
        self.iterative.map(Into::into).unwrap_or_default()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no labeled samples to score")]
    NoLabeledSamples,
    #[error("ordering experiments require online mode")]
    OrderingRequiresOnline,
    #[error("{labels} labels for {samples} samples")]
    LabelCount { labels: usize, samples: usize },
    #[error(transparent)]
    Adapt(#[from] AdaptError),
}

/// Output of one adaptation run, records in input order.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<PredictionRecord>,
    pub bank_fill: Vec<usize>,
    pub solver_iterations: Option<usize>,
    pub wall_time_ms: Option<u64>,
}

/// Runs the adapter selected by `spec` over the dataset.
pub fn run(data: &Dataset, spec: &RunSpec) -> Result<RunOutput, EvalError> {
    let mut cfg = spec.adapt.clone();
    if let Some(t) = data.tau {
        cfg.tau = t;
    }
    let start = Instant::now();
    let xs = &data.features;
    let protos = &data.prototypes;
    let (mut records, bank_fill, iterations) = match (spec.mode, spec.solver) {
        (Mode::Online, Solver::Closed) => {
            let records = run_online(xs, protos, &cfg)?;
            let fill = online_bank_fill(&records, protos.num_classes(), &cfg);
            (records, fill, None)
        }
        (Mode::Online, Solver::Iterative) => {
            let out = run_online_iterative(xs, protos, &cfg, &spec.iterative_options())?;
            let fill = online_bank_fill(&out.records, protos.num_classes(), &cfg);
            let max_iters = out.iterations.iter().copied().max();
            (out.records, fill, max_iters)
        }
        (Mode::Transductive, Solver::Closed) => {
            let out = run_transductive(xs, protos, &cfg)?;
            (out.records, out.bank.fill(), None)
        }
        (Mode::Transductive, Solver::Iterative) => {
            let out = run_transductive_iterative(xs, protos, &cfg, &spec.iterative_options())?;
            (out.records, out.bank.fill(), Some(out.iterations))
        }
    };
    let elapsed = start.elapsed();
    records.sort_by_key(|r| r.sample_index);
    Ok(RunOutput {
        records,
        bank_fill,
        solver_iterations: iterations,
        wall_time_ms: spec.timing.then_some(elapsed.as_millis() as u64),
    })
}

/// Final online bank occupancy, replayed from the admission flags: every
/// admitted sample lands in its argmax class and displaces at most one entry
/// of that class once the class is full.
fn online_bank_fill(records: &[PredictionRecord], k: usize, cfg: &AdaptConfig) -> Vec<usize> {
    let mut fill = vec![0usize; k];
    for r in records.iter().filter(|r| r.bank_inserted) {
        let c = r.zero_shot.argmax();
        fill[c] = (fill[c] + 1).min(cfg.bank_capacity);
    }
    fill
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub top1_accuracy: f64,
    pub zero_shot_accuracy: f64,
    /// `None` for classes without labeled samples.
    pub per_class_accuracy: Vec<Option<f64>>,
}

/// Accuracy of adapted and zero-shot argmax against `labels`, indexed by
/// `sample_index`. Rows labeled `-1` are skipped and counted.
pub fn score(records: &[PredictionRecord], labels: &[i32]) -> Result<Score, EvalError> {
    let k = records.first().map_or(0, |r| r.adapted.len());
    let mut hits = 0usize;
    let mut zs_hits = 0usize;
    let mut n_labeled = 0usize;
    let mut n_unlabeled = 0usize;
    let mut class_hits = vec![0usize; k];
    let mut class_total = vec![0usize; k];
    for r in records {
        let Some(&y) = labels.get(r.sample_index) else {
            return Err(EvalError::LabelCount { labels: labels.len(), samples: r.sample_index + 1 });
        };
        if y == UNLABELED {
            n_unlabeled += 1;
            continue;
        }
        let y = y as usize;
        n_labeled += 1;
        if y < k {
            class_total[y] += 1;
        }
        if r.argmax_class == y {
            hits += 1;
            if y < k {
                class_hits[y] += 1;
            }
        }
        if r.zero_shot.argmax() == y {
            zs_hits += 1;
        }
    }
    if n_labeled == 0 {
        return Err(EvalError::NoLabeledSamples);
    }
    let n = n_labeled as f64;
    Ok(Score {
        n_labeled,
        n_unlabeled,
        top1_accuracy: hits as f64 / n,
        zero_shot_accuracy: zs_hits as f64 / n,
        per_class_accuracy: class_hits
            .iter()
            .zip(&class_total)
            .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub solver: Solver,
    pub config: RunSpec,
    pub n_samples: usize,
    pub n_labeled: usize,
    pub n_unlabeled: usize,
    pub top1_accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub zero_shot_accuracy: f64,
    pub gain: f64,
    pub bank_fill: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_iterations: Option<usize>,
    pub dataset_sha256: String,
}

impl EvalReport {
    /// Checks the report invariants; returns a description of the first
    /// violation.
    pub fn validate(&self) -> Result<(), String> {
        let in_unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !in_unit(self.top1_accuracy) {
            return Err(format!("top1_accuracy {} outside [0, 1]", self.top1_accuracy));
        }
        if !in_unit(self.zero_shot_accuracy) {
            return Err(format!("zero_shot_accuracy {} outside [0, 1]", self.zero_shot_accuracy));
        }
        if let Some(v) = self.per_class_accuracy.iter().flatten().find(|v| !in_unit(**v)) {
            return Err(format!("per-class accuracy {v} outside [0, 1]"));
        }
        if (self.gain - (self.top1_accuracy - self.zero_shot_accuracy)).abs() > 1e-12 {
            return Err("gain differs from top1_accuracy - zero_shot_accuracy".into());
        }
        if self.n_labeled + self.n_unlabeled != self.n_samples {
            return Err("labeled and unlabeled counts do not add up".into());
        }
        if self.bank_fill.len() != self.per_class_accuracy.len() {
            return Err("bank_fill and per_class_accuracy lengths differ".into());
        }
        if self.dataset_sha256.len() != 64 {
            return Err("dataset_sha256 is not a hex SHA-256".into());
        }
        Ok(())
    }
}

/// Runs and scores one configuration.
pub fn evaluate(data: &Dataset, spec: &RunSpec) -> Result<EvalReport, EvalError> {
    let labels = data.labels.as_deref().ok_or(EvalError::NoLabeledSamples)?;
    if labels.len() != data.n_samples() {
        return Err(EvalError::LabelCount { labels: labels.len(), samples: data.n_samples() });
    }
    let out = run(data, spec)?;
    let s = score(&out.records, labels)?;
    let mut config = spec.clone();
    if let Some(t) = data.tau {
        config.adapt.tau = t;
    }
    if spec.solver == Solver::Iterative {
        config.iterative = Some(spec.iterative_options().into());
    }
    Ok(EvalReport {
        mode: spec.mode,
        solver: spec.solver,
        config,
        n_samples: data.n_samples(),
        n_labeled: s.n_labeled,
        n_unlabeled: s.n_unlabeled,
        gain: s.top1_accuracy - s.zero_shot_accuracy,
        top1_accuracy: s.top1_accuracy,
        per_class_accuracy: s.per_class_accuracy,
        zero_shot_accuracy: s.zero_shot_accuracy,
        bank_fill: out.bank_fill,
        wall_time_ms: out.wall_time_ms,
        solver_iterations: out.solver_iterations,
        dataset_sha256: data.sha256.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub use_bank: bool,
    pub update_means: bool,
    pub update_covariance: bool,
}

impl AblationFlags {
    /// All eight combinations, baseline first and full configuration last.
    pub fn all() -> [AblationFlags; 8] {
        core::array::from_fn(|i| AblationFlags {
            use_bank: i & 4 != 0,
            update_means: i & 2 != 0,
            update_covariance: i & 1 != 0,
        })
    }

    pub fn apply(self, cfg: &mut AdaptConfig) {
        cfg.use_bank = self.use_bank;
        cfg.update_means = self.update_means;
        cfg.update_covariance = self.update_covariance;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowOutcome {
    Report(Box<EvalReport>),
    Error(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub flags: AblationFlags,
    #[serde(flatten)]
    pub outcome: RowOutcome,
}

impl AblationRow {
    pub fn report(&self) -> Option<&EvalReport> {
        match &self.outcome {
            RowOutcome::Report(r) => Some(r),
            RowOutcome::Error(_) => None,
        }
    }
}

/// Evaluates all eight on/off combinations of bank, mean update and
/// covariance update. A failing row carries its error instead of a report.
pub fn ablation_matrix(data: &Dataset, base: &RunSpec) -> Vec<AblationRow> {
    AblationFlags::all()
        .into_par_iter()
        .map(|flags| {
            let mut spec = base.clone();
            flags.apply(&mut spec.adapt);
            let outcome = match evaluate(data, &spec) {
                Ok(r) => RowOutcome::Report(Box::new(r)),
                Err(e) => RowOutcome::Error(e.to_string()),
            };
            AblationRow { flags, outcome }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub shuffled: EvalReport,
    pub easy_to_hard: EvalReport,
    pub hard_to_easy: EvalReport,
}

/// Online accuracy under a seeded shuffle, easy-to-hard and hard-to-easy
/// stream orders.
pub fn ordering_experiment(data: &Dataset, base: &RunSpec) -> Result<OrderingReport, EvalError> {
    if base.mode != Mode::Online {
        return Err(EvalError::OrderingRequiresOnline);
    }
    let with = |order| {
        let mut spec = base.clone();
        spec.adapt.order = order;
        spec
    };
    let specs = [with(StreamOrder::Shuffled), with(StreamOrder::EasyToHard), with(StreamOrder::HardToEasy)];
    let mut reports: Vec<EvalReport> =
        specs.par_iter().map(|s| evaluate(data, s)).collect::<Result<_, _>>()?;
    let hard_to_easy = reports.pop().expect("three reports");
    let easy_to_hard = reports.pop().expect("three reports");
    let shuffled = reports.pop().expect("three reports");
    Ok(OrderingReport { shuffled, easy_to_hard, hard_to_easy })
}

fn mark(on: bool) -> &'static str {
    if on {
        "✓"
    } else {
        "✗"
    }
}

/// Ablation matrix as a text table, accuracies in percent.
pub fn format_ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<6} {:<6} {:<6} {:>9} {:>9}", "bank", "mean", "cov", "acc (%)", "gain (%)");
    for row in rows {
        let f = row.flags;
        let tail = match &row.outcome {
            RowOutcome::Report(r) => {
                format!("{:>9.2} {:>9.2}", 100.0 * r.top1_accuracy, 100.0 * r.gain)
            }
            RowOutcome::Error(e) => format!("error: {e}"),
        };
        let _ = writeln!(
            s,
            "{:<6} {:<6} {:<6} {}",
            mark(f.use_bank),
            mark(f.update_means),
            mark(f.update_covariance),
            tail
        );
    }
    s
}

pub fn format_ordering_table(r: &OrderingReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14} {:>9} {:>9}", "order", "acc (%)", "gain (%)");
    for (name, rep) in [("shuffled", &r.shuffled), ("easy_to_hard", &r.easy_to_hard), ("hard_to_easy", &r.hard_to_easy)]
    {
        let _ = writeln!(s, "{:<14} {:>9.2} {:>9.2}", name, 100.0 * rep.top1_accuracy, 100.0 * rep.gain);
    }
    s
}

/// Mean and sample standard deviation of a per-seed metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SeedSummary {
    pub fn new(seeds: Vec<u64>, values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { seeds, values, mean, std }
    }
}
