//! File formats, synthetic benchmarks, evaluation and the command-line
//! front end for [`cfta_core`].
//!
//! - [`format`]: ADPT embedding and ADPL label files.
//! - [`dataset`]: JSON manifests tying features, prototypes and labels together.
//! - [`synth`]: Gaussian-mixture generator with a Bayes oracle.
//! - [`eval`]: scoring, ablation and ordering experiments, JSON reports.

pub mod dataset;
pub mod eval;
pub mod format;
pub mod synth;

pub use cfta_core as core;
pub use dataset::{load_manifest, Dataset, DatasetError, Manifest};
pub use eval::{evaluate, EvalError, EvalReport, Mode, RunSpec, Solver};
pub use synth::{generate, SynthData, SynthSpec};
