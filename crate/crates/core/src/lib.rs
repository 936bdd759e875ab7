//! Closed-form test-time adaptation for vision-language embeddings.
//!
//! Given unit-norm image embeddings and text-derived class prototypes, this
//! crate refines zero-shot predictions without gradients. Confident samples
//! are cached in per-class knowledge banks and drive class-conditional
//! Gaussians with a shared, shrinkage-regularized covariance. Each sample's
//! adapted label is the closed-form minimizer of a regularized likelihood
//! objective.
//!
//! Two drivers are provided: [`online::OnlineAdapter`] consumes a stream one
//! sample at a time, and [`transductive::run_transductive`] adapts a whole
//! batch in one pass. [`iterative`] holds the alternating (MM-style)
//! reference solver used to validate the one-pass shortcuts.
//!
//! The crate is `no_std` (with `alloc`). Enable `parallel` for rayon-backed
//! per-sample maps; results do not depend on the thread count.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod bank;
pub mod error;
pub mod fusion;
pub mod gaussian;
pub mod iterative;
pub mod linalg;
pub mod math;
pub mod online;
mod par;
pub mod transductive;
pub mod types;
pub mod zeroshot;

pub use bank::{BankEntry, InsertOutcome, KnowledgeBank};
pub use error::{AdaptError, ConfigError, Result};
pub use fusion::{bank_votes, fuse, objective_z, BankVote};
pub use gaussian::GaussianModel;
pub use iterative::{IterativeOptions, IterativeOutcome};
pub use online::{run_online, OnlineAdapter};
pub use transductive::{run_transductive, TransductiveOutcome};
pub use types::{
    AdaptConfig, CovarianceMode, FeatureVector, PredictionRecord, PrototypeSet, SoftLabel,
    StreamOrder,
};
pub use zeroshot::{confidence, zero_shot, Confidence};
