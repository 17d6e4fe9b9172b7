//! Budgeted performance-estimation (BPE) search toolkit.
//!
//! Training every candidate architecture to convergence just to rank a search
//! space is wasteful. This crate treats the training recipe itself — epochs,
//! batch size, layer count, channel width, image size, and friends — as a
//! hyper-parameter space and looks for cheap recipes whose *ranking* of
//! architectures agrees with the expensive reference recipe. Agreement is
//! measured by Spearman rank correlation against reference scores, traded off
//! against relative cost.
//!
//! The main pieces:
//!
//! - [`hyperspace`]: discrete hyper-parameter dimensions, configs, pin masks,
//!   cost model, and lowest-cost-biased sampling.
//! - [`cellspace`]: a cell-based architecture genotype space with exact
//!   counting, uniform sampling, mutation, and a text codec.
//! - [`ranking`]: fractional ranks, Spearman correlation, and the
//!   correlation-vs-cost objective.
//! - [`forest`]: a deterministic random-forest regressor with impurity-based
//!   feature importance.
//! - [`evaluators`]: the boundary between search and measurement — a synthetic
//!   surrogate and an external-command client share one trait.
//! - [`mip`]: minimum-importance pruning, the iterative procedure that pins
//!   one hyper-parameter per round until a full config is fixed.
//! - [`search`]: random search, regularized evolution, and a REINFORCE
//!   policy-gradient loop over genotypes, all scored through one evaluator.
//! - [`report`]: rank-agreement between result tables, importance and Pareto
//!   views over archived runs.
//! - [`archive`]: on-disk run directories (manifest, state, trials, forests)
//!   with atomic snapshot writes.

pub mod archive;
pub mod cellspace;
pub mod cli;
pub mod error;
pub mod evaluators;
pub mod forest;
pub mod hyperspace;
pub mod mip;
pub mod ranking;
pub mod report;
pub mod search;
mod seeding;

pub use error::{Error, Result};
