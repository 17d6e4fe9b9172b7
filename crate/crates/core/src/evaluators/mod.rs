//! The boundary between search and measurement.
//!
//! Everything upstream (pruning, search strategies, reports) only ever sees
//! the [`Evaluator`] trait: give it a config and a fixed set of architectures,
//! get back one outcome per architecture plus a mean cost. Two
//! implementations ship — a fast synthetic [`SurrogateModel`] and an
//! [`ExternalEvaluator`](external::ExternalEvaluator) that shells out to a
//! user-supplied command — and they are interchangeable everywhere.

mod external;
mod surrogate;

pub use external::{ExternalEvaluator, ExternalProtocol, WORK_DIR_ENV};
pub use surrogate::SurrogateModel;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cellspace::{random_genotype, Genotype};
use crate::error::{Error, Result};
use crate::hyperspace::BpeConfig;

/// One architecture with a stable identifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchEntry {
    pub id: String,
    pub genotype: Genotype,
}

/// A fixed, ordered set of architectures. The same set is scored under every
/// config so that score vectors stay comparable position by position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawArchSet")]
pub struct ArchSet {
    entries: Vec<ArchEntry>,
}

#[derive(Deserialize)]
struct RawArchSet {
    entries: Vec<ArchEntry>,
}

impl TryFrom<RawArchSet> for ArchSet {
    type Error = Error;

    fn try_from(raw: RawArchSet) -> Result<Self> {
        ArchSet::new(raw.entries)
    }
}

impl ArchSet {
    /// Builds a set from entries with non-empty, unique ids.
    pub fn new(entries: Vec<ArchEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Invalid("architecture set is empty".into()));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.id.is_empty() {
                return Err(Error::Invalid(format!("architecture {i} has an empty id")));
            }
            if entries[..i].iter().any(|other| other.id == e.id) {
                return Err(Error::Invalid(format!("duplicate architecture id {}", e.id)));
            }
        }
        Ok(ArchSet { entries })
    }

    /// Draws `count` genotypes uniformly and ids them `a0000`, `a0001`, ...
    pub fn sample<R: Rng + ?Sized>(m: usize, count: usize, rng: &mut R) -> Result<ArchSet> {
        if count == 0 {
            return Err(Error::Invalid("architecture set is empty".into()));
        }
        let entries = (0..count)
            .map(|i| {
                Ok(ArchEntry {
                    id: format!("a{i:04}"),
                    genotype: random_genotype(m, rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ArchSet::new(entries)
    }

    pub fn entries(&self) -> &[ArchEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ArchEntry> {
        self.entries.iter()
    }
}

/// The outcome for one architecture under one config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchOutcome {
    /// The measured performance score (higher is better).
    Score(f64),
    /// This architecture could not be measured; the rest of the set stands.
    Failed { reason: String },
}

impl ArchOutcome {
    pub fn score(&self) -> Option<f64> {
        match self {
            ArchOutcome::Score(s) => Some(*s),
            ArchOutcome::Failed { .. } => None,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, ArchOutcome::Failed { .. })
    }
}

/// One evaluation of an architecture set under a config: an outcome per
/// architecture (in set order) and the mean per-architecture cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEvalResult")]
pub struct EvalResult {
    outcomes: Vec<ArchOutcome>,
    mean_cost: f64,
}

#[derive(Deserialize)]
struct RawEvalResult {
    outcomes: Vec<ArchOutcome>,
    mean_cost: f64,
}

impl TryFrom<RawEvalResult> for EvalResult {
    type Error = Error;

    fn try_from(raw: RawEvalResult) -> Result<Self> {
        EvalResult::new(raw.outcomes, raw.mean_cost)
    }
}

impl EvalResult {
    /// At least one architecture must have scored — a result with no usable
    /// scores is an evaluation failure, not a value — and every score and the
    /// cost must be finite with `mean_cost > 0`.
    pub fn new(outcomes: Vec<ArchOutcome>, mean_cost: f64) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Eval("evaluation produced no outcomes".into()));
        }
        if outcomes.iter().all(ArchOutcome::is_failed) {
            return Err(Error::Eval("every architecture failed".into()));
        }
        if let Some(bad) = outcomes
            .iter()
            .filter_map(ArchOutcome::score)
            .find(|s| !s.is_finite())
        {
            return Err(Error::Eval(format!("non-finite score {bad}")));
        }
        if !(mean_cost > 0.0) || !mean_cost.is_finite() {
            return Err(Error::Eval(format!(
                "mean cost must be positive and finite, got {mean_cost}"
            )));
        }
        Ok(EvalResult {
            outcomes,
            mean_cost,
        })
    }

    pub fn outcomes(&self) -> &[ArchOutcome] {
        &self.outcomes
    }

    pub fn mean_cost(&self) -> f64 {
        self.mean_cost
    }

    /// Number of architectures that actually scored.
    pub fn effective_n(&self) -> usize {
        self.outcomes.iter().filter(|o| !o.is_failed()).count()
    }
}

/// Scores a set of architectures under a training config.
///
/// Contract: the returned outcomes align one-to-one with `archs` in order;
/// per-architecture failures are isolated as [`ArchOutcome::Failed`]; an
/// evaluation where nothing scored is an `Err`. Implementations must be
/// deterministic functions of `(config, archs)` plus their own construction
/// parameters, except for honestly measured wall-clock costs.
pub trait Evaluator {
    fn evaluate(&self, config: &BpeConfig, archs: &ArchSet) -> Result<EvalResult>;
}

impl<T: Evaluator + ?Sized> Evaluator for &T {
    fn evaluate(&self, config: &BpeConfig, archs: &ArchSet) -> Result<EvalResult> {
        (**self).evaluate(config, archs)
    }
}

/// Pairs up the scores two evaluations assign to the same architecture set,
/// skipping any architecture that failed on either side.
pub fn paired_scores(a: &EvalResult, b: &EvalResult) -> Vec<(f64, f64)> {
    a.outcomes()
        .iter()
        .zip(b.outcomes())
        .filter_map(|(x, y)| Some((x.score()?, y.score()?)))
        .collect()
}
