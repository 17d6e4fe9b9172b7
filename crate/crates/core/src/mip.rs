//! Minimum importance pruning: pin one hyper-parameter per iteration.
//!
//! Each iteration samples a small batch of configs over the still-free
//! dimensions (biased toward cheap levels), measures each config's rank
//! agreement with the reference scores, fits a random forest from the
//! cumulative trials, and pins the *least important* free dimension: to its
//! cheapest level when its importance falls below the threshold `tau`, or to
//! the level used by the best-agreeing trial so far when the dimension
//! actually matters. After one iteration per dimension, every dimension is
//! pinned and the mask spells out a complete budgeted config.

use serde::{Deserialize, Serialize};

use crate::archive::RunDir;
use crate::error::{Error, Result};
use crate::evaluators::{paired_scores, ArchSet, EvalResult, Evaluator};
use crate::forest::{self, ForestParams, RandomForest};
use crate::hyperspace::{sample_config, BpeConfig, HyperSpace, PinMask, ReferenceConfig};
use crate::ranking::{objective, spearman, CostSign, ObjectiveParams};
use crate::seeding;

const SAMPLE_STREAM: u64 = 0x4D49_5053;
const FOREST_STREAM: u64 = 0x4D49_5046;

/// Which column picks the winning trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectBy {
    /// Highest correlation-minus-cost objective.
    Objective,
    /// Highest raw rank correlation.
    Rs,
}

/// One measured config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    /// 1-based iteration in which this config was sampled.
    pub iteration: usize,
    pub config: BpeConfig,
    /// Spearman rank correlation against the reference scores.
    pub r_s: f64,
    /// Mean per-architecture cost reported by the evaluator.
    pub mean_cost: f64,
    /// [`objective`] value under the run's parameters.
    pub objective: f64,
    /// Number of architectures that scored on both sides.
    pub effective_n: usize,
}

/// The append-only trial log. Records are only ever added.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<TrialRecord>,
}

impl Dataset {
    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, record: TrialRecord) {
        self.records.push(record);
    }

    pub fn contains_config(&self, config: &BpeConfig) -> bool {
        self.records.iter().any(|r| &r.config == config)
    }

    /// The record with the highest rank correlation; ties go to the earliest.
    pub fn best_by_rs(&self) -> Option<&TrialRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&TrialRecord>, r| match best {
                Some(b) if b.r_s >= r.r_s => Some(b),
                _ => Some(r),
            })
    }

    /// The record with the highest objective; ties go to the earliest.
    pub fn best_by_objective(&self) -> Option<&TrialRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&TrialRecord>, r| match best {
                Some(b) if b.objective >= r.objective => Some(b),
                _ => Some(r),
            })
    }

    pub fn best(&self, select_by: SelectBy) -> Option<&TrialRecord> {
        match select_by {
            SelectBy::Objective => self.best_by_objective(),
            SelectBy::Rs => self.best_by_rs(),
        }
    }
}

/// Tuning knobs of a pruning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipParams {
    /// Configs sampled per iteration.
    pub k: usize,
    /// Importance threshold: below it a dimension is pinned to its cheapest
    /// level, at or above it to the best trial's level.
    pub tau: f64,
    /// Cost weight of the objective, strictly inside (0, 1).
    pub lambda: f64,
    pub sign: CostSign,
    pub select_by: SelectBy,
    pub forest: ForestParams,
    pub seed: u64,
    /// How many times to re-draw a config that was already tried before
    /// accepting the duplicate.
    pub resample_retries: usize,
    /// Minimum fraction of architectures that must score on both sides for a
    /// trial to count.
    pub min_effective: f64,
}

impl Default for MipParams {
    fn default() -> Self {
        MipParams {
            k: 10,
            tau: 0.1,
            lambda: 0.5,
            sign: CostSign::Penalize,
            select_by: SelectBy::Objective,
            forest: ForestParams::default(),
            seed: 0,
            resample_retries: 100,
            min_effective: 0.8,
        }
    }
}

impl MipParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Invalid(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        if !(self.min_effective > 0.0 && self.min_effective <= 1.0) {
            return Err(Error::Invalid(format!(
                "min_effective must lie in (0, 1], got {}",
                self.min_effective
            )));
        }
        self.forest.validate()?;
        // Lambda range is enforced where the objective is built; checking it
        // here keeps bad params from starting a run at all.
        ObjectiveParams::new(self.lambda, 1.0, self.sign).map(|_| ())
    }
}

/// What one iteration measured and decided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    /// 1-based iteration number.
    pub iteration: usize,
    /// `(dimension, importance)` for every dimension that was still free
    /// when the forest was fitted, ascending by dimension.
    pub importances: Vec<(usize, f64)>,
    pub pinned_dim: usize,
    pub pinned_level: usize,
    /// True when the low-importance rule fired (cheapest level); false when
    /// the dimension was pinned to the best trial's level.
    pub used_min_cost: bool,
    /// Anything unusual worth surfacing (forest fallback, duplicate accepted).
    pub notes: Vec<String>,
}

/// The full resumable state of a pruning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipState {
    pub space: HyperSpace,
    pub reference_config: ReferenceConfig,
    /// Reference evaluation: the score vector all trials are ranked against,
    /// and the cost normalizer of the objective.
    pub reference: EvalResult,
    pub mask: PinMask,
    /// Completed iterations.
    pub iteration: usize,
    pub dataset: Dataset,
    pub summaries: Vec<IterationSummary>,
    pub params: MipParams,
}

impl MipState {
    /// Cross-field invariants; run on every load of a persisted state.
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.space.validate_config(&self.reference_config.0)?;
        self.space.validate_mask(&self.mask)?;
        if self.mask.pinned_count() != self.iteration {
            return Err(Error::Invalid(format!(
                "{} pins after {} iterations",
                self.mask.pinned_count(),
                self.iteration
            )));
        }
        if self.summaries.len() != self.iteration {
            return Err(Error::Invalid(format!(
                "{} iteration summaries after {} iterations",
                self.summaries.len(),
                self.iteration
            )));
        }
        for record in self.dataset.records() {
            self.space.validate_config(&record.config)?;
            if record.iteration == 0 || record.iteration > self.iteration {
                return Err(Error::Invalid(format!(
                    "trial from iteration {} in a state at iteration {}",
                    record.iteration, self.iteration
                )));
            }
        }
        Ok(())
    }

    /// The complete pinned config; only available once every dimension is
    /// pinned.
    pub fn pinned_config(&self) -> Option<BpeConfig> {
        let picks: Option<Vec<usize>> = (0..self.mask.len()).map(|d| self.mask.get(d)).collect();
        picks.map(BpeConfig::new)
    }

    pub fn is_complete(&self) -> bool {
        self.iteration >= self.space.len()
    }

    fn objective_params(&self) -> Result<ObjectiveParams> {
        ObjectiveParams::new(
            self.params.lambda,
            self.reference.mean_cost(),
            self.params.sign,
        )
    }
}

/// The finished run: the config spelled out by the pins, plus the best
/// measured trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MipOutcome {
    pub pinned_config: BpeConfig,
    pub best_trial: TrialRecord,
    pub state: MipState,
}

/// Scores the architecture set under the reference config. This is the one
/// extra evaluation every run pays beyond its iteration batches.
pub fn compute_reference<E: Evaluator>(
    evaluator: &E,
    reference: &ReferenceConfig,
    archs: &ArchSet,
) -> Result<EvalResult> {
    let result = evaluator.evaluate(&reference.0, archs)?;
    if result.outcomes().len() != archs.len() {
        return Err(Error::Eval(format!(
            "reference evaluation returned {} outcomes for {} architectures",
            result.outcomes().len(),
            archs.len()
        )));
    }
    Ok(result)
}

/// Rank correlation of a trial against the reference, over the architectures
/// scored on both sides. Fails when fewer than `min_effective` of the set
/// scored — too few pairs make the correlation meaningless.
pub fn rs_against_reference(
    reference: &EvalResult,
    trial: &EvalResult,
    min_effective: f64,
) -> Result<(f64, usize)> {
    if trial.outcomes().len() != reference.outcomes().len() {
        return Err(Error::Eval(format!(
            "trial evaluation returned {} outcomes, reference has {}",
            trial.outcomes().len(),
            reference.outcomes().len()
        )));
    }
    let pairs = paired_scores(reference, trial);
    let needed = min_effective * reference.outcomes().len() as f64;
    if (pairs.len() as f64) < needed {
        return Err(Error::Eval(format!(
            "only {} of {} architectures scored on both sides (need {:.0}%)",
            pairs.len(),
            reference.outcomes().len(),
            min_effective * 100.0
        )));
    }
    let (ref_scores, trial_scores): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok((spearman(&ref_scores, &trial_scores)?, ref_scores.len()))
}

/// Decides the pin for the least-important free dimension.
///
/// Scans `importances` (ascending by dimension) for the minimum — ties go to
/// the lower dimension index. Importance below `tau` pins to the cheapest
/// level (ties to the lowest level); otherwise the dimension is pinned to the
/// level chosen by the best-`r_s` trial (ties to the earliest trial).
/// Returns `(dimension, level, used_min_cost)`.
pub fn prune_rule(
    importances: &[(usize, f64)],
    dataset: &Dataset,
    space: &HyperSpace,
    tau: f64,
) -> Result<(usize, usize, bool)> {
    let (&(dim, importance), _) = importances
        .iter()
        .zip(importances)
        .fold(None::<(&(usize, f64), _)>, |best, (entry, echo)| {
            match best {
                Some((b, _)) if b.1 <= entry.1 => best,
                _ => Some((entry, echo)),
            }
        })
        .ok_or_else(|| Error::Invalid("no free dimensions left to pin".into()))?;
    if importance < tau {
        Ok((dim, space.dim(dim).min_cost_level(), true))
    } else {
        let best = dataset
            .best_by_rs()
            .ok_or_else(|| Error::Invalid("no trials to take the pinned level from".into()))?;
        Ok((dim, best.config.level(dim), false))
    }
}

/// Runs one iteration: sample `k` fresh configs over the free dimensions,
/// evaluate them, extend the dataset, fit the forest, and pin one dimension.
/// Exactly `k` evaluator calls happen; an evaluator failure aborts the
/// iteration with the state untouched.
pub fn run_iteration<E: Evaluator>(
    state: &mut MipState,
    archs: &ArchSet,
    evaluator: &E,
) -> Result<(IterationSummary, Option<RandomForest>)> {
    if state.is_complete() {
        return Err(Error::Invalid("every dimension is already pinned".into()));
    }
    let iteration = state.iteration + 1;
    let mut notes = Vec::new();

    // Sample the batch, re-drawing configs already tried.
    let mut rng = seeding::substream(state.params.seed, SAMPLE_STREAM, iteration as u64);
    let mut batch: Vec<BpeConfig> = Vec::with_capacity(state.params.k);
    for _ in 0..state.params.k {
        let mut config = sample_config(&state.space, &state.mask, &mut rng);
        let mut retries = 0;
        while (state.dataset.contains_config(&config) || batch.contains(&config))
            && retries < state.params.resample_retries
        {
            config = sample_config(&state.space, &state.mask, &mut rng);
            retries += 1;
        }
        if state.dataset.contains_config(&config) || batch.contains(&config) {
            notes.push(format!(
                "accepted a duplicate config after {} retries",
                state.params.resample_retries
            ));
        }
        batch.push(config);
    }

    // Evaluate everything before touching the state, so a failure leaves the
    // run exactly where it was.
    let evals: Vec<EvalResult> = batch
        .iter()
        .map(|config| evaluator.evaluate(config, archs))
        .collect::<Result<_>>()?;
    let objective_params = state.objective_params()?;
    let mut records = Vec::with_capacity(batch.len());
    for (config, eval) in batch.into_iter().zip(evals) {
        let (r_s, effective_n) =
            rs_against_reference(&state.reference, &eval, state.params.min_effective)?;
        let mean_cost = eval.mean_cost();
        records.push(TrialRecord {
            iteration,
            config,
            r_s,
            mean_cost,
            objective: objective(r_s, mean_cost, &objective_params),
            effective_n,
        });
    }
    for record in records {
        state.dataset.push(record);
    }

    // Fit the importance model on every trial so far, restricted to the
    // still-free dimensions.
    let feature_dims = state.mask.unpinned();
    let examples: Vec<(Vec<f64>, f64)> = state
        .dataset
        .records()
        .iter()
        .map(|r| {
            let x = feature_dims
                .iter()
                .map(|&d| state.space.dim(d).levels()[r.config.level(d)].encoding)
                .collect();
            (x, r.r_s)
        })
        .collect();
    let forest_params = ForestParams {
        seed: seeding::mix(
            seeding::mix(state.params.seed, FOREST_STREAM),
            iteration as u64,
        ),
        ..state.params.forest
    };
    let (importance_values, forest) = match forest::fit(&examples, &forest_params) {
        Ok(forest) => (forest.feature_importance(), Some(forest)),
        Err(e) => {
            notes.push(format!(
                "forest fit failed ({e}); using uniform importances"
            ));
            (
                vec![1.0 / feature_dims.len() as f64; feature_dims.len()],
                None,
            )
        }
    };
    let importances: Vec<(usize, f64)> = feature_dims
        .iter()
        .copied()
        .zip(importance_values)
        .collect();

    let (dim, level, used_min_cost) =
        prune_rule(&importances, &state.dataset, &state.space, state.params.tau)?;
    state.mask.pin(dim, level)?;
    state.iteration = iteration;
    let summary = IterationSummary {
        iteration,
        importances,
        pinned_dim: dim,
        pinned_level: level,
        used_min_cost,
        notes,
    };
    state.summaries.push(summary.clone());
    Ok((summary, forest))
}

fn persist(state: &MipState, dir: &RunDir) -> Result<()> {
    dir.write_state(state)?;
    dir.write_trials(&state.dataset)?;
    dir.write_report(&render_report(state))
}

fn drive<E: Evaluator>(
    mut state: MipState,
    archs: &ArchSet,
    evaluator: &E,
    run_dir: Option<&RunDir>,
) -> Result<MipOutcome> {
    while !state.is_complete() {
        let (summary, forest) = run_iteration(&mut state, archs, evaluator)?;
        if let Some(dir) = run_dir {
            if let Some(forest) = forest {
                let feature_dims: Vec<usize> =
                    summary.importances.iter().map(|&(d, _)| d).collect();
                dir.write_forest(summary.iteration, &feature_dims, &forest)?;
            }
            persist(&state, dir)?;
        }
    }
    let best_trial = state
        .dataset
        .best(state.params.select_by)
        .cloned()
        .ok_or_else(|| Error::Invalid("run finished with no trials".into()))?;
    let pinned_config = state
        .pinned_config()
        .ok_or_else(|| Error::Invalid("run finished with unpinned dimensions".into()))?;
    Ok(MipOutcome {
        pinned_config,
        best_trial,
        state,
    })
}

/// Runs a full pruning pass: one reference evaluation, then one iteration per
/// dimension (`n·k + 1` evaluator calls for `n` dimensions). With a run
/// directory, the state, trials, report, and per-iteration forests are
/// snapshotted after every iteration.
pub fn run<E: Evaluator>(
    space: &HyperSpace,
    reference_config: &ReferenceConfig,
    archs: &ArchSet,
    evaluator: &E,
    params: &MipParams,
    run_dir: Option<&RunDir>,
) -> Result<MipOutcome> {
    params.validate()?;
    space.validate_config(&reference_config.0)?;
    let reference = compute_reference(evaluator, reference_config, archs)?;
    let state = MipState {
        space: space.clone(),
        reference_config: reference_config.clone(),
        reference,
        mask: PinMask::empty(space.len()),
        iteration: 0,
        dataset: Dataset::default(),
        summaries: Vec::new(),
        params: params.clone(),
    };
    if let Some(dir) = run_dir {
        dir.write_archs(archs)?;
        persist(&state, dir)?;
    }
    drive(state, archs, evaluator, run_dir)
}

/// Picks up a persisted run where it stopped and finishes it. A completed
/// run returns immediately; re-running never repeats paid evaluations.
pub fn resume<E: Evaluator>(dir: &RunDir, evaluator: &E) -> Result<MipOutcome> {
    let state = dir.read_state()?;
    let archs = dir.read_archs()?;
    if state.reference.outcomes().len() != archs.len() {
        return Err(Error::archive(
            dir.root(),
            format!(
                "state references {} architectures but archs.jsonl has {}",
                state.reference.outcomes().len(),
                archs.len()
            ),
        ));
    }
    drive(state, &archs, evaluator, Some(dir))
}

/// The human-readable run summary written as `report.txt`.
pub fn render_report(state: &MipState) -> String {
    use std::fmt::Write as _;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "minimum importance pruning — {} of {} iterations",
        state.iteration,
        state.space.len()
    );
    let _ = writeln!(
        out,
        "reference: {} (cost {:.6})",
        state.space.render_config(&state.reference_config.0),
        state.reference.mean_cost()
    );
    let _ = writeln!(
        out,
        "params: k={} tau={} lambda={} select_by={:?}",
        state.params.k, state.params.tau, state.params.lambda, state.params.select_by
    );
    let _ = writeln!(out);
    let _ = writeln!(out, "iter  pinned dimension        level        rule        importance");
    for s in &state.summaries {
        let dim = state.space.dim(s.pinned_dim);
        let importance = s
            .importances
            .iter()
            .find(|(d, _)| *d == s.pinned_dim)
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN);
        let _ = writeln!(
            out,
            "{:<5} {:<23} {:<12} {:<11} {:.4}",
            s.iteration,
            dim.name(),
            dim.levels()[s.pinned_level].label,
            if s.used_min_cost { "min-cost" } else { "best-trial" },
            importance,
        );
        for note in &s.notes {
            let _ = writeln!(out, "      note: {note}");
        }
    }
    let _ = writeln!(out);
    if let Some(best) = state.dataset.best(state.params.select_by) {
        let _ = writeln!(
            out,
            "best trial ({}): {}",
            match state.params.select_by {
                SelectBy::Objective => "by objective",
                SelectBy::Rs => "by r_s",
            },
            state.space.render_config(&best.config)
        );
        let _ = writeln!(
            out,
            "  r_s {:.4}  cost {:.6}  objective {:.4}  (iteration {}, {} architectures)",
            best.r_s, best.mean_cost, best.objective, best.iteration, best.effective_n
        );
    }
    if let Some(pinned) = state.pinned_config() {
        let _ = writeln!(out, "pinned config: {}", state.space.render_config(&pinned));
        if let Some(record) = state
            .dataset
            .records()
            .iter()
            .find(|r| r.config == pinned)
        {
            let _ = writeln!(
                out,
                "  measured during the run: r_s {:.4}  cost {:.6}  objective {:.4}",
                record.r_s, record.mean_cost, record.objective
            );
        }
    }
    let _ = writeln!(
        out,
        "trials: {}  evaluations: {} (+1 reference)",
        state.dataset.len(),
        state.dataset.len()
    );
    out
}
