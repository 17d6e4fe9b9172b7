//! Architecture search under a fixed budgeted config.
//!
//! Three strategies share one contract: every distinct genotype costs exactly
//! one evaluator call (repeat visits are served from a cache), the run stops
//! once the evaluation budget is spent, and every scoring step lands in the
//! trace. A step cap of 32× the budget keeps a search from spinning forever
//! when it keeps revisiting cached genotypes.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cellspace::{encode, mutate, random_genotype, CellGenotype, Genotype, OpKind};
use crate::error::{Error, Result};
use crate::evaluators::{ArchEntry, ArchSet, Evaluator};
use crate::hyperspace::BpeConfig;
use crate::seeding;

const RANDOM_STREAM: u64 = 0x5345_5253; // random draws
const EVOLUTION_STREAM: u64 = 0x5345_4541; // tournament + mutation
const POLICY_STREAM: u64 = 0x5345_524C; // policy sampling

/// How a step cap is derived from the evaluation budget.
const STEP_CAP_FACTOR: usize = 32;

/// How many evaluator calls a search may spend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_evaluations: usize,
    pub seed: u64,
}

impl SearchBudget {
    pub fn validate(&self) -> Result<()> {
        if self.max_evaluations == 0 {
            return Err(Error::Invalid("the budget must allow at least one evaluation".into()));
        }
        Ok(())
    }

    fn step_cap(&self) -> usize {
        self.max_evaluations.saturating_mul(STEP_CAP_FACTOR)
    }
}

/// One scoring step: cache hits appear here too, so the trace replays the
/// whole walk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// 1-based step number.
    pub step: usize,
    /// Text encoding of the genotype scored at this step.
    pub genotype: String,
    pub score: f64,
    /// Evaluator calls spent so far (cumulative, non-decreasing).
    pub evaluations: usize,
}

/// The outcome of a search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Genotype,
    pub best_score: f64,
    /// Scoring steps taken (cache hits included).
    pub steps: usize,
    /// Evaluator calls actually spent.
    pub evaluations: usize,
    pub trace: Vec<TraceEntry>,
}

/// Aging-evolution settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolutionParams {
    /// Individuals kept alive; the oldest dies each step.
    pub population: usize,
    /// Individuals drawn per tournament; the fittest becomes the parent.
    pub tournament: usize,
}

impl Default for EvolutionParams {
    fn default() -> Self {
        EvolutionParams { population: 50, tournament: 10 }
    }
}

impl EvolutionParams {
    pub fn validate(&self, budget: &SearchBudget) -> Result<()> {
        if self.population == 0 {
            return Err(Error::Invalid("the population needs at least one individual".into()));
        }
        if self.tournament == 0 || self.tournament > self.population {
            return Err(Error::Invalid(format!(
                "the tournament size must lie in 1..={}, got {}",
                self.population, self.tournament
            )));
        }
        if budget.max_evaluations < self.population {
            return Err(Error::Invalid(format!(
                "a budget of {} cannot seed a population of {}",
                budget.max_evaluations, self.population
            )));
        }
        Ok(())
    }
}

/// Policy-gradient settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RlParams {
    pub learning_rate: f64,
    /// Weight of the old value in the exponential-moving-average baseline.
    pub baseline_decay: f64,
}

impl Default for RlParams {
    fn default() -> Self {
        RlParams { learning_rate: 0.05, baseline_decay: 0.9 }
    }
}

impl RlParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Invalid(format!(
                "the learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.baseline_decay) {
            return Err(Error::Invalid(format!(
                "the baseline decay must lie in [0, 1], got {}",
                self.baseline_decay
            )));
        }
        Ok(())
    }
}

/// A [`SearchResult`] plus the learned per-slot operation distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlSearchOutcome {
    pub result: SearchResult,
    /// `policy[slot][op]`: softmax probabilities, one row per edge slot.
    pub policy: Vec<Vec<f64>>,
    pub baseline: f64,
}

/// Scores one genotype under `config` by wrapping it in a one-entry
/// architecture set.
pub fn arch_score<E: Evaluator>(
    evaluator: &E,
    config: &BpeConfig,
    genotype: &Genotype,
) -> Result<f64> {
    let set = ArchSet::new(vec![ArchEntry { id: "g0".into(), genotype: genotype.clone() }])?;
    let result = evaluator.evaluate(config, &set)?;
    result.outcomes()[0]
        .score()
        .ok_or_else(|| Error::Eval("the evaluator failed on the only architecture".into()))
}

/// Memoizes scores per genotype encoding so revisits never pay twice.
struct ScoringCache<'a, E> {
    evaluator: &'a E,
    config: &'a BpeConfig,
    scores: HashMap<String, f64>,
    misses: usize,
}

impl<'a, E: Evaluator> ScoringCache<'a, E> {
    fn new(evaluator: &'a E, config: &'a BpeConfig) -> Self {
        ScoringCache { evaluator, config, scores: HashMap::new(), misses: 0 }
    }

    fn score(&mut self, genotype: &Genotype) -> Result<(String, f64)> {
        let key = encode(genotype);
        if let Some(&score) = self.scores.get(&key) {
            return Ok((key, score));
        }
        let score = arch_score(self.evaluator, self.config, genotype)?;
        self.misses += 1;
        self.scores.insert(key.clone(), score);
        Ok((key, score))
    }
}

/// Shared bookkeeping: traces the step and tracks the strictly-best score
/// (ties keep the earliest genotype).
struct Walk {
    trace: Vec<TraceEntry>,
    best: Option<(Genotype, f64)>,
}

impl Walk {
    fn new() -> Self {
        Walk { trace: Vec::new(), best: None }
    }

    fn record(&mut self, genotype: &Genotype, key: String, score: f64, evaluations: usize) {
        self.trace.push(TraceEntry {
            step: self.trace.len() + 1,
            genotype: key,
            score,
            evaluations,
        });
        match &self.best {
            Some((_, best)) if *best >= score => {}
            _ => self.best = Some((genotype.clone(), score)),
        }
    }

    fn finish(self, evaluations: usize) -> Result<SearchResult> {
        let (best, best_score) = self
            .best
            .ok_or_else(|| Error::Invalid("the search never scored a genotype".into()))?;
        Ok(SearchResult {
            best,
            best_score,
            steps: self.trace.len(),
            evaluations,
            trace: self.trace,
        })
    }
}

/// Uniform random sampling: every step draws an independent genotype.
pub fn random_search<E: Evaluator>(
    m: usize,
    evaluator: &E,
    config: &BpeConfig,
    budget: &SearchBudget,
) -> Result<SearchResult> {
    budget.validate()?;
    let mut rng = seeding::stream(budget.seed, RANDOM_STREAM);
    let mut cache = ScoringCache::new(evaluator, config);
    let mut walk = Walk::new();
    while cache.misses < budget.max_evaluations && walk.trace.len() < budget.step_cap() {
        let genotype = random_genotype(m, &mut rng)?;
        let (key, score) = cache.score(&genotype)?;
        walk.record(&genotype, key, score, cache.misses);
    }
    walk.finish(cache.misses)
}

/// Aging evolution: seed a population with random genotypes, then repeatedly
/// mutate the winner of a random tournament and retire the oldest member.
pub fn evolution_search<E: Evaluator>(
    m: usize,
    evaluator: &E,
    config: &BpeConfig,
    budget: &SearchBudget,
    params: &EvolutionParams,
) -> Result<SearchResult> {
    budget.validate()?;
    params.validate(budget)?;
    let mut rng = seeding::stream(budget.seed, EVOLUTION_STREAM);
    let mut cache = ScoringCache::new(evaluator, config);
    let mut walk = Walk::new();
    // Front = oldest; every birth pushes to the back.
    let mut population: VecDeque<(Genotype, f64)> = VecDeque::with_capacity(params.population);

    while population.len() < params.population
        && cache.misses < budget.max_evaluations
        && walk.trace.len() < budget.step_cap()
    {
        let genotype = random_genotype(m, &mut rng)?;
        let (key, score) = cache.score(&genotype)?;
        walk.record(&genotype, key, score, cache.misses);
        population.push_back((genotype, score));
    }

    while cache.misses < budget.max_evaluations && walk.trace.len() < budget.step_cap() {
        let mut picks =
            rand::seq::index::sample(&mut rng, population.len(), params.tournament).into_vec();
        picks.sort_unstable();
        // Strict comparison in ascending index order: score ties go to the
        // oldest contestant.
        let parent = picks
            .into_iter()
            .map(|i| &population[i])
            .fold(None::<&(Genotype, f64)>, |best, candidate| match best {
                Some(b) if b.1 >= candidate.1 => Some(b),
                _ => Some(candidate),
            })
            .expect("tournament is non-empty")
            .0
            .clone();
        let child = mutate(&parent, &mut rng);
        let (key, score) = cache.score(&child)?;
        walk.record(&child, key, score, cache.misses);
        population.push_back((child, score));
        population.pop_front();
    }
    walk.finish(cache.misses)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Policy-gradient search: an independent softmax over the eight operations
/// per edge slot, updated by the score-minus-baseline advantage of each
/// sampled genotype.
pub fn rl_search<E: Evaluator>(
    m: usize,
    evaluator: &E,
    config: &BpeConfig,
    budget: &SearchBudget,
    params: &RlParams,
) -> Result<RlSearchOutcome> {
    budget.validate()?;
    params.validate()?;
    let edges = crate::cellspace::edge_count(m)?;
    let slots = 2 * edges;
    let mut rng = seeding::stream(budget.seed, POLICY_STREAM);
    let mut cache = ScoringCache::new(evaluator, config);
    let mut walk = Walk::new();
    let mut logits = vec![vec![0.0_f64; OpKind::COUNT]; slots];
    let mut baseline = 0.0_f64;

    while cache.misses < budget.max_evaluations && walk.trace.len() < budget.step_cap() {
        let per_slot: Vec<Vec<f64>> = logits.iter().map(|row| softmax(row)).collect();
        let chosen: Vec<usize> =
            per_slot.iter().map(|probs| sample_categorical(probs, &mut rng)).collect();
        let ops: Vec<OpKind> = chosen.iter().map(|&k| OpKind::ALL[k]).collect();
        let genotype = Genotype::new(
            CellGenotype::from_ops(m, &ops[..edges])?,
            CellGenotype::from_ops(m, &ops[edges..])?,
        )?;
        let (key, score) = cache.score(&genotype)?;
        walk.record(&genotype, key, score, cache.misses);

        let advantage = score - baseline;
        for (slot, probs) in per_slot.iter().enumerate() {
            for k in 0..OpKind::COUNT {
                let indicator = if k == chosen[slot] { 1.0 } else { 0.0 };
                logits[slot][k] += params.learning_rate * advantage * (indicator - probs[k]);
                if !logits[slot][k].is_finite() {
                    return Err(Error::Invalid(format!(
                        "policy logit for slot {slot} diverged at step {}; \
                         lower the learning rate",
                        walk.trace.len()
                    )));
                }
            }
        }
        baseline = params.baseline_decay * baseline + (1.0 - params.baseline_decay) * score;
    }

    let policy = logits.iter().map(|row| softmax(row)).collect();
    Ok(RlSearchOutcome { result: walk.finish(cache.misses)?, policy, baseline })
}
