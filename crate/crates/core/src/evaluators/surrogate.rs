//! A synthetic evaluator for fast, deterministic experiments.
//!
//! Each architecture gets a latent quality from its operations; each config
//! shifts scores by a config-dependent bias and blurs them with noise whose
//! magnitude shrinks as the config's fidelity rises. That reproduces the
//! phenomenon the whole toolkit is about: cheap configs measure the same
//! architectures, just through a noisier lens.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ArchOutcome, ArchSet, EvalResult, Evaluator};
use crate::cellspace::{edge_count, Genotype, OpKind};
use crate::error::{Error, Result};
use crate::hyperspace::{config_cost, BpeConfig, HyperSpace, ReferenceConfig};
use crate::seeding;

const OP_SCORE_STREAM: u64 = 0x4F50_5343;
const NOISE_STREAM: u64 = 0x4E4F_4953;

/// Standard deviation of the per-(slot, op) latent scores.
const OP_SCORE_SD: f64 = 0.25;

/// A deterministic synthetic benchmark over a hyper-parameter space and a
/// genotype shape.
#[derive(Debug, Clone)]
pub struct SurrogateModel {
    space: HyperSpace,
    reference: ReferenceConfig,
    m: usize,
    seed: u64,
    noise_scale: f64,
    gain: f64,
    fidelity_weights: Vec<f64>,
    bias_weights: Vec<f64>,
    op_scores: Vec<f64>,
}

impl SurrogateModel {
    /// Builds a model with explicit per-dimension weights.
    ///
    /// `fidelity_weights[d] >= 0` controls how much raising dimension `d`
    /// de-noises measurements; `bias_weights[d]` shifts absolute scores
    /// without touching ranks. `noise_scale` and `gain` must be positive.
    /// Latent op scores are drawn once from the seed.
    pub fn new(
        space: HyperSpace,
        reference: ReferenceConfig,
        m: usize,
        seed: u64,
        noise_scale: f64,
        gain: f64,
        fidelity_weights: Vec<f64>,
        bias_weights: Vec<f64>,
    ) -> Result<Self> {
        space.validate_config(&reference.0)?;
        if !(noise_scale > 0.0) || !noise_scale.is_finite() {
            return Err(Error::Invalid(format!(
                "noise scale must be positive and finite, got {noise_scale}"
            )));
        }
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(Error::Invalid(format!(
                "gain must be positive and finite, got {gain}"
            )));
        }
        if fidelity_weights.len() != space.len() || bias_weights.len() != space.len() {
            return Err(Error::Invalid(format!(
                "need one fidelity and one bias weight per dimension ({})",
                space.len()
            )));
        }
        if fidelity_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Invalid(
                "fidelity weights must be finite and >= 0".into(),
            ));
        }
        if bias_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Invalid("bias weights must be finite".into()));
        }
        let slots = 2 * edge_count(m)?;
        let mut rng = seeding::stream(seed, OP_SCORE_STREAM);
        let normal = Normal::new(0.0, OP_SCORE_SD).expect("positive sd");
        let op_scores = (0..slots * OpKind::COUNT)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Ok(SurrogateModel {
            space,
            reference,
            m,
            seed,
            noise_scale,
            gain,
            fidelity_weights,
            bias_weights,
            op_scores,
        })
    }

    /// A ready-to-use model whose weights follow the cost structure: the
    /// wider a dimension's cost range, the more skipping fidelity on it hurts
    /// measurement quality.
    pub fn sampled(
        space: HyperSpace,
        reference: ReferenceConfig,
        m: usize,
        seed: u64,
        noise_scale: f64,
    ) -> Result<Self> {
        let spans: Vec<f64> = space
            .dims()
            .iter()
            .map(|d| {
                let lo = d.costs().iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = d.costs().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .collect();
        let max_span = spans.iter().cloned().fold(0.0f64, f64::max);
        let (fidelity, bias) = if max_span > 0.0 {
            (
                spans.iter().map(|s| 3.0 * s / max_span).collect(),
                spans.iter().map(|s| 0.1 * s / max_span).collect(),
            )
        } else {
            (vec![0.0; space.len()], vec![0.0; space.len()])
        };
        SurrogateModel::new(space, reference, m, seed, noise_scale, 1.0, fidelity, bias)
    }

    /// Replaces the latent op scores (length `2 · edge_count(m) · 8`).
    pub fn with_op_scores(mut self, op_scores: Vec<f64>) -> Result<Self> {
        if op_scores.len() != self.op_scores.len() {
            return Err(Error::Invalid(format!(
                "expected {} op scores, got {}",
                self.op_scores.len(),
                op_scores.len()
            )));
        }
        if op_scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Invalid("op scores must be finite".into()));
        }
        self.op_scores = op_scores;
        Ok(self)
    }

    pub fn space(&self) -> &HyperSpace {
        &self.space
    }

    pub fn reference(&self) -> &ReferenceConfig {
        &self.reference
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn normalized_level(&self, config: &BpeConfig, dim: usize) -> f64 {
        let levels = self.space.dim(dim).len();
        if levels == 1 {
            1.0
        } else {
            config.level(dim) as f64 / (levels - 1) as f64
        }
    }

    /// The architecture's latent quality in `(0, 1)`:
    /// `logistic(gain · Σ op_scores)` over all edge slots. A genotype whose
    /// slots all carry zero-score ops sits exactly at `0.5`.
    pub fn true_quality(&self, genotype: &Genotype) -> Result<f64> {
        if genotype.m() != self.m {
            return Err(Error::Invalid(format!(
                "model is built for {}-node cells, genotype has {}",
                self.m,
                genotype.m()
            )));
        }
        let total: f64 = (0..genotype.slot_count())
            .map(|slot| self.op_scores[slot * OpKind::COUNT + genotype.op_at(slot).index()])
            .sum();
        Ok(1.0 / (1.0 + (-self.gain * total).exp()))
    }

    /// The config-dependent score offset; exactly 0 at the reference config.
    /// Constant across architectures, so it never changes their ranking.
    pub fn bias(&self, config: &BpeConfig) -> f64 {
        (0..self.space.len())
            .map(|d| {
                self.bias_weights[d]
                    * (self.normalized_level(config, d)
                        - self.normalized_level(&self.reference.0, d))
            })
            .sum()
    }

    /// Measurement noise at this config:
    /// `noise_scale / (1 + Σ fidelity_weights[d] · normalized_level[d])`.
    /// Raising any positively weighted dimension tightens measurements.
    pub fn noise_sd(&self, config: &BpeConfig) -> f64 {
        let fidelity: f64 = (0..self.space.len())
            .map(|d| self.fidelity_weights[d] * self.normalized_level(config, d))
            .sum();
        self.noise_scale / (1.0 + fidelity)
    }

    fn noise(&self, config: &BpeConfig, arch_id: &str, sd: f64) -> f64 {
        let mut h = seeding::mix(self.seed, NOISE_STREAM);
        for &sel in config.assignment() {
            h = seeding::mix(h, sel as u64 + 1);
        }
        h = seeding::mix_bytes(h, arch_id.as_bytes());
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        Normal::new(0.0, sd).expect("positive sd").sample(&mut rng)
    }
}

impl Evaluator for SurrogateModel {
    /// Scores every architecture as `true_quality + bias(config) + noise`,
    /// with noise seeded by `(model seed, config, architecture id)` — the
    /// same triple always reproduces the same score, regardless of position
    /// in the set or previous calls. Cost is the config's compute cost.
    fn evaluate(&self, config: &BpeConfig, archs: &ArchSet) -> Result<EvalResult> {
        self.space.validate_config(config)?;
        let sd = self.noise_sd(config);
        let bias = self.bias(config);
        let outcomes = archs
            .iter()
            .map(|entry| {
                let quality = self.true_quality(&entry.genotype)?;
                let score = quality + bias + self.noise(config, &entry.id, sd);
                Ok(ArchOutcome::Score(score))
            })
            .collect::<Result<Vec<_>>>()?;
        EvalResult::new(outcomes, config_cost(&self.space, config))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellspace::{random_genotype, CellGenotype};
    use crate::hyperspace::default_preset;

    fn model(noise_scale: f64) -> SurrogateModel {
        let (space, reference) = default_preset();
        SurrogateModel::sampled(space, reference, 3, 7, noise_scale).unwrap()
    }

    fn archs(n: usize, seed: u64) -> ArchSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ArchSet::sample(3, n, &mut rng).unwrap()
    }

    #[test]
    fn evaluation_is_a_pure_function_of_its_inputs() {
        let m = model(0.5);
        let set = archs(20, 1);
        let config = crate::hyperspace::bpe1_config(m.space()).unwrap();
        let a = m.evaluate(&config, &set).unwrap();
        let b = m.evaluate(&config, &set).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.outcomes().len(), set.len());
        assert_eq!(a.effective_n(), set.len());
    }

    #[test]
    fn noise_depends_on_id_not_position() {
        let m = model(0.5);
        let set = archs(10, 2);
        let mut reversed_entries = set.entries().to_vec();
        reversed_entries.reverse();
        let reversed = ArchSet::new(reversed_entries).unwrap();
        let config = crate::hyperspace::bpe2_config(m.space()).unwrap();
        let fwd = m.evaluate(&config, &set).unwrap();
        let rev = m.evaluate(&config, &reversed).unwrap();
        for (i, entry) in set.iter().enumerate() {
            let j = reversed
                .iter()
                .position(|e| e.id == entry.id)
                .unwrap();
            assert_eq!(fwd.outcomes()[i], rev.outcomes()[j]);
        }
    }

    #[test]
    fn mean_cost_is_the_config_cost() {
        let m = model(0.5);
        let set = archs(5, 3);
        let config = crate::hyperspace::bpe1_config(m.space()).unwrap();
        let result = m.evaluate(&config, &set).unwrap();
        assert_eq!(result.mean_cost(), config_cost(m.space(), &config));
    }

    #[test]
    fn zero_op_scores_give_quality_one_half() {
        let m = model(1.0);
        let zeroed = m.clone().with_op_scores(vec![0.0; 2 * 9 * 8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_genotype(3, &mut rng).unwrap();
        assert_eq!(zeroed.true_quality(&g).unwrap(), 0.5);
    }

    #[test]
    fn quality_is_monotone_in_the_op_score_sum_and_bounded() {
        let m = model(1.0);
        // Give one op a high score everywhere, another a low score.
        let mut scores = vec![0.0; 2 * 9 * 8];
        for slot in 0..18 {
            scores[slot * 8 + OpKind::SepConv3x3.index()] = 1.0;
            scores[slot * 8 + OpKind::Zero.index()] = -1.0;
        }
        let m = m.with_op_scores(scores).unwrap();
        let good_cell = CellGenotype::from_ops(3, &[OpKind::SepConv3x3; 9]).unwrap();
        let bad_cell = CellGenotype::from_ops(3, &[OpKind::Zero; 9]).unwrap();
        let good = Genotype::new(good_cell.clone(), good_cell).unwrap();
        let bad = Genotype::new(bad_cell.clone(), bad_cell).unwrap();
        let q_good = m.true_quality(&good).unwrap();
        let q_bad = m.true_quality(&bad).unwrap();
        assert!(q_good > 0.9);
        assert!(q_bad < 0.1);
        for q in [q_good, q_bad] {
            assert!(q > 0.0 && q < 1.0);
        }
    }

    #[test]
    fn bias_vanishes_at_the_reference_config() {
        let m = model(1.0);
        assert_eq!(m.bias(&m.reference().0.clone()), 0.0);
    }

    #[test]
    fn noise_shrinks_as_fidelity_rises() {
        let m = model(1.0);
        let space = m.space().clone();
        let cheap = crate::hyperspace::bpe1_config(&space).unwrap();
        let reference = m.reference().0.clone();
        assert!(m.noise_sd(&reference) < m.noise_sd(&cheap));
        // Raising a single positively weighted dimension can only tighten.
        let epoch = space.dim_index("epoch").unwrap();
        let mut raised = cheap.assignment().to_vec();
        raised[epoch] += 1;
        let raised = BpeConfig::new(raised);
        assert!(m.noise_sd(&raised) <= m.noise_sd(&cheap));
    }

    #[test]
    fn tiny_noise_reveals_the_score_decomposition() {
        let (space, reference) = default_preset();
        let m = SurrogateModel::sampled(space, reference, 3, 11, 1e-12).unwrap();
        let set = archs(8, 5);
        let config = crate::hyperspace::bpe2_config(m.space()).unwrap();
        let result = m.evaluate(&config, &set).unwrap();
        let bias = m.bias(&config);
        for (outcome, entry) in result.outcomes().iter().zip(set.iter()) {
            let expected = m.true_quality(&entry.genotype).unwrap() + bias;
            assert!((outcome.score().unwrap() - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn shape_and_config_mismatches_are_rejected() {
        let m = model(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let wrong_shape = random_genotype(2, &mut rng).unwrap();
        assert!(m.true_quality(&wrong_shape).is_err());
        let set = archs(3, 7);
        let bad_config = BpeConfig::new(vec![0; 3]);
        assert!(m.evaluate(&bad_config, &set).is_err());
    }

    #[test]
    fn construction_validates_weights_and_scales() {
        let (space, reference) = default_preset();
        let n = space.len();
        let ok = SurrogateModel::new(
            space.clone(),
            reference.clone(),
            2,
            0,
            1.0,
            1.0,
            vec![0.0; n],
            vec![0.0; n],
        );
        assert!(ok.is_ok());
        for (noise, gain) in [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)] {
            let bad = SurrogateModel::new(
                space.clone(),
                reference.clone(),
                2,
                0,
                noise,
                gain,
                vec![0.0; n],
                vec![0.0; n],
            );
            assert!(bad.is_err(), "noise {noise} gain {gain}");
        }
        let neg_fidelity = SurrogateModel::new(
            space.clone(),
            reference.clone(),
            2,
            0,
            1.0,
            1.0,
            vec![-1.0; n],
            vec![0.0; n],
        );
        assert!(neg_fidelity.is_err());
        let short = SurrogateModel::new(
            space.clone(),
            reference.clone(),
            2,
            0,
            1.0,
            1.0,
            vec![0.0; n - 1],
            vec![0.0; n],
        );
        assert!(short.is_err());
    }

    #[test]
    fn different_configs_get_independent_noise() {
        let m = model(0.8);
        let set = archs(12, 9);
        let c1 = crate::hyperspace::bpe1_config(m.space()).unwrap();
        let c2 = crate::hyperspace::bpe2_config(m.space()).unwrap();
        let r1 = m.evaluate(&c1, &set).unwrap();
        let r2 = m.evaluate(&c2, &set).unwrap();
        assert_ne!(r1.outcomes(), r2.outcomes());
    }
}
