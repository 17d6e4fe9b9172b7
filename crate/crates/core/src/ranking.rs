//! Rank statistics: fractional ranks, Spearman correlation, and the
//! correlation-vs-cost objective used to compare configs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractional (average) ranks, 1-based: tied values share the mean of the
/// positions they occupy, so `[5.0, 5.0, 1.0]` ranks as `[2.5, 2.5, 1.0]`.
///
/// Errors on empty input or non-finite values. Ranks always sum to
/// `n(n+1)/2`.
pub fn ranks(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::Invalid("ranks: empty input".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Invalid(format!("ranks: non-finite value {v}")));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));

    let mut out = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // Positions start+1 ..= end (1-based) share their average rank.
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            out[idx] = rank;
        }
        start = end;
    }
    Ok(out)
}

/// Spearman rank correlation: the Pearson correlation of the fractional
/// ranks of `a` and `b`.
///
/// Requires equal lengths of at least 2 and finite values; a constant vector
/// has zero rank variance, which makes the correlation undefined and is
/// reported as an error rather than silently mapped to 0.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "spearman: length mismatch ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Correlation(format!(
            "need at least 2 paired scores, got {}",
            a.len()
        )));
    }
    let ra = ranks(a)?;
    let rb = ranks(b)?;
    // Fractional ranks always average to (n+1)/2, ties or not.
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        let dx = x - mean;
        let dy = y - mean;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::Correlation(
            "a constant score vector has no rank ordering".into(),
        ));
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// How the cost term enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostSign {
    /// Higher cost lowers the objective: `r_s - λ·(cost / normalizer)`.
    /// Cheap configs that rank well win.
    Penalize,
    /// Higher cost raises the objective: `r_s + λ·(cost / normalizer)`.
    LiteralPlus,
}

/// Parameters of the config objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveParams {
    lambda: f64,
    cost_normalizer: f64,
    sign: CostSign,
}

impl ObjectiveParams {
    /// `lambda` must lie strictly inside `(0, 1)` and `cost_normalizer` must
    /// be positive — it is typically the reference config's cost, so that the
    /// cost term measures fractions of full-fidelity training.
    pub fn new(lambda: f64, cost_normalizer: f64, sign: CostSign) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Invalid(format!(
                "lambda must be in (0, 1), got {lambda}"
            )));
        }
        if !(cost_normalizer > 0.0) || !cost_normalizer.is_finite() {
            return Err(Error::Invalid(format!(
                "cost normalizer must be positive and finite, got {cost_normalizer}"
            )));
        }
        Ok(ObjectiveParams {
            lambda,
            cost_normalizer,
            sign,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn cost_normalizer(&self) -> f64 {
        self.cost_normalizer
    }

    pub fn sign(&self) -> CostSign {
        self.sign
    }
}

/// Scores a config from its rank correlation and mean cost.
pub fn objective(r_s: f64, mean_cost: f64, params: &ObjectiveParams) -> f64 {
    let cost_term = params.lambda * (mean_cost / params.cost_normalizer);
    match params.sign {
        CostSign::Penalize => r_s - cost_term,
        CostSign::LiteralPlus => r_s + cost_term,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ranks_of_distinct_values_are_positions() {
        assert_eq!(ranks(&[10.0, 20.0, 30.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(ranks(&[30.0, 10.0, 20.0]).unwrap(), vec![3.0, 1.0, 2.0]);
    }

    #[test]
    fn tied_values_share_the_average_rank() {
        assert_eq!(ranks(&[5.0, 5.0, 1.0]).unwrap(), vec![2.5, 2.5, 1.0]);
        assert_eq!(
            ranks(&[2.0, 2.0, 2.0, 2.0]).unwrap(),
            vec![2.5, 2.5, 2.5, 2.5]
        );
    }

    #[test]
    fn ranks_reject_bad_input() {
        assert!(ranks(&[]).is_err());
        assert!(ranks(&[1.0, f64::NAN]).is_err());
        assert!(ranks(&[1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn spearman_matches_the_tie_free_shortcut() {
        // One adjacent swap among 5 items: 1 - 6·(1+1)/(5·24) = 0.9.
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [1.0, 3.0, 2.0, 4.0, 5.0];
        assert!((spearman(&a, &b).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn identical_and_reversed_orders_hit_the_extremes() {
        let a = [0.3, 1.2, 5.0, 9.9];
        let rev: Vec<f64> = a.iter().rev().cloned().collect();
        assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &rev).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_rank_vectors_with_ties_still_correlate_perfectly() {
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [10.0, 20.0, 20.0, 30.0];
        assert!((spearman(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_vectors_are_rejected() {
        let a = [1.0, 2.0, 3.0];
        let c = [4.0, 4.0, 4.0];
        assert!(matches!(spearman(&a, &c), Err(Error::Correlation(_))));
        assert!(matches!(spearman(&c, &a), Err(Error::Correlation(_))));
    }

    #[test]
    fn mismatched_or_short_inputs_are_rejected() {
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn rank_sum_is_the_triangular_number(
            values in proptest::collection::vec(-1e6f64..1e6, 1..40)
        ) {
            let r = ranks(&values).unwrap();
            let n = values.len() as f64;
            let sum: f64 = r.iter().sum();
            prop_assert!((sum - n * (n + 1.0) / 2.0).abs() < 1e-6);
        }

        #[test]
        fn spearman_is_symmetric_and_bounded(
            pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..30)
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            if let (Ok(ab), Ok(ba)) = (spearman(&a, &b), spearman(&b, &a)) {
                prop_assert!((ab - ba).abs() < 1e-12);
                prop_assert!(ab >= -1.0 - 1e-12 && ab <= 1.0 + 1e-12);
            }
        }

        #[test]
        fn spearman_ignores_monotone_transforms(
            values in proptest::collection::vec(-50.0f64..50.0, 3..30),
            other in proptest::collection::vec(-50.0f64..50.0, 30),
        ) {
            let b = &other[..values.len()];
            let transformed: Vec<f64> = values.iter().map(|v| (v / 10.0).exp() * 3.0 + 1.0).collect();
            match (spearman(&values, b), spearman(&transformed, b)) {
                (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-9),
                (Err(_), Err(_)) => {}
                (x, y) => prop_assert!(false, "divergent outcomes: {x:?} vs {y:?}"),
            }
        }

        #[test]
        fn objective_decreases_as_cost_grows_under_penalize(
            r_s in -1.0f64..1.0,
            cost_lo in 0.0f64..10.0,
            extra in 0.001f64..10.0,
            lambda in 0.01f64..0.99,
        ) {
            let params = ObjectiveParams::new(lambda, 2.0, CostSign::Penalize).unwrap();
            let low = objective(r_s, cost_lo, &params);
            let high = objective(r_s, cost_lo + extra, &params);
            prop_assert!(high < low);
        }
    }

    #[test]
    fn objective_computes_both_signs() {
        let penalize = ObjectiveParams::new(0.5, 2.0, CostSign::Penalize).unwrap();
        assert!((objective(0.8, 1.0, &penalize) - 0.55).abs() < 1e-12);
        let plus = ObjectiveParams::new(0.5, 2.0, CostSign::LiteralPlus).unwrap();
        assert!((objective(0.8, 1.0, &plus) - 1.05).abs() < 1e-12);
    }

    #[test]
    fn objective_params_validate_their_ranges() {
        assert!(ObjectiveParams::new(0.0, 1.0, CostSign::Penalize).is_err());
        assert!(ObjectiveParams::new(1.0, 1.0, CostSign::Penalize).is_err());
        assert!(ObjectiveParams::new(-0.2, 1.0, CostSign::Penalize).is_err());
        assert!(ObjectiveParams::new(0.5, 0.0, CostSign::Penalize).is_err());
        assert!(ObjectiveParams::new(0.5, -3.0, CostSign::Penalize).is_err());
        assert!(ObjectiveParams::new(0.5, f64::INFINITY, CostSign::Penalize).is_err());
        assert!(ObjectiveParams::new(0.5, 1.0, CostSign::Penalize).is_ok());
    }

    #[test]
    fn a_cheap_well_ranking_config_beats_a_costlier_peer_for_any_lambda() {
        // r_s 0.63 at 0.55h versus r_s 0.57 at 1.38h, normalized by the
        // costlier run: the margin is affine in lambda and positive at both
        // ends (0.06 at λ→0, ≈0.66 at λ→1), hence positive throughout.
        for lambda in [1e-9, 0.25, 0.5, 0.75, 1.0 - 1e-9] {
            let params = ObjectiveParams::new(lambda, 1.38, CostSign::Penalize).unwrap();
            let cheap = objective(0.63, 0.55, &params);
            let costly = objective(0.57, 1.38, &params);
            assert!(cheap > costly, "lambda {lambda}");
        }
    }
}
