//! A deterministic random-forest regressor with impurity-based feature
//! importance.
//!
//! Trees are grown greedily on mean-squared-deviation impurity with an
//! exhaustive scan over midpoint thresholds. All tie-breaks are fixed (lower
//! dimension, then lower threshold; examples are canonically ordered before
//! scanning), and per-tree RNG streams derive from the fit seed, so the same
//! data and parameters always produce the identical forest — which keeps
//! resumed runs and re-generated reports bit-for-bit reproducible.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

const TREE_STREAM: u64 = 0x464F_5245_5354;

/// A candidate axis-aligned split: `x[dim] <= threshold` goes left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitCandidate {
    pub dim: usize,
    pub threshold: f64,
}

/// One node of a regression tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        prediction: f64,
        samples: usize,
        impurity: f64,
    },
    Internal {
        split: SplitCandidate,
        samples: usize,
        impurity: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn samples(&self) -> usize {
        match self {
            TreeNode::Leaf { samples, .. } | TreeNode::Internal { samples, .. } => *samples,
        }
    }

    pub fn impurity(&self) -> f64 {
        match self {
            TreeNode::Leaf { impurity, .. } | TreeNode::Internal { impurity, .. } => *impurity,
        }
    }
}

/// Fitting parameters. `feature_subsample` restricts each node to a random
/// `ceil(sqrt(n_features))` subset of dimensions, off by default so that
/// importance estimates use every dimension at every node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub feature_subsample: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 50,
            min_leaf: 2,
            max_depth: None,
            bootstrap: true,
            feature_subsample: false,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::Invalid("forest needs at least one tree".into()));
        }
        if self.min_leaf == 0 {
            return Err(Error::Invalid("min_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// A fitted ensemble of regression trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    trees: Vec<TreeNode>,
    params: ForestParams,
    n_features: usize,
}

/// Mean squared deviation of `targets` from their mean; 0 for a constant
/// vector. Errors on empty or non-finite input.
pub fn impurity(targets: &[f64]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Invalid("impurity of an empty set is undefined".into()));
    }
    if targets.iter().any(|y| !y.is_finite()) {
        return Err(Error::Invalid("impurity: non-finite target".into()));
    }
    Ok(impurity_unchecked(targets))
}

fn impurity_unchecked(targets: &[f64]) -> f64 {
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n
}

/// Size-weighted mean impurity of a two-way partition:
/// `(|L|·H(L) + |R|·H(R)) / (|L| + |R|)`. Errors if either side is empty.
pub fn split_impurity(left: &[f64], right: &[f64]) -> Result<f64> {
    if left.is_empty() || right.is_empty() {
        return Err(Error::Invalid(
            "split impurity needs a non-empty left and right side".into(),
        ));
    }
    Ok((left.len() as f64 * impurity(left)? + right.len() as f64 * impurity(right)?)
        / (left.len() + right.len()) as f64)
}

fn cmp_rows(a: &(Vec<f64>, f64), b: &(Vec<f64>, f64)) -> Ordering {
    for (x, y) in a.0.iter().zip(&b.0) {
        match x.partial_cmp(y).expect("finite features") {
            Ordering::Equal => continue,
            ord => return ord,
        }
    }
    a.1.partial_cmp(&b.1).expect("finite targets")
}

/// The best split over `allowed_dims`: the candidate minimizing
/// [`split_impurity`], scanning every midpoint between consecutive distinct
/// feature values. Ties resolve to the lower dimension index, then the lower
/// threshold. Returns `None` when no allowed dimension has two distinct
/// values (including fewer than two examples).
pub fn best_split(examples: &[(Vec<f64>, f64)], allowed_dims: &[usize]) -> Option<SplitCandidate> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by(|&a, &b| cmp_rows(&examples[a], &examples[b]));
    let mut dims = allowed_dims.to_vec();
    dims.sort_unstable();
    dims.dedup();
    split_for_indices(examples, &order, &dims, 1).map(|(split, _)| split)
}

/// Scans candidates over `order` (assumed canonically sorted) and returns the
/// winning split with its impurity. `min_leaf` filters out candidates that
/// would leave a side smaller than the limit.
fn split_for_indices(
    examples: &[(Vec<f64>, f64)],
    order: &[usize],
    dims: &[usize],
    min_leaf: usize,
) -> Option<(SplitCandidate, f64)> {
    let mut best: Option<(SplitCandidate, f64)> = None;
    let mut left = Vec::with_capacity(order.len());
    let mut right = Vec::with_capacity(order.len());
    for &dim in dims {
        let mut values: Vec<f64> = order.iter().map(|&i| examples[i].0[dim]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
        values.dedup();
        for pair in values.windows(2) {
            let threshold = (pair[0] + pair[1]) / 2.0;
            left.clear();
            right.clear();
            for &i in order {
                if examples[i].0[dim] <= threshold {
                    left.push(examples[i].1);
                } else {
                    right.push(examples[i].1);
                }
            }
            if left.len() < min_leaf || right.len() < min_leaf {
                continue;
            }
            let score = (left.len() as f64 * impurity_unchecked(&left)
                + right.len() as f64 * impurity_unchecked(&right))
                / order.len() as f64;
            // Strict improvement only: the first candidate in scan order
            // (ascending dim, ascending threshold) wins ties.
            let improves = match &best {
                Some((_, incumbent)) => score < *incumbent,
                None => true,
            };
            if improves {
                best = Some((SplitCandidate { dim, threshold }, score));
            }
        }
    }
    best
}

/// Fits a forest on `(feature vector, target)` examples.
///
/// Needs at least 2 examples with consistent width and finite values. With
/// `bootstrap` off and `feature_subsample` off the fit is a pure function of
/// the example *set* (input order does not matter); with them on, each tree
/// draws from its own seed-derived stream, so the same seed always rebuilds
/// the same forest.
pub fn fit(examples: &[(Vec<f64>, f64)], params: &ForestParams) -> Result<RandomForest> {
    params.validate()?;
    if examples.len() < 2 {
        return Err(Error::Invalid(format!(
            "forest fit needs at least 2 examples, got {}",
            examples.len()
        )));
    }
    let n_features = examples[0].0.len();
    for (i, (x, y)) in examples.iter().enumerate() {
        if x.len() != n_features {
            return Err(Error::Invalid(format!(
                "example {i} has {} features, expected {n_features}",
                x.len()
            )));
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("example {i} has non-finite values")));
        }
    }
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = seeding::substream(params.seed, TREE_STREAM, t as u64);
            let indices: Vec<usize> = if params.bootstrap {
                use rand::Rng;
                (0..examples.len())
                    .map(|_| rng.random_range(0..examples.len()))
                    .collect()
            } else {
                (0..examples.len()).collect()
            };
            build_node(examples, indices, 0, n_features, params, &mut rng)
        })
        .collect();
    Ok(RandomForest {
        trees,
        params: *params,
        n_features,
    })
}

fn build_node(
    examples: &[(Vec<f64>, f64)],
    mut indices: Vec<usize>,
    depth: usize,
    n_features: usize,
    params: &ForestParams,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> TreeNode {
    let ys: Vec<f64> = indices.iter().map(|&i| examples[i].1).collect();
    let node_impurity = impurity_unchecked(&ys);
    let samples = indices.len();
    let leaf = TreeNode::Leaf {
        prediction: ys.iter().sum::<f64>() / samples as f64,
        samples,
        impurity: node_impurity,
    };
    if node_impurity == 0.0 || samples < 2 * params.min_leaf {
        return leaf;
    }
    if let Some(max_depth) = params.max_depth {
        if depth >= max_depth {
            return leaf;
        }
    }
    indices.sort_by(|&a, &b| cmp_rows(&examples[a], &examples[b]));
    let dims: Vec<usize> = if params.feature_subsample && n_features > 1 {
        let k = (n_features as f64).sqrt().ceil() as usize;
        let mut picked = rand::seq::index::sample(rng, n_features, k.min(n_features)).into_vec();
        picked.sort_unstable();
        picked
    } else {
        (0..n_features).collect()
    };
    match split_for_indices(examples, &indices, &dims, params.min_leaf) {
        None => leaf,
        Some((split, _)) => {
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) = indices
                .iter()
                .partition(|&&i| examples[i].0[split.dim] <= split.threshold);
            let left = build_node(examples, left_idx, depth + 1, n_features, params, rng);
            let right = build_node(examples, right_idx, depth + 1, n_features, params, rng);
            TreeNode::Internal {
                split,
                samples,
                impurity: node_impurity,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
    }
}

/// Total impurity removed by a node's split:
/// `|Q|·H(Q) − |Q_l|·H(Q_l) − |Q_r|·H(Q_r)`; 0 for leaves. Clamped at 0
/// against floating-point dust — mathematically it is never negative.
pub fn node_importance(node: &TreeNode) -> f64 {
    match node {
        TreeNode::Leaf { .. } => 0.0,
        TreeNode::Internal {
            samples,
            impurity,
            left,
            right,
            ..
        } => {
            let removed = *samples as f64 * impurity
                - left.samples() as f64 * left.impurity()
                - right.samples() as f64 * right.impurity();
            removed.max(0.0)
        }
    }
}

fn walk(node: &TreeNode, x: &[f64]) -> f64 {
    match node {
        TreeNode::Leaf { prediction, .. } => *prediction,
        TreeNode::Internal {
            split, left, right, ..
        } => {
            if x[split.dim] <= split.threshold {
                walk(left, x)
            } else {
                walk(right, x)
            }
        }
    }
}

fn accumulate_importance(node: &TreeNode, acc: &mut [f64]) {
    if let TreeNode::Internal {
        split, left, right, ..
    } = node
    {
        acc[split.dim] += node_importance(node);
        accumulate_importance(left, acc);
        accumulate_importance(right, acc);
    }
}

impl RandomForest {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn trees(&self) -> &[TreeNode] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    fn validate_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::Invalid(format!(
                "forest expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("predict: non-finite feature".into()));
        }
        Ok(())
    }

    /// Mean prediction over all trees.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let per_tree = self.predict_per_tree(x)?;
        Ok(per_tree.iter().sum::<f64>() / per_tree.len() as f64)
    }

    /// One prediction per tree, in tree order — the spread across trees is a
    /// cheap uncertainty signal.
    pub fn predict_per_tree(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.validate_input(x)?;
        Ok(self.trees.iter().map(|t| walk(t, x)).collect())
    }

    /// Per-dimension share of the total impurity removed across all trees;
    /// sums to 1 whenever any tree split at all, otherwise all zeros.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.n_features];
        for tree in &self.trees {
            accumulate_importance(tree, &mut acc);
        }
        let total: f64 = acc.iter().sum();
        if total > 0.0 {
            for v in &mut acc {
                *v /= total;
            }
        }
        acc
    }
}
