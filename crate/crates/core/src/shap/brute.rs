use crate::gbdt::{BoostedEnsemble, Direction, TreeNode};

use super::{ShapError, ShapReport};

pub const MAX_BRUTE_FORCE_FEATURES: usize = 20;

/// Expected tree output given that only the features in `subset` are known.
pub fn conditional_expectation(tree: &TreeNode, row: &[Option<f64>], subset: &[bool]) -> f64 {
    expectation(tree, row, &|f| subset[f])
}

fn expectation(tree: &TreeNode, row: &[Option<f64>], known: &dyn Fn(usize) -> bool) -> f64 {
    match tree {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Split { feature, threshold, missing_goes, cover, left, right } => {
            if known(*feature) {
                match TreeNode::route(*threshold, *missing_goes, row[*feature]) {
                    Direction::Left => expectation(left, row, known),
                    Direction::Right => expectation(right, row, known),
                }
            } else {
                let l = expectation(left, row, known);
                let r = expectation(right, row, known);
                (left.cover() as f64 * l + right.cover() as f64 * r) / *cover as f64
            }
        }
    }
}

/// Shapley values by direct enumeration of all 2^p feature subsets:
/// `φ_i = Σ_{S ⊆ F∖{i}} |S|!(p−|S|−1)!/p! · (v(S∪{i}) − v(S))`.
pub fn brute_force_shap(model: &BoostedEnsemble, row: &[Option<f64>]) -> Result<ShapReport, ShapError> {
    let p = model.n_features();
    if p > MAX_BRUTE_FORCE_FEATURES {
        return Err(ShapError::TooManyFeatures { max: MAX_BRUTE_FORCE_FEATURES, actual: p });
    }
    if row.len() != p {
        return Err(ShapError::RowWidth { expected: p, actual: row.len() });
    }

    let n_subsets = 1usize << p;
    let value: Vec<f64> = (0..n_subsets)
        .map(|mask| {
            let known = |f: usize| mask >> f & 1 == 1;
            let sum: f64 = model.trees.iter().map(|t| expectation(t, row, &known)).sum();
            model.base_score + model.learning_rate * sum
        })
        .collect();

    // weight[s] = s!(p−s−1)!/p! = 1 / (p · C(p−1, s))
    let weight: Vec<f64> = (0..p.max(1))
        .map(|s| {
            let mut binom = 1.0;
            for k in 0..s {
                binom = binom * (p - 1 - k) as f64 / (k + 1) as f64;
            }
            1.0 / (p as f64 * binom)
        })
        .collect();

    let mut phi = vec![0.0; p];
    for (i, slot) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in (0..n_subsets).filter(|m| m & bit == 0) {
            acc += weight[mask.count_ones() as usize] * (value[mask | bit] - value[mask]);
        }
        *slot = acc;
    }

    Ok(ShapReport {
        base_value: value[0],
        phi,
        prediction: value[n_subsets - 1],
        row_ref: None,
    })
}
