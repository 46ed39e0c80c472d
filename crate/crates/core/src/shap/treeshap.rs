//! Polynomial-time exact Shapley values for trees (path-dependent TreeSHAP).
//!
//! A single recursion walks the tree once per row, maintaining for the
//! current root-to-node path the proportion of subsets of each size that
//! flow down it. Revisiting a feature already on the path first unwinds its
//! earlier entry so every feature appears at most once.

use crate::data::RowMatrix;
use crate::gbdt::{BoostedEnsemble, Direction, TreeNode};

use super::ShapReport;

const NO_FEATURE: usize = usize::MAX;

#[derive(Debug, Clone, Copy, Default)]
struct PathElement {
    feature: usize,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

/// Grows the path held in `path[..depth]` by one element.
fn extend_path(path: &mut [PathElement], depth: usize, zero: f64, one: f64, feature: usize) {
    path[depth] = PathElement {
        feature,
        zero_fraction: zero,
        one_fraction: one,
        pweight: if depth == 0 { 1.0 } else { 0.0 },
    };
    let d = depth as f64;
    for i in (0..depth).rev() {
        let w = path[i].pweight;
        path[i + 1].pweight += one * w * (i + 1) as f64 / (d + 1.0);
        path[i].pweight = zero * w * (d - i as f64) / (d + 1.0);
    }
}

/// Removes element `index` from the path `path[..=depth]`, undoing its
/// contribution to the subset weights.
fn unwind_path(path: &mut [PathElement], depth: usize, index: usize) {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d = depth as f64;
    let mut next_one_portion = path[depth].pweight;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one_portion * (d + 1.0) / ((i + 1) as f64 * one);
            next_one_portion = tmp - path[i].pweight * zero * (d - i as f64) / (d + 1.0);
        } else {
            path[i].pweight = path[i].pweight * (d + 1.0) / (zero * (d - i as f64));
        }
    }
    for i in index..depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

/// Total path weight if element `index` were unwound, without modifying
/// the path.
fn unwound_path_sum(path: &[PathElement], depth: usize, index: usize) -> f64 {
    let one = path[index].one_fraction;
    let zero = path[index].zero_fraction;
    let d = depth as f64;
    let mut next_one_portion = path[depth].pweight;
    let mut total = 0.0;
    for i in (0..depth).rev() {
        if one != 0.0 {
            let tmp = next_one_portion * (d + 1.0) / ((i + 1) as f64 * one);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero * (d - i as f64) / (d + 1.0);
        } else {
            total += path[i].pweight / zero / ((d - i as f64) / (d + 1.0));
        }
    }
    total
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    node: &TreeNode,
    row: &[Option<f64>],
    phi: &mut [f64],
    scale: f64,
    buf: &mut [PathElement],
    parent_len: usize,
    zero: f64,
    one: f64,
    feature: usize,
) {
    // This call's path lives right after the parent's, starting as a copy.
    let (parent, path) = buf.split_at_mut(parent_len);
    path[..parent_len].copy_from_slice(parent);
    let mut depth = parent_len;
    extend_path(path, depth, zero, one, feature);

    match node {
        TreeNode::Leaf { value, .. } => {
            for i in 1..=depth {
                let w = unwound_path_sum(path, depth, i);
                let e = path[i];
                phi[e.feature] += scale * w * (e.one_fraction - e.zero_fraction) * value;
            }
        }
        TreeNode::Split { feature: split, threshold, missing_goes, cover, left, right } => {
            let (hot, cold) = match TreeNode::route(*threshold, *missing_goes, row[*split]) {
                Direction::Left => (left, right),
                Direction::Right => (right, left),
            };
            let mut incoming_zero = 1.0;
            let mut incoming_one = 1.0;
            if let Some(k) = (1..=depth).find(|&k| path[k].feature == *split) {
                incoming_zero = path[k].zero_fraction;
                incoming_one = path[k].one_fraction;
                unwind_path(path, depth, k);
                depth -= 1;
            }
            let cover = *cover as f64;
            let len = depth + 1;
            recurse(
                hot,
                row,
                phi,
                scale,
                path,
                len,
                incoming_zero * hot.cover() as f64 / cover,
                incoming_one,
                *split,
            );
            recurse(
                cold,
                row,
                phi,
                scale,
                path,
                len,
                incoming_zero * cold.cover() as f64 / cover,
                0.0,
                *split,
            );
        }
    }
}

fn path_buffer(tree: &TreeNode) -> Vec<PathElement> {
    let d = tree.depth() + 2;
    vec![PathElement::default(); d * (d + 1) / 2 + d]
}

/// Adds `scale · φ(tree, row)` into `phi`.
pub fn tree_shap_single(tree: &TreeNode, row: &[Option<f64>], scale: f64, phi: &mut [f64]) {
    let mut buf = path_buffer(tree);
    shap_into(tree, row, scale, phi, &mut buf);
}

fn shap_into(tree: &TreeNode, row: &[Option<f64>], scale: f64, phi: &mut [f64], buf: &mut [PathElement]) {
    if tree.is_leaf() {
        return;
    }
    recurse(tree, row, phi, scale, buf, 0, 1.0, 1.0, NO_FEATURE);
}

/// Cover-weighted mean output of a tree.
pub fn expected_value(tree: &TreeNode) -> f64 {
    match tree {
        TreeNode::Leaf { value, .. } => *value,
        TreeNode::Split { cover, left, right, .. } => {
            (left.cover() as f64 * expected_value(left) + right.cover() as f64 * expected_value(right))
                / *cover as f64
        }
    }
}

/// Explainer with per-model constants precomputed.
#[derive(Debug, Clone)]
pub struct TreeExplainer<'a> {
    model: &'a BoostedEnsemble,
    base_value: f64,
    buffer_len: usize,
}

impl<'a> TreeExplainer<'a> {
    pub fn new(model: &'a BoostedEnsemble) -> Self {
        let expected: f64 = model.trees.iter().map(expected_value).sum();
        let buffer_len = model.trees.iter().map(|t| path_buffer(t).len()).max().unwrap_or(0);
        Self { model, base_value: model.base_score + model.learning_rate * expected, buffer_len }
    }

    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn explain(&self, row: &[Option<f64>]) -> ShapReport {
        assert_eq!(row.len(), self.model.n_features(), "row not aligned to model");
        let mut buf = vec![PathElement::default(); self.buffer_len];
        let mut phi = vec![0.0; self.model.n_features()];
        let lr = self.model.learning_rate;
        for tree in &self.model.trees {
            shap_into(tree, row, lr, &mut phi, &mut buf);
        }
        ShapReport {
            base_value: self.base_value,
            phi,
            prediction: self.model.predict_row(row),
            row_ref: None,
        }
    }

    pub fn explain_matrix(&self, rows: &RowMatrix) -> Vec<ShapReport> {
        rows.rows().map(|r| self.explain(r)).collect()
    }
}

pub fn tree_shap(model: &BoostedEnsemble, row: &[Option<f64>]) -> ShapReport {
    TreeExplainer::new(model).explain(row)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shap::brute_force_shap;

    fn model(trees: Vec<TreeNode>, p: usize) -> BoostedEnsemble {
        BoostedEnsemble {
            base_score: 1.5,
            learning_rate: 0.5,
            trees,
            feature_names: (0..p).map(|i| format!("f{i}")).collect(),
            config: Default::default(),
        }
    }

    #[test]
    fn constant_model_has_zero_phi() {
        let m = model(vec![TreeNode::leaf(4.0, 10), TreeNode::leaf(-1.0, 10)], 3);
        let r = tree_shap(&m, &[Some(1.0), None, Some(2.0)]);
        assert_eq!(r.phi, vec![0.0; 3]);
        assert_eq!(r.base_value, 1.5 + 0.5 * 3.0);
        assert_eq!(r.prediction, r.base_value);
    }

    #[test]
    fn repeated_feature_on_path_matches_oracle() {
        // Feature 0 appears twice along the same path.
        let inner = TreeNode::split(
            0,
            2.0,
            Direction::Right,
            TreeNode::leaf(1.0, 3),
            TreeNode::split(1, 0.0, Direction::Left, TreeNode::leaf(4.0, 2), TreeNode::leaf(-2.0, 5)),
        );
        let t = TreeNode::split(0, 5.0, Direction::Left, inner, TreeNode::leaf(7.0, 6));
        let m = model(vec![t], 2);
        for row in [
            [Some(1.0), Some(1.0)],
            [Some(3.0), Some(-1.0)],
            [Some(9.0), None],
            [None, None],
            [Some(3.0), None],
        ] {
            let fast = tree_shap(&m, &row);
            let slow = brute_force_shap(&m, &row).unwrap();
            for (a, b) in fast.phi.iter().zip(&slow.phi) {
                assert!((a - b).abs() < 1e-12, "{row:?}: {a} vs {b}");
            }
            assert!((fast.base_value - slow.base_value).abs() < 1e-12);
        }
    }

    #[test]
    fn mirrored_duplicates_get_equal_phi() {
        // Features 0 and 1 carry the same value and play mirrored roles.
        let sub = |f: usize, g: usize| {
            TreeNode::split(
                f,
                0.5,
                Direction::Left,
                TreeNode::split(g, 0.5, Direction::Left, TreeNode::leaf(0.0, 5), TreeNode::leaf(3.0, 5)),
                TreeNode::split(g, 0.5, Direction::Left, TreeNode::leaf(3.0, 5), TreeNode::leaf(8.0, 5)),
            )
        };
        let m = model(vec![sub(0, 1), sub(1, 0)], 2);
        for v in [0.0, 1.0] {
            let r = tree_shap(&m, &[Some(v), Some(v)]);
            assert!((r.phi[0] - r.phi[1]).abs() < 1e-12, "{:?}", r.phi);
        }
    }
}
