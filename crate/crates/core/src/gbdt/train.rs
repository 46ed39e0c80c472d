//! Exact greedy residual fitting with learned missing-value directions.

use super::tree::{Direction, TreeNode};
use super::{BoostedEnsemble, GbdtError, TrainConfig, TrainingSet};

/// Present values go left and missing cells go right.
pub const PRESENT_VS_MISSING: f64 = f64::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    feature: usize,
    threshold: f64,
    missing_goes: Direction,
    gain: f64,
}

/// Per-node working set: rows in the node, and for every feature the
/// node's present rows sorted by value plus its missing rows.
struct NodeRows {
    rows: Vec<u32>,
    sorted: Vec<Vec<u32>>,
    missing: Vec<Vec<u32>>,
}

struct Builder<'a> {
    data: &'a TrainingSet,
    cfg: &'a TrainConfig,
    residual: Vec<f64>,
    goes_left: Vec<bool>,
}

pub fn fit(data: &TrainingSet, cfg: &TrainConfig) -> Result<BoostedEnsemble, GbdtError> {
    cfg.validate()?;
    let n = data.n_rows();
    if data.n_features() == 0 {
        return Err(GbdtError::NoFeatures);
    }
    let needed = 2 * cfg.min_child_cover;
    if n < needed {
        return Err(GbdtError::TooFewRows { needed, actual: n });
    }

    let base_score = data.labels.iter().sum::<f64>() / n as f64;
    let root = presort(data);
    let mut builder = Builder {
        data,
        cfg,
        residual: vec![0.0; n],
        goes_left: vec![false; n],
    };
    let mut scores = vec![base_score; n];
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for _ in 0..cfg.n_trees {
        for (r, (y, s)) in builder.residual.iter_mut().zip(data.labels.iter().zip(&scores)) {
            *r = y - s;
        }
        let node = NodeRows {
            rows: root.rows.clone(),
            sorted: root.sorted.clone(),
            missing: root.missing.clone(),
        };
        let tree = builder.grow(node, 0);
        for (i, s) in scores.iter_mut().enumerate() {
            *s += cfg.learning_rate * tree.eval_with(|f| data.columns[f][i]);
        }
        trees.push(tree);
    }

    Ok(BoostedEnsemble {
        base_score,
        learning_rate: cfg.learning_rate,
        trees,
        feature_names: data.feature_names.clone(),
        config: cfg.clone(),
    })
}

fn presort(data: &TrainingSet) -> NodeRows {
    let n = data.n_rows();
    let mut sorted = Vec::with_capacity(data.n_features());
    let mut missing = Vec::with_capacity(data.n_features());
    for col in &data.columns {
        let (mut present, absent): (Vec<u32>, Vec<u32>) =
            (0..n as u32).partition(|&r| col[r as usize].is_some());
        present.sort_by(|&a, &b| {
            let (va, vb) = (col[a as usize].unwrap(), col[b as usize].unwrap());
            va.total_cmp(&vb).then(a.cmp(&b))
        });
        sorted.push(present);
        missing.push(absent);
    }
    NodeRows { rows: (0..n as u32).collect(), sorted, missing }
}

impl Builder<'_> {
    fn grow(&mut self, node: NodeRows, depth: usize) -> TreeNode {
        let cover = node.rows.len() as u64;
        let sum: f64 = node.rows.iter().map(|&r| self.residual[r as usize]).sum();
        let leaf_value = sum / cover as f64;
        if depth >= self.cfg.max_depth || node.rows.len() < 2 * self.cfg.min_child_cover {
            return TreeNode::leaf(leaf_value, cover);
        }
        let Some(best) = self.best_split(&node, sum) else {
            return TreeNode::leaf(leaf_value, cover);
        };

        let col = &self.data.columns[best.feature];
        for &r in &node.rows {
            let dir = TreeNode::route(best.threshold, best.missing_goes, col[r as usize]);
            self.goes_left[r as usize] = dir == Direction::Left;
        }
        let (left, right) = self.partition(node);
        let left = self.grow(left, depth + 1);
        let right = self.grow(right, depth + 1);
        TreeNode::split(best.feature, best.threshold, best.missing_goes, left, right)
    }

    fn partition(&self, node: NodeRows) -> (NodeRows, NodeRows) {
        let gl = &self.goes_left;
        let split = |v: Vec<u32>| -> (Vec<u32>, Vec<u32>) {
            v.into_iter().partition(|&r| gl[r as usize])
        };
        let (rows_l, rows_r) = split(node.rows);
        let mut left = NodeRows { rows: rows_l, sorted: Vec::new(), missing: Vec::new() };
        let mut right = NodeRows { rows: rows_r, sorted: Vec::new(), missing: Vec::new() };
        for (s, m) in node.sorted.into_iter().zip(node.missing) {
            let (sl, sr) = split(s);
            let (ml, mr) = split(m);
            left.sorted.push(sl);
            left.missing.push(ml);
            right.sorted.push(sr);
            right.missing.push(mr);
        }
        (left, right)
    }

    /// Best variance-reduction split over all features. Ties keep the
    /// earlier candidate: lower feature index, then lower threshold, then
    /// missing-left.
    fn best_split(&self, node: &NodeRows, sum: f64) -> Option<Candidate> {
        let n = node.rows.len() as f64;
        let parent = sum * sum / n;
        let sum_sq: f64 = node.rows.iter().map(|&r| self.residual[r as usize].powi(2)).sum();
        // Numerical floor: gains below this are rounding noise.
        let min_gain = 1e-12 * sum_sq;
        let min_child = self.cfg.min_child_cover as f64;

        let mut best: Option<Candidate> = None;
        let mut consider = |c: Candidate| {
            if c.gain > min_gain && best.map_or(true, |b| c.gain > b.gain) {
                best = Some(c);
            }
        };
        let gain = |sl: f64, nl: f64| -> Option<f64> {
            let (sr, nr) = (sum - sl, n - nl);
            (nl >= min_child && nr >= min_child).then(|| sl * sl / nl + sr * sr / nr - parent)
        };

        for (feature, (sorted, missing)) in node.sorted.iter().zip(&node.missing).enumerate() {
            let col = &self.data.columns[feature];
            let miss_sum: f64 = missing.iter().map(|&r| self.residual[r as usize]).sum();
            let miss_n = missing.len() as f64;
            let mut acc = 0.0;
            for k in 0..sorted.len().saturating_sub(1) {
                let r = sorted[k] as usize;
                acc += self.residual[r];
                let lo = col[r].unwrap();
                let hi = col[sorted[k + 1] as usize].unwrap();
                if lo == hi {
                    continue;
                }
                let mut threshold = 0.5 * (lo + hi);
                if threshold <= lo {
                    threshold = hi;
                }
                let nl = (k + 1) as f64;
                if let Some(g) = gain(acc + miss_sum, nl + miss_n) {
                    consider(Candidate { feature, threshold, missing_goes: Direction::Left, gain: g });
                }
                if miss_n > 0.0 {
                    if let Some(g) = gain(acc, nl) {
                        consider(Candidate { feature, threshold, missing_goes: Direction::Right, gain: g });
                    }
                }
            }
            if miss_n > 0.0 && !sorted.is_empty() {
                if let Some(g) = gain(sum - miss_sum, sorted.len() as f64) {
                    consider(Candidate {
                        feature,
                        threshold: PRESENT_VS_MISSING,
                        missing_goes: Direction::Right,
                        gain: g,
                    });
                }
            }
        }
        best
    }
}
