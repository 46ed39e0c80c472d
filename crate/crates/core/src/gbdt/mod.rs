//! Gradient-boosted regression trees with squared-error loss.
//!
//! Each tree fits the residuals of the ensemble built so far using an exact
//! greedy split search over midpoints of sorted unique feature values. Missing
//! cells are routed to whichever child gives the larger variance reduction.

mod io;
mod train;
mod tree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{FeatureTable, RowMatrix};

pub use io::{load_model, read_model, save_model, write_model, MODEL_FORMAT, MODEL_VERSION};
pub use train::{fit, PRESENT_VS_MISSING};
pub use tree::{Direction, TreeNode};

#[derive(Debug, Error)]
pub enum GbdtError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training needs at least {needed} rows, got {actual}")]
    TooFewRows { needed: usize, actual: usize },
    #[error("training set has no feature columns")]
    NoFeatures,
    #[error("rows lack model feature(s): {0:?}")]
    MissingColumn(Vec<String>),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_cover: usize,
    /// Kept for reproducibility records. The exact greedy search draws no
    /// random numbers.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { n_trees: 200, max_depth: 6, learning_rate: 0.1, min_child_cover: 20, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GbdtError> {
        let bad = |m: &str| Err(GbdtError::InvalidConfig(m.to_string()));
        if self.n_trees < 1 {
            return bad("n_trees must be at least 1");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if self.min_child_cover < 1 {
            return bad("min_child_cover must be at least 1");
        }
        Ok(())
    }
}

/// Column-major training data with the (possibly edited) regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub feature_names: Vec<String>,
    pub columns: Vec<Vec<Option<f64>>>,
    pub labels: Vec<f64>,
}

impl TrainingSet {
    pub fn new(
        feature_names: Vec<String>,
        columns: Vec<Vec<Option<f64>>>,
        labels: Vec<f64>,
    ) -> Result<Self, GbdtError> {
        if feature_names.len() != columns.len() {
            return Err(GbdtError::InvalidConfig("feature names and columns differ in length".into()));
        }
        if columns.iter().any(|c| c.len() != labels.len()) {
            return Err(GbdtError::InvalidConfig("ragged training columns".into()));
        }
        if labels.iter().any(|l| !l.is_finite()) {
            return Err(GbdtError::InvalidConfig("non-finite label".into()));
        }
        Ok(Self { feature_names, columns, labels })
    }

    /// Selects `rows` and `features` from a table, using the table labels.
    pub fn from_table(
        table: &FeatureTable,
        rows: &[usize],
        features: &[String],
    ) -> Result<Self, GbdtError> {
        let labels = table.labels_of(rows);
        Self::from_table_with_labels(table, rows, features, labels)
    }

    pub fn from_table_with_labels(
        table: &FeatureTable,
        rows: &[usize],
        features: &[String],
        labels: Vec<f64>,
    ) -> Result<Self, GbdtError> {
        let mut missing = Vec::new();
        let mut columns = Vec::with_capacity(features.len());
        for name in features {
            match table.column(name) {
                Some(col) => columns.push(rows.iter().map(|&r| col.values[r]).collect()),
                None => missing.push(name.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(GbdtError::MissingColumn(missing));
        }
        Self::new(features.to_vec(), columns, labels)
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> Vec<Option<f64>> {
        self.columns.iter().map(|c| c[i]).collect()
    }
}

/// `prediction = base_score + learning_rate · Σ tree(x)`
#[derive(Debug, Clone, PartialEq)]
pub struct BoostedEnsemble {
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeNode>,
    pub feature_names: Vec<String>,
    pub config: TrainConfig,
}

impl BoostedEnsemble {
    /// An ensemble with no trees; predicts `base_score` everywhere.
    pub fn constant(base_score: f64, feature_names: Vec<String>) -> Self {
        Self {
            base_score,
            learning_rate: 1.0,
            trees: Vec::new(),
            feature_names,
            config: TrainConfig::default(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn predict_row(&self, row: &[Option<f64>]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.eval(row)).sum::<f64>()
    }

    /// Scores rows of a matrix already aligned to `feature_names`.
    pub fn predict_matrix(&self, rows: &RowMatrix) -> Vec<f64> {
        assert_eq!(rows.n_features(), self.n_features(), "matrix not aligned to model");
        rows.rows().map(|r| self.predict_row(r)).collect()
    }

    /// Scores `rows` of `table`, matching columns by name. Extra columns are
    /// ignored.
    pub fn predict(&self, table: &FeatureTable, rows: &[usize]) -> Result<Vec<f64>, GbdtError> {
        Ok(self.predict_matrix(&self.align(table, rows)?))
    }

    pub fn align(&self, table: &FeatureTable, rows: &[usize]) -> Result<RowMatrix, GbdtError> {
        table.matrix(&self.feature_names, rows).map_err(|e| match e {
            crate::data::DataError::MissingColumn(v) => GbdtError::MissingColumn(v),
            other => GbdtError::CorruptModel(other.to_string()),
        })
    }

    /// Checks every tree's structural invariants.
    pub fn check(&self) -> Result<(), String> {
        for (i, t) in self.trees.iter().enumerate() {
            t.check().map_err(|e| format!("tree {i}: {e}"))?;
            let mut bad = None;
            t.visit(&mut |n| {
                if let TreeNode::Split { feature, .. } = n {
                    if *feature >= self.feature_names.len() {
                        bad = Some(*feature);
                    }
                }
            });
            if let Some(f) = bad {
                return Err(format!("tree {i}: feature index {f} out of range"));
            }
        }
        Ok(())
    }
}

pub fn rmse(predictions: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(predictions.len(), labels.len());
    if labels.is_empty() {
        return 0.0;
    }
    let sse: f64 = predictions.iter().zip(labels).map(|(p, y)| (p - y).powi(2)).sum();
    (sse / labels.len() as f64).sqrt()
}

/// RMSE of the model on `rows` of `table` against the table labels.
pub fn evaluate_rmse(
    model: &BoostedEnsemble,
    table: &FeatureTable,
    rows: &[usize],
) -> Result<f64, GbdtError> {
    let predictions = model.predict(table, rows)?;
    Ok(rmse(&predictions, &table.labels_of(rows)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[Option<f64>], ys: &[f64]) -> TrainingSet {
        TrainingSet::new(vec!["x".into()], vec![xs.to_vec()], ys.to_vec()).unwrap()
    }

    fn cfg(n_trees: usize, max_depth: usize, lr: f64, min_cover: usize) -> TrainConfig {
        TrainConfig { n_trees, max_depth, learning_rate: lr, min_child_cover: min_cover, seed: 0 }
    }

    #[test]
    fn constant_target() {
        let xs: Vec<Option<f64>> = (0..50).map(|i| Some(i as f64)).collect();
        let m = fit(&set(&xs, &[5.0; 50]), &cfg(10, 3, 0.1, 2)).unwrap();
        assert_eq!(m.base_score, 5.0);
        assert_eq!(m.trees.len(), 10);
        for t in &m.trees {
            assert_eq!(t, &TreeNode::leaf(0.0, 50));
        }
        assert!(xs.iter().all(|x| m.predict_row(&[*x]) == 5.0));
    }

    #[test]
    fn binary_stump_is_exact() {
        // Hand-solved: base 5, residuals ∓5, stump leaves -5 / +5, lr 1.
        let xs = [Some(0.0), Some(0.0), Some(1.0), Some(1.0)];
        let ys = [0.0, 0.0, 10.0, 10.0];
        let m = fit(&set(&xs, &ys), &cfg(1, 1, 1.0, 1)).unwrap();
        assert_eq!(m.base_score, 5.0);
        match &m.trees[0] {
            TreeNode::Split { threshold, left, right, .. } => {
                assert_eq!(*threshold, 0.5);
                assert_eq!(**left, TreeNode::leaf(-5.0, 2));
                assert_eq!(**right, TreeNode::leaf(5.0, 2));
            }
            other => panic!("expected split, got {other:?}"),
        }
        let preds: Vec<f64> = xs.iter().map(|x| m.predict_row(&[*x])).collect();
        assert_eq!(preds, ys.to_vec());
    }

    #[test]
    fn missing_rows_follow_gain() {
        // Missing rows carry the high label; they must be routed with the
        // high present values.
        let xs = [Some(0.0), Some(0.0), Some(1.0), Some(1.0), None, None];
        let ys = [0.0, 0.0, 10.0, 10.0, 10.0, 10.0];
        let m = fit(&set(&xs, &ys), &cfg(1, 1, 1.0, 1)).unwrap();
        match &m.trees[0] {
            TreeNode::Split { missing_goes, threshold, .. } => {
                assert_eq!(*threshold, 0.5);
                assert_eq!(*missing_goes, Direction::Right);
            }
            other => panic!("expected split, got {other:?}"),
        }
        assert!((m.predict_row(&[None]) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn present_vs_missing_split() {
        let xs = [Some(3.0), Some(3.0), Some(3.0), None, None, None];
        let ys = [0.0, 0.0, 0.0, 6.0, 6.0, 6.0];
        let m = fit(&set(&xs, &ys), &cfg(1, 1, 1.0, 1)).unwrap();
        assert_eq!(m.predict_row(&[None]), 6.0);
        assert_eq!(m.predict_row(&[Some(3.0)]), 0.0);
        assert_eq!(m.predict_row(&[Some(1e9)]), 0.0);
    }

    #[test]
    fn tie_breaks_to_lower_feature() {
        let a: Vec<Option<f64>> = [0.0, 0.0, 1.0, 1.0].iter().map(|&v| Some(v)).collect();
        let data = TrainingSet::new(
            vec!["a".into(), "b".into()],
            vec![a.clone(), a],
            vec![0.0, 0.0, 4.0, 4.0],
        )
        .unwrap();
        let m = fit(&data, &cfg(1, 1, 1.0, 1)).unwrap();
        assert!(matches!(m.trees[0], TreeNode::Split { feature: 0, .. }));
    }

    #[test]
    fn min_child_cover_blocks_splits() {
        let xs = [Some(0.0), Some(1.0), Some(2.0), Some(3.0)];
        let m = fit(&set(&xs, &[0.0, 0.0, 0.0, 9.0]), &cfg(1, 3, 1.0, 2)).unwrap();
        assert_eq!(m.trees[0].n_leaves(), 2);
        assert!(fit(&set(&xs, &[0.0; 4]), &cfg(1, 3, 1.0, 3)).is_err());
    }

    #[test]
    fn empty_ensemble_predicts_base() {
        let m = BoostedEnsemble::constant(7.5, vec!["x".into()]);
        assert_eq!(m.predict_row(&[Some(1.0)]), 7.5);
        assert_eq!(m.predict_row(&[None]), 7.5);
    }

    #[test]
    fn rmse_basics() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(rmse(&[5.0, 5.0], &[0.0, 10.0]), 5.0);
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0, 1, 0.1, 1).validate().is_err());
        assert!(cfg(1, 0, 0.1, 1).validate().is_err());
        assert!(cfg(1, 1, 0.0, 1).validate().is_err());
        assert!(cfg(1, 1, 1.5, 1).validate().is_err());
        assert!(cfg(1, 1, 1.0, 0).validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
