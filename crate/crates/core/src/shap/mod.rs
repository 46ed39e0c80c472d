//! Shapley attributions for tree ensembles under the path-dependent value
//! function: conditioning on a feature follows the row's branch, while an
//! unconditioned split averages its children weighted by training cover.
//!
//! [`brute_force_shap`] enumerates every feature subset and is the reference;
//! [`tree_shap`] is the polynomial-time algorithm used everywhere else.

mod brute;
mod summary;
mod treeshap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use brute::{brute_force_shap, conditional_expectation, MAX_BRUTE_FORCE_FEATURES};
pub use summary::{
    summarize, top_scored_summary, top_scored_rows, write_importance_csv, write_points_csv,
    BeeswarmPoint, FeatureImportance, GlobalShapSummary,
};
pub use treeshap::{expected_value, tree_shap, tree_shap_single, TreeExplainer};

#[derive(Debug, Error)]
pub enum ShapError {
    #[error("brute-force Shapley values support at most {max} features, model has {actual}")]
    TooManyFeatures { max: usize, actual: usize },
    #[error("row has {actual} cells, model expects {expected}")]
    RowWidth { expected: usize, actual: usize },
    #[error("cannot summarize zero rows")]
    NoRows,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Attribution of one row's prediction, in model output units (kWh).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapReport {
    /// Expected model output with no feature conditioned.
    pub base_value: f64,
    /// One entry per model feature, in model order.
    pub phi: Vec<f64>,
    pub prediction: f64,
    pub row_ref: Option<String>,
}

impl ShapReport {
    /// `|base + Σφ − prediction|`
    pub fn local_accuracy_gap(&self) -> f64 {
        (self.base_value + self.phi.iter().sum::<f64>() - self.prediction).abs()
    }
}
