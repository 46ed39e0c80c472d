//! Wire payloads. Every response object carries `v` (schema version); energy
//! values and attributions are in kWh; missing raw values are `null`.

use std::collections::BTreeMap;

use ntl_core::session::{
    ComparisonReport, GuardOutcome, IterationMetrics, IterationRecord, RefinementAction, Session, SessionConfig,
};
use ntl_core::shap::{FeatureImportance, GlobalShapSummary};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetRef;
use crate::state::SessionMeta;

pub const SCHEMA_VERSION: u32 = 1;
pub const UNITS: &str = "kWh";

#[derive(Debug, Clone, Deserialize)]
pub struct CreateSession {
    pub dataset: DatasetRef,
    #[serde(default)]
    pub config: SessionConfig,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionSnapshot {
    pub v: u32,
    pub units: &'static str,
    pub id: String,
    pub dataset: DatasetRef,
    pub created_at: String,
    pub provenance: String,
    pub config: SessionConfig,
    /// Dataset column order.
    pub all_features: Vec<String>,
    pub active_features: Vec<String>,
    pub label_overrides: BTreeMap<String, f64>,
    pub pending: Vec<RefinementAction>,
    pub undo_depth: usize,
    pub iterations: usize,
    pub last_iteration: Option<usize>,
    /// Last accepted iteration.
    pub cursor: Option<usize>,
}

impl SessionSnapshot {
    pub fn of(meta: &SessionMeta, session: &Session) -> Self {
        let s = session.state();
        // Uploaded CSV text is not echoed back; the stored reference is a path.
        Self {
            v: SCHEMA_VERSION,
            units: UNITS,
            id: meta.id.clone(),
            dataset: meta.dataset.clone(),
            created_at: meta.created_at.clone(),
            provenance: s.provenance.to_string(),
            config: s.config.clone(),
            all_features: s.all_features.clone(),
            active_features: s.active_features.clone(),
            label_overrides: s.label_overrides.clone(),
            pending: s.pending.clone(),
            undo_depth: s.undo_depth(),
            iterations: s.iterations.len(),
            last_iteration: s.iterations.len().checked_sub(1),
            cursor: s.cursor,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionList {
    pub v: u32,
    pub sessions: Vec<SessionSnapshot>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationResponse {
    pub v: u32,
    pub units: &'static str,
    pub cursor: Option<usize>,
    pub record: IterationRecord,
}

#[derive(Debug, Clone, Serialize)]
pub struct HistoryEntry {
    pub index: usize,
    pub actions: Vec<RefinementAction>,
    pub metrics: IterationMetrics,
    pub guard: GuardOutcome,
    pub reverted: bool,
    pub active_features: Vec<String>,
    pub label_overrides: BTreeMap<String, f64>,
    pub max_abs_phi: f64,
    pub outliers_flagged: usize,
    pub low_importance_flagged: usize,
    pub correlated_pairs_flagged: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct History {
    pub v: u32,
    pub units: &'static str,
    pub cursor: Option<usize>,
    /// The guard rejects an iteration whose validation NDCG falls by at
    /// least this much below the reference.
    pub guard_threshold: f64,
    pub iterations: Vec<HistoryEntry>,
}

impl History {
    pub fn of(session: &Session) -> Self {
        let iterations = session
            .iterations()
            .iter()
            .map(|r| HistoryEntry {
                index: r.index,
                actions: r.actions.clone(),
                metrics: r.metrics.clone(),
                guard: r.guard.clone(),
                reverted: r.reverted,
                active_features: r.active_features.clone(),
                label_overrides: r.label_overrides.clone(),
                max_abs_phi: r.global_summary.max_abs_phi,
                outliers_flagged: r.advisor.outliers.len(),
                low_importance_flagged: r.advisor.low_importance.len(),
                correlated_pairs_flagged: r.advisor.correlated_pairs.len(),
            })
            .collect();
        Self {
            v: SCHEMA_VERSION,
            units: UNITS,
            cursor: session.state().cursor,
            guard_threshold: ntl_core::metrics::GUARD_MARGIN,
            iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Global,
    Topk,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ShapQuery {
    pub scope: Option<String>,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ShapRow {
    pub customer_id: String,
    pub prediction: f64,
    /// Aligned with `feature_names`.
    pub phi: Vec<f64>,
    pub raw: Vec<Option<f64>>,
    /// Per-feature min-max scaled raw values for colouring.
    pub normalized: Vec<Option<f64>>,
    /// The advisor flagged this customer as a label outlier.
    pub outlier: bool,
}

/// One beeswarm point per (row, feature) pair, packed by row.
#[derive(Debug, Clone, Serialize)]
pub struct ShapPayload {
    pub v: u32,
    pub units: &'static str,
    pub iteration: usize,
    pub scope: Scope,
    pub k: Option<usize>,
    /// Column order of every per-row array.
    pub feature_names: Vec<String>,
    /// Display order (descending mean |φ|).
    pub feature_order: Vec<String>,
    pub importance: Vec<FeatureImportance>,
    pub base_value: f64,
    pub n_rows: usize,
    pub n_points: usize,
    pub rows: Vec<ShapRow>,
}

impl ShapPayload {
    pub fn of(record: &IterationRecord, summary: &GlobalShapSummary, scope: Scope, k: Option<usize>) -> Self {
        let normalized = summary.normalized_raw();
        let outliers: Vec<&str> = record.advisor.outliers.iter().map(|o| o.customer_id.as_str()).collect();
        let rows: Vec<ShapRow> = (0..summary.n_rows())
            .map(|r| ShapRow {
                customer_id: summary.row_refs[r].clone(),
                prediction: summary.predictions[r],
                phi: summary.phi[r].clone(),
                raw: summary.raw[r].clone(),
                normalized: normalized[r].clone(),
                outlier: outliers.contains(&summary.row_refs[r].as_str()),
            })
            .collect();
        Self {
            v: SCHEMA_VERSION,
            units: UNITS,
            iteration: record.index,
            scope,
            k,
            feature_names: summary.feature_names.clone(),
            feature_order: summary.importance.iter().map(|i| i.feature.clone()).collect(),
            importance: summary.importance.clone(),
            base_value: summary.base_value,
            n_rows: rows.len(),
            n_points: rows.len() * summary.feature_names.len(),
            rows,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct CompareQuery {
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareResponse {
    pub v: u32,
    pub units: &'static str,
    pub report: ComparisonReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Health {
    pub v: u32,
    pub status: &'static str,
    pub sessions: usize,
}
