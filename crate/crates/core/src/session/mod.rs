//! The refinement loop: a session holds the analyst's edits (label caps and
//! feature selection) and the history of evaluated iterations. Each
//! iteration retrains on the edited data, re-explains, re-measures and is
//! accepted or reverted by the NDCG guard.
//!
//! An iteration runs in two phases so the expensive part can happen without
//! holding the session: [`Session::plan`] snapshots the inputs,
//! [`IterationPlan::execute`] trains and explains, and [`Session::commit`]
//! records the outcome. Journal replay calls only the commit half.

mod journal;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::advisor::{advise, AdvisorConfig, AdvisorFindings};
use crate::data::{DataError, FeatureTable, Provenance, Split};
use crate::gbdt::{self, fit, BoostedEnsemble, GbdtError, TrainConfig, TrainingSet};
use crate::metrics::{self, GuardVerdict, MetricError};
use crate::shap::{summarize, top_scored_summary, FeatureImportance, GlobalShapSummary, ShapError};

pub use journal::{parse_events, read_events, Clock, EventBody, Journal, JournalEvent, DETERMINISTIC_TIMESTAMP};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("dataset has no {0} rows; a train/validation/test split is required")]
    UnsplitDataset(Split),
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("feature {0:?} is not active")]
    InactiveFeature(String),
    #[error("feature {0:?} is already active")]
    AlreadyActive(String),
    #[error("cannot drop {0:?}: it is the last active feature")]
    LastFeature(String),
    #[error("unknown customer {0:?}")]
    UnknownCustomer(String),
    #[error("invalid cap for {customer_id}: {reason}")]
    InvalidCap { customer_id: String, reason: String },
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("no iteration {0}")]
    UnknownIteration(usize),
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("stale iteration: {0}")]
    StaleIteration(String),
    #[error("corrupt journal at line {line}: {reason}")]
    CorruptJournal { line: usize, reason: String },
    #[error("journal was recorded against different data or config (journal {journal}, current {current})")]
    JournalMismatch { journal: String, current: String },
    #[error("training failed: {0}")]
    Training(#[from] GbdtError),
    #[error("explanation failed: {0}")]
    Explanation(#[from] ShapError),
    #[error("metric failed: {0}")]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SessionError {
    /// Errors caused by the request rather than by the system.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            SessionError::UnknownFeature(_)
                | SessionError::InactiveFeature(_)
                | SessionError::AlreadyActive(_)
                | SessionError::LastFeature(_)
                | SessionError::UnknownCustomer(_)
                | SessionError::InvalidCap { .. }
                | SessionError::NothingToUndo
                | SessionError::UnknownIteration(_)
                | SessionError::InvalidConfig(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub train: TrainConfig,
    /// Inspection budget for energy@k and the top-k explanation.
    pub k: usize,
    pub advisor: AdvisorConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { train: TrainConfig::default(), k: 200, advisor: AdvisorConfig::default() }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        self.train.validate()?;
        if self.k == 0 {
            return Err(SessionError::InvalidConfig("k must be at least 1".into()));
        }
        Ok(())
    }
}

/// An analyst edit. Actions accumulate until the next iteration evaluates
/// them together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RefinementAction {
    /// Replace a customer's training label with a smaller value (kWh).
    CapLabel { customer_id: String, kwh: f64 },
    DropFeature { feature: String },
    RestoreFeature { feature: String },
    /// Revert the most recent action still in effect.
    Undo,
}

impl fmt::Display for RefinementAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefinementAction::CapLabel { customer_id, kwh } => write!(f, "cap_label {customer_id} {kwh} kWh"),
            RefinementAction::DropFeature { feature } => write!(f, "drop_feature {feature}"),
            RefinementAction::RestoreFeature { feature } => write!(f, "restore_feature {feature}"),
            RefinementAction::Undo => f.write_str("undo"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    /// NDCG over the full validation list; `None` if validation has no
    /// positive label.
    pub ndcg_validation: Option<f64>,
    /// kWh recovered by inspecting the top `k` test customers.
    pub energy_at_k_test: f64,
    pub k: usize,
    pub precision_at_k_test: f64,
    /// Fit to the (edited) training labels.
    pub rmse_train: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDigest {
    pub rows: usize,
    pub base_value: f64,
    pub importance: Vec<FeatureImportance>,
    pub max_abs_phi: f64,
    pub max_abs_phi_customer: String,
    pub max_abs_phi_feature: String,
}

impl SummaryDigest {
    pub fn of(summary: &GlobalShapSummary) -> Self {
        let (max_abs_phi, max_abs_phi_customer, max_abs_phi_feature) =
            summary.max_abs_phi().unwrap_or((0.0, String::new(), String::new()));
        Self {
            rows: summary.n_rows(),
            base_value: summary.base_value,
            importance: summary.importance.clone(),
            max_abs_phi,
            max_abs_phi_customer,
            max_abs_phi_feature,
        }
    }

    pub fn importance_of(&self, feature: &str) -> Option<f64> {
        self.importance.iter().find(|i| i.feature == feature).map(|i| i.mean_abs_phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardStatus {
    Baseline,
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuardOutcome {
    pub status: GuardStatus,
    /// The accepted iteration this one was compared against.
    pub reference: Option<usize>,
    /// `reference NDCG − this NDCG`, when both are defined.
    pub ndcg_drop: Option<f64>,
}

impl GuardOutcome {
    pub fn accepted(&self) -> bool {
        self.status != GuardStatus::Reject
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    /// Actions taken since the previous iteration; empty for the baseline.
    pub actions: Vec<RefinementAction>,
    pub active_features: Vec<String>,
    pub label_overrides: BTreeMap<String, f64>,
    pub train_config: TrainConfig,
    /// Relative path of the saved model inside a session workdir.
    pub model_ref: String,
    /// SHA-256 of the serialized model.
    pub model_digest: String,
    pub metrics: IterationMetrics,
    /// Explanation of train + validation rows.
    pub global_summary: SummaryDigest,
    /// Explanation of the `k` highest-scored test rows.
    pub top_k_summary: SummaryDigest,
    pub advisor: AdvisorFindings,
    pub guard: GuardOutcome,
    /// True when the guard rejected the iteration and its actions were
    /// rolled back.
    pub reverted: bool,
}

pub fn model_ref(index: usize) -> String {
    format!("models/iter-{index:03}.json")
}

fn model_digest(model: &BoostedEnsemble) -> Result<String, GbdtError> {
    let mut buf = Vec::new();
    gbdt::write_model(model, &mut buf)?;
    Ok(hex::encode(Sha256::digest(&buf)))
}

/// Content hash of a table: ids, features, labels and split tags.
pub fn dataset_fingerprint(table: &FeatureTable) -> String {
    let mut h = Sha256::new();
    for id in table.customer_ids() {
        h.update(id.as_bytes());
        h.update([0]);
    }
    for col in table.columns() {
        h.update(col.name.as_bytes());
        h.update([0]);
        for v in &col.values {
            match v {
                Some(x) => {
                    h.update([1]);
                    h.update(x.to_bits().to_le_bytes());
                }
                None => h.update([0]),
            }
        }
    }
    for l in table.labels() {
        h.update(l.to_bits().to_le_bytes());
    }
    for s in table.split() {
        h.update(s.as_str().as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AppliedAction {
    action: RefinementAction,
    /// For caps: the override in force before this action.
    previous_override: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Checkpoint {
    active_features: Vec<String>,
    label_overrides: BTreeMap<String, f64>,
    applied: Vec<AppliedAction>,
}

/// Everything that defines a session, independent of caches and sinks. Two
/// sessions with equal state behave identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub provenance: Provenance,
    pub fingerprint: String,
    pub config: SessionConfig,
    /// All dataset features, in column order.
    pub all_features: Vec<String>,
    /// Active features, in column order.
    pub active_features: Vec<String>,
    pub label_overrides: BTreeMap<String, f64>,
    pub iterations: Vec<IterationRecord>,
    /// Last accepted iteration.
    pub cursor: Option<usize>,
    /// Actions since the last iteration, in order (including undos).
    pub pending: Vec<RefinementAction>,
    applied: Vec<AppliedAction>,
    checkpoint: Checkpoint,
}

impl SessionState {
    /// Binds journals to the data and config they were recorded with.
    pub fn digest(&self) -> String {
        let config = serde_json::to_string(&self.config).expect("config serializes");
        let mut h = Sha256::new();
        h.update(self.provenance.to_string().as_bytes());
        h.update([0]);
        h.update(self.fingerprint.as_bytes());
        h.update([0]);
        h.update(config.as_bytes());
        hex::encode(&h.finalize()[..8])
    }

    /// Number of actions in effect that [`RefinementAction::Undo`] can revert.
    pub fn undo_depth(&self) -> usize {
        self.applied.len()
    }

    pub fn accepted(&self) -> Option<&IterationRecord> {
        self.cursor.map(|c| &self.iterations[c])
    }
}

/// Inputs of one iteration, detached from the session.
#[derive(Debug, Clone)]
pub struct IterationPlan {
    pub index: usize,
    pub actions: Vec<RefinementAction>,
    pub active_features: Vec<String>,
    pub label_overrides: BTreeMap<String, f64>,
    pub config: SessionConfig,
    /// `(index, validation NDCG)` of the last accepted iteration.
    pub reference: Option<(usize, Option<f64>)>,
}

/// A trained and explained iteration, ready to commit.
#[derive(Debug, Clone)]
pub struct IterationOutcome {
    pub record: IterationRecord,
    pub model: Arc<BoostedEnsemble>,
    pub global: Arc<GlobalShapSummary>,
    pub top_k: Arc<GlobalShapSummary>,
}

fn effective_labels(table: &FeatureTable, rows: &[usize], overrides: &BTreeMap<String, f64>) -> Vec<f64> {
    let ids = table.customer_ids();
    rows.iter()
        .map(|&r| overrides.get(&ids[r]).copied().unwrap_or(table.labels()[r]))
        .collect()
}

fn train_model(
    table: &FeatureTable,
    features: &[String],
    overrides: &BTreeMap<String, f64>,
    config: &TrainConfig,
) -> Result<(BoostedEnsemble, Vec<usize>, Vec<f64>), GbdtError> {
    let train = table.rows_in(Split::Train);
    let labels = effective_labels(table, &train, overrides);
    let set = TrainingSet::from_table_with_labels(table, &train, features, labels.clone())?;
    Ok((fit(&set, config)?, train, labels))
}

/// Explanation of train + validation rows.
fn global_summary(table: &FeatureTable, model: &BoostedEnsemble) -> Result<GlobalShapSummary, SessionError> {
    let rows: Vec<usize> =
        (0..table.n_rows()).filter(|&r| matches!(table.split()[r], Split::Train | Split::Validation)).collect();
    let refs: Vec<String> = rows.iter().map(|&r| table.customer_ids()[r].clone()).collect();
    Ok(summarize(model, &model.align(table, &rows)?, &refs)?)
}

fn top_k_summary(table: &FeatureTable, model: &BoostedEnsemble, k: usize) -> Result<GlobalShapSummary, SessionError> {
    let rows = table.rows_in(Split::Test);
    let refs: Vec<String> = rows.iter().map(|&r| table.customer_ids()[r].clone()).collect();
    Ok(top_scored_summary(model, &model.align(table, &rows)?, &refs, k)?)
}

impl IterationPlan {
    /// Trains, measures, explains and applies the guard. Pure in its inputs.
    pub fn execute(&self, table: &FeatureTable) -> Result<IterationOutcome, SessionError> {
        let (model, train_rows, train_labels) =
            train_model(table, &self.active_features, &self.label_overrides, &self.config.train)?;
        let rmse_train = gbdt::rmse(&model.predict(table, &train_rows)?, &train_labels);

        // Ranking quality is always judged against the recorded labels.
        let val = table.rows_in(Split::Validation);
        let ndcg_validation = match metrics::ndcg(&model.predict(table, &val)?, &table.labels_of(&val), None) {
            Ok(v) => Some(v),
            Err(MetricError::AllZeroLabels) => None,
            Err(e) => return Err(e.into()),
        };
        let test = table.rows_in(Split::Test);
        let test_scores = model.predict(table, &test)?;
        let test_labels = table.labels_of(&test);
        let k = self.config.k.min(test.len());
        let metrics = IterationMetrics {
            ndcg_validation,
            energy_at_k_test: metrics::energy_at_k(&test_scores, &test_labels, k)?,
            k,
            precision_at_k_test: metrics::precision_at_k(&test_scores, &test_labels, k)?,
            rmse_train,
        };

        let global = global_summary(table, &model)?;
        let top_k = top_k_summary(table, &model, k)?;
        let ids = table.customer_ids();
        let labelled: Vec<(String, f64)> =
            train_rows.iter().zip(&train_labels).map(|(&r, &l)| (ids[r].clone(), l)).collect();
        let advisor = advise(&global, &labelled, &self.config.advisor);

        let guard = match self.reference {
            None => GuardOutcome { status: GuardStatus::Baseline, reference: None, ndcg_drop: None },
            Some((reference, prev)) => match (prev, ndcg_validation) {
                (Some(prev), Some(new)) => GuardOutcome {
                    status: match metrics::guard(prev, new) {
                        GuardVerdict::Accept => GuardStatus::Accept,
                        GuardVerdict::Reject => GuardStatus::Reject,
                    },
                    reference: Some(reference),
                    ndcg_drop: Some(prev - new),
                },
                // Without a defined NDCG on both sides there is nothing to
                // guard against.
                _ => GuardOutcome { status: GuardStatus::Accept, reference: Some(reference), ndcg_drop: None },
            },
        };

        let record = IterationRecord {
            index: self.index,
            actions: self.actions.clone(),
            active_features: self.active_features.clone(),
            label_overrides: self.label_overrides.clone(),
            train_config: self.config.train.clone(),
            model_ref: model_ref(self.index),
            model_digest: model_digest(&model)?,
            metrics,
            global_summary: SummaryDigest::of(&global),
            top_k_summary: SummaryDigest::of(&top_k),
            advisor,
            reverted: !guard.accepted(),
            guard,
        };
        Ok(IterationOutcome { record, model: Arc::new(model), global: Arc::new(global), top_k: Arc::new(top_k) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub a: Option<f64>,
    pub b: Option<f64>,
    /// `b − a`
    pub delta: Option<f64>,
}

impl MetricDelta {
    fn new(a: Option<f64>, b: Option<f64>) -> Self {
        Self { a, b, delta: a.zip(b).map(|(a, b)| b - a) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceDelta {
    pub feature: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideDelta {
    pub customer_id: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
}

/// Side-by-side view of two iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: usize,
    pub b: usize,
    pub ndcg_validation: MetricDelta,
    pub energy_at_k_test: MetricDelta,
    pub rmse_train: MetricDelta,
    pub max_abs_phi: MetricDelta,
    /// Global mean |φ| per feature, dataset column order.
    pub importance: Vec<ImportanceDelta>,
    pub features_dropped: Vec<String>,
    pub features_restored: Vec<String>,
    pub label_overrides: Vec<OverrideDelta>,
}

/// A live session over a dataset. Cheap to share: caches sit behind locks
/// and reads take `&self`.
#[derive(Debug)]
pub struct Session {
    dataset: Arc<FeatureTable>,
    state: SessionState,
    models: Mutex<BTreeMap<usize, Arc<BoostedEnsemble>>>,
    summaries: Mutex<BTreeMap<usize, (Arc<GlobalShapSummary>, Arc<GlobalShapSummary>)>>,
    workdir: Option<PathBuf>,
    journal: Option<Journal>,
}

impl Session {
    pub fn new(dataset: Arc<FeatureTable>, config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        for tag in Split::ALL {
            if !dataset.has_split(tag) {
                return Err(SessionError::UnsplitDataset(tag));
            }
        }
        let features = dataset.feature_names();
        if features.is_empty() {
            return Err(SessionError::Training(GbdtError::NoFeatures));
        }
        let checkpoint =
            Checkpoint { active_features: features.clone(), label_overrides: BTreeMap::new(), applied: Vec::new() };
        let state = SessionState {
            provenance: dataset.provenance().clone(),
            fingerprint: dataset_fingerprint(&dataset),
            config,
            all_features: features.clone(),
            active_features: features,
            label_overrides: BTreeMap::new(),
            iterations: Vec::new(),
            cursor: None,
            pending: Vec::new(),
            applied: Vec::new(),
            checkpoint,
        };
        Ok(Self {
            dataset,
            state,
            models: Mutex::default(),
            summaries: Mutex::default(),
            workdir: None,
            journal: None,
        })
    }

    /// Saves each iteration's model under `dir/models/`.
    pub fn with_workdir(mut self, dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        std::fs::create_dir_all(dir.join("models"))?;
        self.workdir = Some(dir);
        Ok(self)
    }

    /// Starts journaling; writes the session header if the journal is new.
    pub fn with_journal(mut self, mut journal: Journal) -> Result<Self, SessionError> {
        if journal.next_seq() == 0 {
            journal.append(&self.state, EventBody::started(&self.state))?;
        }
        self.journal = Some(journal);
        Ok(self)
    }

    pub fn dataset(&self) -> &Arc<FeatureTable> {
        &self.dataset
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn config(&self) -> &SessionConfig {
        &self.state.config
    }

    pub fn iterations(&self) -> &[IterationRecord] {
        &self.state.iterations
    }

    pub fn iteration(&self, index: usize) -> Result<&IterationRecord, SessionError> {
        self.state.iterations.get(index).ok_or(SessionError::UnknownIteration(index))
    }

    pub fn workdir(&self) -> Option<&Path> {
        self.workdir.as_deref()
    }

    /// Current training label of a customer, after caps.
    pub fn effective_label(&self, customer_id: &str) -> Option<f64> {
        let row = self.dataset.row_of(customer_id)?;
        Some(self.state.label_overrides.get(customer_id).copied().unwrap_or(self.dataset.labels()[row]))
    }

    /// Checks an action against the current state without applying it.
    pub fn validate_action(&self, action: &RefinementAction) -> Result<(), SessionError> {
        let s = &self.state;
        match action {
            RefinementAction::CapLabel { customer_id, kwh } => {
                let row = self
                    .dataset
                    .row_of(customer_id)
                    .ok_or_else(|| SessionError::UnknownCustomer(customer_id.clone()))?;
                let invalid = |reason: String| SessionError::InvalidCap { customer_id: customer_id.clone(), reason };
                if !self.dataset.is_ntl(row) {
                    return Err(invalid("customer has no recorded NTL".into()));
                }
                let current = self.effective_label(customer_id).expect("row exists");
                if !(kwh.is_finite() && *kwh > 0.0) {
                    return Err(invalid(format!("cap must be a positive kWh value, got {kwh}")));
                }
                if *kwh >= current {
                    return Err(invalid(format!("cap {kwh} kWh is not below the current label {current} kWh")));
                }
            }
            RefinementAction::DropFeature { feature } => {
                if !s.all_features.contains(feature) {
                    return Err(SessionError::UnknownFeature(feature.clone()));
                }
                if !s.active_features.contains(feature) {
                    return Err(SessionError::InactiveFeature(feature.clone()));
                }
                if s.active_features.len() == 1 {
                    return Err(SessionError::LastFeature(feature.clone()));
                }
            }
            RefinementAction::RestoreFeature { feature } => {
                if !s.all_features.contains(feature) {
                    return Err(SessionError::UnknownFeature(feature.clone()));
                }
                if s.active_features.contains(feature) {
                    return Err(SessionError::AlreadyActive(feature.clone()));
                }
            }
            RefinementAction::Undo => {
                if s.applied.is_empty() {
                    return Err(SessionError::NothingToUndo);
                }
            }
        }
        Ok(())
    }

    /// Validates, journals and applies an action. It takes effect in the
    /// next iteration.
    pub fn apply(&mut self, action: RefinementAction) -> Result<(), SessionError> {
        self.validate_action(&action)?;
        if let Some(j) = self.journal.as_mut() {
            j.append(&self.state, EventBody::ActionApplied { action: action.clone() })?;
        }
        self.apply_unchecked(action);
        Ok(())
    }

    fn apply_unchecked(&mut self, action: RefinementAction) {
        let s = &mut self.state;
        s.pending.push(action.clone());
        match &action {
            RefinementAction::CapLabel { customer_id, kwh } => {
                let previous_override = s.label_overrides.insert(customer_id.clone(), *kwh);
                s.applied.push(AppliedAction { action, previous_override });
            }
            RefinementAction::DropFeature { feature } => {
                s.active_features.retain(|f| f != feature);
                s.applied.push(AppliedAction { action, previous_override: None });
            }
            RefinementAction::RestoreFeature { feature } => {
                s.active_features.push(feature.clone());
                let order = &s.all_features;
                s.active_features.sort_by_key(|f| order.iter().position(|o| o == f));
                s.applied.push(AppliedAction { action, previous_override: None });
            }
            RefinementAction::Undo => {
                let last = s.applied.pop().expect("validated non-empty");
                match last.action {
                    RefinementAction::CapLabel { customer_id, .. } => match last.previous_override {
                        Some(v) => {
                            s.label_overrides.insert(customer_id, v);
                        }
                        None => {
                            s.label_overrides.remove(&customer_id);
                        }
                    },
                    RefinementAction::DropFeature { feature } => {
                        s.active_features.push(feature);
                        let order = &s.all_features;
                        s.active_features.sort_by_key(|f| order.iter().position(|o| o == f));
                    }
                    RefinementAction::RestoreFeature { feature } => s.active_features.retain(|f| *f != feature),
                    RefinementAction::Undo => unreachable!("undo is never on the applied stack"),
                }
            }
        }
    }

    /// Snapshot of the inputs for the next iteration.
    pub fn plan(&self) -> IterationPlan {
        let s = &self.state;
        IterationPlan {
            index: s.iterations.len(),
            actions: s.pending.clone(),
            active_features: s.active_features.clone(),
            label_overrides: s.label_overrides.clone(),
            config: s.config.clone(),
            reference: s.accepted().map(|r| (r.index, r.metrics.ndcg_validation)),
        }
    }

    /// Records an executed plan. Fails if the session changed since the plan
    /// was taken.
    pub fn commit(&mut self, outcome: IterationOutcome) -> Result<&IterationRecord, SessionError> {
        self.check_record(&outcome.record).map_err(SessionError::StaleIteration)?;
        if let Some(dir) = &self.workdir {
            gbdt::save_model(&outcome.model, dir.join(&outcome.record.model_ref))?;
        }
        if let Some(j) = self.journal.as_mut() {
            j.append(&self.state, EventBody::IterationCompleted { record: Box::new(outcome.record.clone()) })?;
        }
        let index = outcome.record.index;
        self.models.lock().expect("model cache").insert(index, outcome.model);
        self.summaries.lock().expect("summary cache").insert(index, (outcome.global, outcome.top_k));
        self.commit_record(outcome.record);
        Ok(&self.state.iterations[index])
    }

    /// Plans, executes and commits one iteration.
    pub fn run_iteration(&mut self) -> Result<&IterationRecord, SessionError> {
        let outcome = self.plan().execute(&self.dataset)?;
        self.commit(outcome)
    }

    /// Consistency of a record with the current state.
    fn check_record(&self, record: &IterationRecord) -> Result<(), String> {
        let s = &self.state;
        if record.index != s.iterations.len() {
            return Err(format!("iteration {} out of sequence (expected {})", record.index, s.iterations.len()));
        }
        if record.actions != s.pending
            || record.active_features != s.active_features
            || record.label_overrides != s.label_overrides
            || record.train_config != s.config.train
        {
            return Err(format!("iteration {} does not match the session state", record.index));
        }
        let expected_reference = s.cursor;
        if record.guard.reference != expected_reference
            || (record.guard.status == GuardStatus::Baseline) != expected_reference.is_none()
            || record.reverted != !record.guard.accepted()
        {
            return Err(format!("iteration {} has an inconsistent guard outcome", record.index));
        }
        Ok(())
    }

    fn commit_record(&mut self, record: IterationRecord) {
        let s = &mut self.state;
        let index = record.index;
        let accepted = record.guard.accepted();
        s.iterations.push(record);
        s.pending.clear();
        if accepted {
            s.cursor = Some(index);
            s.checkpoint = Checkpoint {
                active_features: s.active_features.clone(),
                label_overrides: s.label_overrides.clone(),
                applied: s.applied.clone(),
            };
        } else {
            let cp = s.checkpoint.clone();
            s.active_features = cp.active_features;
            s.label_overrides = cp.label_overrides;
            s.applied = cp.applied;
        }
    }

    /// Model of an iteration: cached, loaded from the workdir, or retrained
    /// from the record (training is deterministic). The digest is verified.
    pub fn model(&self, index: usize) -> Result<Arc<BoostedEnsemble>, SessionError> {
        let record = self.iteration(index)?;
        if let Some(m) = self.models.lock().expect("model cache").get(&index) {
            return Ok(m.clone());
        }
        let mut model = None;
        if let Some(dir) = &self.workdir {
            let path = dir.join(&record.model_ref);
            if path.exists() {
                let m = gbdt::load_model(&path)?;
                if model_digest(&m)? == record.model_digest {
                    model = Some(m);
                }
            }
        }
        let model = match model {
            Some(m) => m,
            None => {
                let (m, _, _) = train_model(
                    &self.dataset,
                    &record.active_features,
                    &record.label_overrides,
                    &record.train_config,
                )?;
                if model_digest(&m)? != record.model_digest {
                    return Err(SessionError::Training(GbdtError::CorruptModel(format!(
                        "retrained model for iteration {index} does not match its recorded digest"
                    ))));
                }
                m
            }
        };
        let model = Arc::new(model);
        self.models.lock().expect("model cache").insert(index, model.clone());
        Ok(model)
    }

    /// Global (train + validation) and top-k test explanations of an
    /// iteration, computed on demand.
    pub fn summaries(
        &self,
        index: usize,
    ) -> Result<(Arc<GlobalShapSummary>, Arc<GlobalShapSummary>), SessionError> {
        if let Some(s) = self.summaries.lock().expect("summary cache").get(&index) {
            return Ok(s.clone());
        }
        let model = self.model(index)?;
        let record = self.iteration(index)?;
        let global = Arc::new(global_summary(&self.dataset, &model)?);
        let top_k = Arc::new(top_k_summary(&self.dataset, &model, record.metrics.k)?);
        let pair = (global, top_k);
        self.summaries.lock().expect("summary cache").insert(index, pair.clone());
        Ok(pair)
    }

    /// Explanation of the `k` test rows an iteration's model ranks highest.
    /// The iteration's own `k` is served from cache.
    pub fn top_k(&self, index: usize, k: usize) -> Result<Arc<GlobalShapSummary>, SessionError> {
        if k == self.iteration(index)?.metrics.k {
            return Ok(self.summaries(index)?.1);
        }
        Ok(Arc::new(top_k_summary(&self.dataset, &*self.model(index)?, k)?))
    }

    pub fn compare(&self, a: usize, b: usize) -> Result<ComparisonReport, SessionError> {
        let (ra, rb) = (self.iteration(a)?, self.iteration(b)?);
        let importance = self
            .state
            .all_features
            .iter()
            .filter_map(|f| {
                let (ia, ib) = (ra.global_summary.importance_of(f), rb.global_summary.importance_of(f));
                (ia.is_some() || ib.is_some()).then(|| ImportanceDelta { feature: f.clone(), a: ia, b: ib })
            })
            .collect();
        let mut ids: Vec<&String> = ra.label_overrides.keys().chain(rb.label_overrides.keys()).collect();
        ids.sort();
        ids.dedup();
        let label_overrides = ids
            .into_iter()
            .filter_map(|id| {
                let (oa, ob) = (ra.label_overrides.get(id).copied(), rb.label_overrides.get(id).copied());
                (oa != ob).then(|| OverrideDelta { customer_id: id.clone(), a: oa, b: ob })
            })
            .collect();
        Ok(ComparisonReport {
            a,
            b,
            ndcg_validation: MetricDelta::new(ra.metrics.ndcg_validation, rb.metrics.ndcg_validation),
            energy_at_k_test: MetricDelta::new(Some(ra.metrics.energy_at_k_test), Some(rb.metrics.energy_at_k_test)),
            rmse_train: MetricDelta::new(Some(ra.metrics.rmse_train), Some(rb.metrics.rmse_train)),
            max_abs_phi: MetricDelta::new(
                Some(ra.global_summary.max_abs_phi),
                Some(rb.global_summary.max_abs_phi),
            ),
            importance,
            features_dropped: ra
                .active_features
                .iter()
                .filter(|f| !rb.active_features.contains(f))
                .cloned()
                .collect(),
            features_restored: rb
                .active_features
                .iter()
                .filter(|f| !ra.active_features.contains(f))
                .cloned()
                .collect(),
            label_overrides,
        })
    }

    /// Rebuilds a session from a journal, without retraining. An empty or
    /// absent journal yields a fresh session with `config`. Appending
    /// continues to the same file.
    pub fn resume(
        path: impl AsRef<Path>,
        dataset: Arc<FeatureTable>,
        config: SessionConfig,
        clock: Clock,
    ) -> Result<Self, SessionError> {
        let path = path.as_ref();
        let events = if path.exists() { journal::read_events(path)? } else { Vec::new() };
        let session = Self::replay(&events, dataset, config)?;
        let journal = Journal::append_to(path, clock, events.len() as u64)?;
        session.with_journal(journal)
    }

    /// Applies journal events to a new session. `config` is used only when
    /// `events` is empty.
    pub fn replay(
        events: &[(usize, JournalEvent)],
        dataset: Arc<FeatureTable>,
        config: SessionConfig,
    ) -> Result<Self, SessionError> {
        let Some((first_line, first)) = events.first() else {
            return Self::new(dataset, config);
        };
        let corrupt = |line: usize, reason: String| SessionError::CorruptJournal { line, reason };
        let EventBody::SessionStarted { config, .. } = &first.event else {
            return Err(corrupt(*first_line, "journal does not start with session_started".into()));
        };
        let mut session = Self::new(dataset, config.clone())?;
        let digest = session.state.digest();
        for (i, (line, ev)) in events.iter().enumerate() {
            if ev.seq != i as u64 {
                return Err(corrupt(*line, format!("sequence number {} (expected {i})", ev.seq)));
            }
            if ev.digest != digest {
                return Err(SessionError::JournalMismatch { journal: ev.digest.clone(), current: digest });
            }
            match &ev.event {
                EventBody::SessionStarted { .. } if i == 0 => {}
                EventBody::SessionStarted { .. } => {
                    return Err(corrupt(*line, "repeated session_started".into()));
                }
                EventBody::ActionApplied { action } => {
                    session
                        .validate_action(action)
                        .map_err(|e| corrupt(*line, format!("action cannot be applied: {e}")))?;
                    session.apply_unchecked(action.clone());
                }
                EventBody::IterationCompleted { record } => {
                    session.check_record(record).map_err(|e| corrupt(*line, e))?;
                    session.commit_record((**record).clone());
                }
            }
        }
        Ok(session)
    }
}
