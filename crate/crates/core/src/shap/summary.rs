use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::RowMatrix;
use crate::gbdt::BoostedEnsemble;

use super::treeshap::TreeExplainer;
use super::ShapError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    /// Mean |φ| over the explained rows, kWh.
    pub mean_abs_phi: f64,
}

/// One beeswarm dot. `normalized_value` is the raw value min-max scaled per
/// feature over the explained rows; missing raw values stay `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmPoint {
    pub feature: String,
    pub row_ref: String,
    pub phi: f64,
    pub raw_value: Option<f64>,
    pub normalized_value: Option<f64>,
}

/// Per-row attributions over a set of rows plus their aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalShapSummary {
    /// Model feature order; `phi` and `raw` rows are aligned to it.
    pub feature_names: Vec<String>,
    /// Sorted by descending mean |φ|, ties in model order.
    pub importance: Vec<FeatureImportance>,
    pub base_value: f64,
    pub row_refs: Vec<String>,
    pub predictions: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub raw: Vec<Vec<Option<f64>>>,
}

impl GlobalShapSummary {
    pub fn n_rows(&self) -> usize {
        self.row_refs.len()
    }

    pub fn importance_of(&self, feature: &str) -> Option<f64> {
        self.importance.iter().find(|i| i.feature == feature).map(|i| i.mean_abs_phi)
    }

    /// Share of total mean |φ| carried by each feature (importance order).
    pub fn importance_shares(&self) -> Vec<(String, f64)> {
        let total: f64 = self.importance.iter().map(|i| i.mean_abs_phi).sum();
        self.importance
            .iter()
            .map(|i| {
                let share = if total > 0.0 { i.mean_abs_phi / total } else { 0.0 };
                (i.feature.clone(), share)
            })
            .collect()
    }

    /// Largest |φ| over every explained (row, feature) pair, with its
    /// location.
    pub fn max_abs_phi(&self) -> Option<(f64, String, String)> {
        let mut best: Option<(f64, usize, usize)> = None;
        for (r, row) in self.phi.iter().enumerate() {
            for (f, v) in row.iter().enumerate() {
                if best.map_or(true, |(b, _, _)| v.abs() > b) {
                    best = Some((v.abs(), r, f));
                }
            }
        }
        best.map(|(v, r, f)| (v, self.row_refs[r].clone(), self.feature_names[f].clone()))
    }

    /// φ column of one feature across rows.
    pub fn phi_column(&self, feature: &str) -> Option<Vec<f64>> {
        let f = self.feature_names.iter().position(|n| n == feature)?;
        Some(self.phi.iter().map(|row| row[f]).collect())
    }

    pub fn raw_column(&self, feature: &str) -> Option<Vec<Option<f64>>> {
        let f = self.feature_names.iter().position(|n| n == feature)?;
        Some(self.raw.iter().map(|row| row[f]).collect())
    }

    /// Raw values min-max scaled per feature over the explained rows, aligned
    /// with `raw`. Missing stays `None`; a constant feature maps to 0.5.
    pub fn normalized_raw(&self) -> Vec<Vec<Option<f64>>> {
        let bounds: Vec<(f64, f64)> = (0..self.feature_names.len())
            .map(|f| {
                self.raw.iter().filter_map(|row| row[f]).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
            })
            .collect();
        self.raw
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&bounds)
                    .map(|(raw, &(lo, hi))| raw.map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }))
                    .collect()
            })
            .collect()
    }

    /// Beeswarm points, features in importance order, rows in summary order.
    pub fn points(&self) -> Vec<BeeswarmPoint> {
        let normalized = self.normalized_raw();
        let mut out = Vec::with_capacity(self.n_rows() * self.feature_names.len());
        for imp in &self.importance {
            let f = self.feature_names.iter().position(|n| *n == imp.feature).expect("known feature");
            for (r, row_ref) in self.row_refs.iter().enumerate() {
                out.push(BeeswarmPoint {
                    feature: imp.feature.clone(),
                    row_ref: row_ref.clone(),
                    phi: self.phi[r][f],
                    raw_value: self.raw[r][f],
                    normalized_value: normalized[r][f],
                });
            }
        }
        out
    }
}

/// Explains every row and aggregates. `row_refs` labels the rows (customer
/// ids) and must match `rows` in length.
pub fn summarize(
    model: &BoostedEnsemble,
    rows: &RowMatrix,
    row_refs: &[String],
) -> Result<GlobalShapSummary, ShapError> {
    if rows.n_rows() == 0 {
        return Err(ShapError::NoRows);
    }
    if rows.n_features() != model.n_features() {
        return Err(ShapError::RowWidth { expected: model.n_features(), actual: rows.n_features() });
    }
    assert_eq!(row_refs.len(), rows.n_rows(), "one row_ref per row");
    let explainer = TreeExplainer::new(model);
    let p = model.n_features();
    let mut phi = Vec::with_capacity(rows.n_rows());
    let mut predictions = Vec::with_capacity(rows.n_rows());
    let mut raw = Vec::with_capacity(rows.n_rows());
    for row in rows.rows() {
        let report = explainer.explain(row);
        predictions.push(report.prediction);
        phi.push(report.phi);
        raw.push(row.to_vec());
    }

    let n = rows.n_rows() as f64;
    let mut mean_abs = vec![0.0; p];
    for row in &phi {
        for (acc, v) in mean_abs.iter_mut().zip(row) {
            *acc += v.abs();
        }
    }
    let mut order: Vec<usize> = (0..p).collect();
    for m in &mut mean_abs {
        *m /= n;
    }
    order.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]).then(a.cmp(&b)));
    let importance = order
        .iter()
        .map(|&f| FeatureImportance { feature: model.feature_names[f].clone(), mean_abs_phi: mean_abs[f] })
        .collect();

    Ok(GlobalShapSummary {
        feature_names: model.feature_names.clone(),
        importance,
        base_value: explainer.base_value(),
        row_refs: row_refs.to_vec(),
        predictions,
        phi,
        raw,
    })
}

/// Indices of the `k` highest-scoring rows; ties keep input order.
pub fn top_scored_rows(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// [`summarize`] restricted to the `k` rows the model scores highest.
pub fn top_scored_summary(
    model: &BoostedEnsemble,
    rows: &RowMatrix,
    row_refs: &[String],
    k: usize,
) -> Result<GlobalShapSummary, ShapError> {
    let scores = model.predict_matrix(rows);
    let keep = top_scored_rows(&scores, k.min(rows.n_rows()));
    let picked: Vec<Vec<Option<f64>>> = keep.iter().map(|&i| rows.row(i).to_vec()).collect();
    let refs: Vec<String> = keep.iter().map(|&i| row_refs[i].clone()).collect();
    summarize(model, &RowMatrix::from_rows(rows.n_features(), &picked), &refs)
}

/// `feature,row_ref,phi,raw_value,normalized_value`; missing raw values are
/// empty cells.
pub fn write_points_csv<W: Write>(summary: &GlobalShapSummary, out: W) -> Result<(), ShapError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "row_ref", "phi", "raw_value", "normalized_value"])
        .map_err(csv_err)?;
    for p in summary.points() {
        w.write_record([
            p.feature,
            p.row_ref,
            p.phi.to_string(),
            p.raw_value.map(|v| v.to_string()).unwrap_or_default(),
            p.normalized_value.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `feature,mean_abs_phi`, most important first.
pub fn write_importance_csv<W: Write>(summary: &GlobalShapSummary, out: W) -> Result<(), ShapError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["feature", "mean_abs_phi"]).map_err(csv_err)?;
    for imp in &summary.importance {
        w.write_record([imp.feature.clone(), imp.mean_abs_phi.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> ShapError {
    ShapError::Io(std::io::Error::new(std::io::ErrorKind::Other, e))
}
