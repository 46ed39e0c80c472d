//! Non-binding detectors for the three refinement fundamentals: outlier
//! labels, features with negligible attribution, and redundant correlated
//! feature pairs. Findings are suggestions; only explicit actions change a
//! session.

use serde::{Deserialize, Serialize};

use crate::shap::GlobalShapSummary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvisorConfig {
    /// Flag an NTL label at least this many times the next largest one.
    pub outlier_ratio: f64,
    /// Flag an NTL label whose median/MAD z-score exceeds this.
    pub outlier_robust_z: f64,
    /// Flag features whose share of total mean |φ| is below this.
    pub low_importance_share: f64,
    /// Minimum |Pearson r| between raw values of a pair.
    pub min_correlation: f64,
    /// Minimum agreement of the pair's φ dependences (see
    /// [`find_correlated_pairs`]).
    pub min_phi_rank_agreement: f64,
}

impl Default for AdvisorConfig {
    fn default() -> Self {
        Self {
            outlier_ratio: 3.0,
            outlier_robust_z: 5.0,
            low_importance_share: 0.01,
            min_correlation: 0.9,
            min_phi_rank_agreement: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierFinding {
    pub customer_id: String,
    pub label_kwh: f64,
    pub ratio_to_second_max: f64,
    /// `(label − median) / (1.4826 · MAD)`; 0 when the MAD is 0.
    pub robust_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowImportanceFinding {
    pub feature: String,
    pub importance_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedPair {
    pub feature_a: String,
    pub feature_b: String,
    pub pearson_r: f64,
    pub phi_rank_agreement: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdvisorFindings {
    pub outliers: Vec<OutlierFinding>,
    pub low_importance: Vec<LowImportanceFinding>,
    pub correlated_pairs: Vec<CorrelatedPair>,
}

/// A single finding, for presenting all findings in priority order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    Outlier(OutlierFinding),
    LowImportance(LowImportanceFinding),
    CorrelatedPair(CorrelatedPair),
}

impl AdvisorFindings {
    pub fn is_empty(&self) -> bool {
        self.outliers.is_empty() && self.low_importance.is_empty() && self.correlated_pairs.is_empty()
    }

    /// Label bias comes before simplification: outliers first, then
    /// low-importance features, then correlated pairs.
    pub fn ordered(&self) -> Vec<Finding> {
        self.outliers
            .iter()
            .cloned()
            .map(Finding::Outlier)
            .chain(self.low_importance.iter().cloned().map(Finding::LowImportance))
            .chain(self.correlated_pairs.iter().cloned().map(Finding::CorrelatedPair))
            .collect()
    }

    pub fn has_pair(&self, a: &str, b: &str) -> bool {
        self.correlated_pairs.iter().any(|p| {
            (p.feature_a == a && p.feature_b == b) || (p.feature_a == b && p.feature_b == a)
        })
    }
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Outlying positive labels among `(customer_id, label)` pairs. Zero labels
/// are ignored.
pub fn find_outliers(labels: &[(String, f64)], cfg: &AdvisorConfig) -> Vec<OutlierFinding> {
    let ntl: Vec<(&str, f64)> =
        labels.iter().filter(|(_, l)| *l > 0.0).map(|(id, l)| (id.as_str(), *l)).collect();
    if ntl.len() < 2 {
        return Vec::new();
    }
    let mut sorted: Vec<f64> = ntl.iter().map(|(_, l)| *l).collect();
    sorted.sort_by(f64::total_cmp);
    let med = median(&sorted);
    let mut dev: Vec<f64> = sorted.iter().map(|l| (l - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = median(&dev);
    let (top, runner_up) = (sorted[sorted.len() - 1], sorted[sorted.len() - 2]);

    let mut out: Vec<OutlierFinding> = ntl
        .iter()
        .filter_map(|&(id, label)| {
            // Largest label among the others.
            let other_max = if label == top { runner_up } else { top };
            let ratio = label / other_max;
            let z = if mad > 0.0 { (label - med) / (1.4826 * mad) } else { 0.0 };
            (ratio >= cfg.outlier_ratio || z > cfg.outlier_robust_z).then(|| OutlierFinding {
                customer_id: id.to_string(),
                label_kwh: label,
                ratio_to_second_max: ratio,
                robust_z: z,
            })
        })
        .collect();
    out.sort_by(|a, b| b.label_kwh.total_cmp(&a.label_kwh).then(a.customer_id.cmp(&b.customer_id)));
    out
}

pub fn find_low_importance(summary: &GlobalShapSummary, cfg: &AdvisorConfig) -> Vec<LowImportanceFinding> {
    let mut out: Vec<LowImportanceFinding> = summary
        .importance_shares()
        .into_iter()
        .filter(|(_, share)| *share < cfg.low_importance_share)
        .map(|(feature, importance_share)| LowImportanceFinding { feature, importance_share })
        .collect();
    out.sort_by(|a, b| a.importance_share.total_cmp(&b.importance_share));
    out
}

/// Pearson correlation over rows where both values are present. `None`
/// when fewer than three such rows exist or either side is constant.
pub fn pearson(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let pairs: Vec<(f64, f64)> =
        a.iter().zip(b).filter_map(|(x, y)| Some(((*x)?, (*y)?))).collect();
    if pairs.len() < 3 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    let ra: Vec<Option<f64>> = average_ranks(a).into_iter().map(Some).collect();
    let rb: Vec<Option<f64>> = average_ranks(b).into_iter().map(Some).collect();
    pearson(&ra, &rb)
}

/// Spearman correlation between a feature's raw values and its φ, over rows
/// where the value is present: how consistently the feature pushes
/// predictions up (positive) or down (negative) as its value grows.
pub fn phi_dependence(raw: &[Option<f64>], phi: &[f64]) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) =
        raw.iter().zip(phi).filter_map(|(r, p)| r.map(|r| (r, *p))).unzip();
    spearman(&x, &y)
}

/// Pairs whose raw values are strongly correlated and whose attributions
/// follow their values the same way. The agreement score is the weaker of
/// the two φ dependences, negated when their directions disagree with the
/// sign of the raw correlation.
pub fn find_correlated_pairs(summary: &GlobalShapSummary, cfg: &AdvisorConfig) -> Vec<CorrelatedPair> {
    let names = &summary.feature_names;
    let raw: Vec<Vec<Option<f64>>> =
        (0..names.len()).map(|f| summary.raw.iter().map(|r| r[f]).collect()).collect();
    let phi: Vec<Vec<f64>> =
        (0..names.len()).map(|f| summary.phi.iter().map(|r| r[f]).collect()).collect();
    let dependence: Vec<Option<f64>> = (0..names.len()).map(|f| phi_dependence(&raw[f], &phi[f])).collect();
    let mut out = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            let Some(r) = pearson(&raw[i], &raw[j]) else { continue };
            if r.abs() <= cfg.min_correlation {
                continue;
            }
            let (Some(di), Some(dj)) = (dependence[i], dependence[j]) else { continue };
            let consistent = (di * dj).signum() == r.signum();
            let strength = di.abs().min(dj.abs());
            let agreement = if consistent { strength } else { -strength };
            if agreement > cfg.min_phi_rank_agreement {
                out.push(CorrelatedPair {
                    feature_a: names[i].clone(),
                    feature_b: names[j].clone(),
                    pearson_r: r,
                    phi_rank_agreement: agreement,
                });
            }
        }
    }
    out.sort_by(|a, b| b.pearson_r.abs().total_cmp(&a.pearson_r.abs()));
    out
}

/// Runs all detectors. `labels` are the (effective) training labels keyed by
/// customer id; `summary` explains the current model.
pub fn advise(summary: &GlobalShapSummary, labels: &[(String, f64)], cfg: &AdvisorConfig) -> AdvisorFindings {
    AdvisorFindings {
        outliers: find_outliers(labels, cfg),
        low_importance: find_low_importance(summary, cfg),
        correlated_pairs: find_correlated_pairs(summary, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shap::FeatureImportance;

    fn labels(values: &[f64]) -> Vec<(String, f64)> {
        values.iter().enumerate().map(|(i, v)| (format!("c{i}"), *v)).collect()
    }

    #[test]
    fn ratio_rule_flags_planted_label() {
        let mut v: Vec<f64> = (1..=40).map(|i| 1000.0 * i as f64).collect();
        v.push(50_000.0);
        v.push(260_000.0);
        v.extend([0.0; 100]);
        let found = find_outliers(&labels(&v), &AdvisorConfig::default());
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].label_kwh, 260_000.0);
        assert_eq!(found[0].ratio_to_second_max, 5.2);
        assert!(found[0].robust_z > 5.0);
    }

    #[test]
    fn capped_label_no_longer_flagged() {
        let mut v: Vec<f64> = (1..=40).map(|i| 1000.0 * i as f64).collect();
        v.push(50_000.0);
        v.push(66_000.0);
        assert!(find_outliers(&labels(&v), &AdvisorConfig::default()).is_empty());
    }

    #[test]
    fn robust_z_rule() {
        // Tight cluster plus one far value that is under 3× the runner-up.
        let mut v: Vec<f64> = (90..=110).map(f64::from).collect();
        v.push(250.0);
        let found = find_outliers(&labels(&v), &AdvisorConfig::default());
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].label_kwh, 250.0);
        assert!(found[0].ratio_to_second_max < 3.0);
    }

    #[test]
    fn pearson_and_spearman() {
        let a = [Some(1.0), Some(2.0), Some(3.0), None, Some(5.0)];
        let b = [Some(2.0), Some(4.0), Some(6.0), Some(1.0), Some(10.0)];
        assert!((pearson(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(pearson(&[Some(1.0), Some(1.0), Some(1.0)], &[Some(1.0), Some(2.0), Some(3.0)]), None);
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[10.0, 100.0, 1000.0, 1e4]).unwrap();
        assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn findings_ordered_outliers_first() {
        let f = AdvisorFindings {
            outliers: vec![OutlierFinding {
                customer_id: "c".into(),
                label_kwh: 9.0,
                ratio_to_second_max: 4.0,
                robust_z: 9.0,
            }],
            low_importance: vec![LowImportanceFinding { feature: "x".into(), importance_share: 0.0 }],
            correlated_pairs: vec![],
        };
        let ordered = f.ordered();
        assert!(matches!(ordered[0], Finding::Outlier(_)));
        assert!(matches!(ordered[1], Finding::LowImportance(_)));
    }

    #[test]
    fn low_importance_share() {
        let s = GlobalShapSummary {
            feature_names: vec!["a".into(), "b".into(), "c".into()],
            importance: vec![
                FeatureImportance { feature: "a".into(), mean_abs_phi: 95.0 },
                FeatureImportance { feature: "b".into(), mean_abs_phi: 4.5 },
                FeatureImportance { feature: "c".into(), mean_abs_phi: 0.5 },
            ],
            base_value: 0.0,
            row_refs: vec![],
            predictions: vec![],
            phi: vec![],
            raw: vec![],
        };
        let low = find_low_importance(&s, &AdvisorConfig::default());
        assert_eq!(low.len(), 1);
        assert_eq!(low[0].feature, "c");
        assert!((low[0].importance_share - 0.005).abs() < 1e-12);
    }
}
