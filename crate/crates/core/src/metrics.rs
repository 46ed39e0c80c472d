//! Energy-weighted ranking metrics and the iteration acceptance guard.
//!
//! Gains are recovered kWh and rank `i` (from 1) is discounted by
//! `log2(i + 1)`. Score ties are broken by row position so every metric is
//! deterministic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An iteration is rejected when validation NDCG falls by at least this much.
pub const GUARD_MARGIN: f64 = 0.1;

/// Absorbs representation error in `prev − new` so that a drop written as
/// 0.1 rejects even when the float subtraction lands a few ulps short.
const GUARD_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty gain list")]
    EmptyList,
    #[error("truncation depth {depth} exceeds list length {len}")]
    DepthOutOfRange { depth: usize, len: usize },
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no positive label: ideal DCG is zero and NDCG is undefined")]
    AllZeroLabels,
}

/// Row positions sorted by descending score; ties keep the lower position
/// first.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// A ranked list: `ordering` is a permutation of row positions and `gains`
/// are the labels in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedEval {
    pub ordering: Vec<usize>,
    pub gains: Vec<f64>,
    pub depth: usize,
}

impl RankedEval {
    pub fn new(scores: &[f64], labels: &[f64], depth: Option<usize>) -> Result<Self, MetricError> {
        check_lengths(scores, labels)?;
        let ordering = ranking(scores);
        let gains = ordering.iter().map(|&i| labels[i]).collect();
        let depth = depth.unwrap_or(scores.len());
        if depth > scores.len() {
            return Err(MetricError::DepthOutOfRange { depth, len: scores.len() });
        }
        Ok(Self { ordering, gains, depth })
    }

    pub fn dcg(&self) -> Result<f64, MetricError> {
        dcg(&self.gains, self.depth)
    }
}

fn check_lengths(scores: &[f64], labels: &[f64]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    Ok(())
}

/// `Σ_{i=1..t} gains_i / log2(i + 1)`
pub fn dcg(gains: &[f64], depth: usize) -> Result<f64, MetricError> {
    if gains.is_empty() {
        return Err(MetricError::EmptyList);
    }
    if depth > gains.len() {
        return Err(MetricError::DepthOutOfRange { depth, len: gains.len() });
    }
    Ok(gains[..depth]
        .iter()
        .enumerate()
        .map(|(i, g)| g / ((i + 2) as f64).log2())
        .sum())
}

/// DCG of the score ordering over DCG of the label-descending ordering.
/// `depth` defaults to the full list.
pub fn ndcg(scores: &[f64], labels: &[f64], depth: Option<usize>) -> Result<f64, MetricError> {
    let ranked = RankedEval::new(scores, labels, depth)?;
    if labels.iter().all(|&l| l <= 0.0) {
        return Err(MetricError::AllZeroLabels);
    }
    let mut ideal = labels.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let ideal_dcg = dcg(&ideal, ranked.depth)?;
    if ideal_dcg <= 0.0 {
        return Err(MetricError::AllZeroLabels);
    }
    if ranked.gains[..ranked.depth] == ideal[..ranked.depth] {
        return Ok(1.0);
    }
    Ok(ranked.dcg()? / ideal_dcg)
}

/// Total label among the `k` highest-scoring rows.
pub fn energy_at_k(scores: &[f64], labels: &[f64], k: usize) -> Result<f64, MetricError> {
    check_lengths(scores, labels)?;
    if k > scores.len() {
        return Err(MetricError::DepthOutOfRange { depth: k, len: scores.len() });
    }
    Ok(ranking(scores).iter().take(k).map(|&i| labels[i]).sum())
}

/// Fraction of the top `k` rows with a positive label. Diagnostic only.
pub fn precision_at_k(scores: &[f64], labels: &[f64], k: usize) -> Result<f64, MetricError> {
    check_lengths(scores, labels)?;
    if k == 0 || k > scores.len() {
        return Err(MetricError::DepthOutOfRange { depth: k, len: scores.len() });
    }
    let hits = ranking(scores).iter().take(k).filter(|&&i| labels[i] > 0.0).count();
    Ok(hits as f64 / k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardVerdict {
    Accept,
    Reject,
}

/// Rejects iff validation NDCG dropped by at least [`GUARD_MARGIN`].
pub fn guard(prev_ndcg: f64, new_ndcg: f64) -> GuardVerdict {
    if prev_ndcg - new_ndcg >= GUARD_MARGIN - GUARD_SLACK {
        GuardVerdict::Reject
    } else {
        GuardVerdict::Accept
    }
}
