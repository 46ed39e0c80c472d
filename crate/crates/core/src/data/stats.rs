use serde::{Deserialize, Serialize};

use super::FeatureTable;

/// Per-column summary. Moments are `None` when every cell is missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub mean: Option<f64>,
    pub missing_rate: f64,
    pub present: usize,
}

pub fn column_stats(table: &FeatureTable) -> Vec<ColumnStats> {
    table
        .columns()
        .iter()
        .map(|col| {
            let present: Vec<f64> = col.values.iter().flatten().copied().collect();
            let n = col.values.len();
            let missing_rate = if n == 0 { 0.0 } else { (n - present.len()) as f64 / n as f64 };
            let (min, max, mean) = if present.is_empty() {
                (None, None, None)
            } else {
                let min = present.iter().copied().fold(f64::INFINITY, f64::min);
                let max = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean = present.iter().sum::<f64>() / present.len() as f64;
                (Some(min), Some(max), Some(mean))
            };
            ColumnStats { name: col.name.clone(), min, max, mean, missing_rate, present: present.len() }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureColumn, Provenance, Split};

    #[test]
    fn moments_skip_missing() {
        let t = FeatureTable::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![
                FeatureColumn::new("gone", vec![None; 4]),
                FeatureColumn::new("x", vec![Some(1.0), Some(2.0), None, Some(3.0)]),
            ],
            vec![0.0; 4],
            vec![Split::Train; 4],
            Provenance::InMemory,
        )
        .unwrap();
        let s = column_stats(&t);
        assert_eq!(s[0].missing_rate, 1.0);
        assert_eq!((s[0].min, s[0].max, s[0].mean), (None, None, None));
        assert_eq!((s[1].min, s[1].max, s[1].mean), (Some(1.0), Some(3.0), Some(2.0)));
        assert_eq!(s[1].missing_rate, 0.25);
    }
}
