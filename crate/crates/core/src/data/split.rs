use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, FeatureTable, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// (train, validation, test)
    pub fractions: [f64; 3],
    /// Stratify on the NTL / non-NTL flag.
    pub stratify: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { fractions: [0.8, 0.1, 0.1], stratify: true, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(DataError::InvalidSplitSpec(format!(
                "every fraction must lie in (0, 1), got {:?}",
                self.fractions
            )));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DataError::InvalidSplitSpec(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`; ties on the
/// remainder go to the earlier partition.
pub(crate) fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Reassigns split tags with a seeded shuffle inside each stratum. Row order
/// (and any timestamp it encodes) plays no role.
pub fn stratified_split(table: &FeatureTable, spec: &SplitSpec) -> Result<FeatureTable, DataError> {
    spec.validate()?;
    if table.n_rows() < 10 {
        return Err(DataError::TooFewRows { needed: 10, actual: table.n_rows() });
    }

    let strata: Vec<(&'static str, Vec<usize>)> = if spec.stratify {
        let (ntl, clean): (Vec<usize>, Vec<usize>) =
            (0..table.n_rows()).partition(|&r| table.is_ntl(r));
        vec![("ntl", ntl), ("non-ntl", clean)]
    } else {
        vec![("all", (0..table.n_rows()).collect())]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut tags = vec![Split::Train; table.n_rows()];
    for (name, mut rows) in strata {
        let counts = apportion(rows.len(), &spec.fractions);
        if let Some(p) = counts.iter().position(|&c| c == 0) {
            return Err(DataError::EmptyStratum { stratum: name, partition: Split::ALL[p] });
        }
        rows.shuffle(&mut rng);
        let mut it = rows.into_iter();
        for (tag, count) in Split::ALL.iter().zip(counts) {
            for r in it.by_ref().take(count) {
                tags[r] = *tag;
            }
        }
    }
    table.with_split(tags)
}
