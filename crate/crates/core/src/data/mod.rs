//! Tabular customer corpus: feature columns with first-class missing cells,
//! kWh labels and train/validation/test tags.

mod csv_io;
mod split;
mod stats;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use csv_io::{load_csv, ColumnRoles, read_csv, write_csv, write_csv_to};
pub use split::{stratified_split, SplitSpec};
pub use stats::{column_stats, ColumnStats};
pub use synth::{
    generate_split_corpus, generate_synthetic, GeneratorManifest, SynthConfig, SyntheticCorpus,
    FEATURE_CATALOG,
};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed csv at line {line}: {reason}")]
    MalformedCsv { line: usize, reason: String },
    #[error("non-numeric cell {value:?} in column `{column}` at row {row}")]
    NonNumericCell { column: String, row: usize, value: String },
    #[error("negative label {value} at row {row}")]
    NegativeLabel { row: usize, value: f64 },
    #[error("invalid split spec: {0}")]
    InvalidSplitSpec(String),
    #[error("stratum `{stratum}` cannot appear in the {partition} partition")]
    EmptyStratum { stratum: &'static str, partition: Split },
    #[error("table needs at least {needed} rows, has {actual}")]
    TooFewRows { needed: usize, actual: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("inconsistent table: {0}")]
    Inconsistent(String),
    #[error("unknown column(s): {0:?}")]
    MissingColumn(Vec<String>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Partition tag of a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split tag `{other}`")),
        }
    }
}

/// Where a table came from. Used to bind journals to the data they were
/// recorded against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Generated { seed: u64, config_digest: String },
    File { sha256: String },
    InMemory,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Generated { seed, config_digest } => {
                write!(f, "generated:seed={seed}:cfg={config_digest}")
            }
            Provenance::File { sha256 } => write!(f, "file:sha256={sha256}"),
            Provenance::InMemory => f.write_str("in-memory"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    /// `None` is a missing cell.
    pub values: Vec<Option<f64>>,
}

impl FeatureColumn {
    pub fn new(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self { name: name.into(), values }
    }
}

/// Immutable columnar corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    customer_ids: Vec<String>,
    columns: Vec<FeatureColumn>,
    labels: Vec<f64>,
    split: Vec<Split>,
    provenance: Provenance,
}

impl FeatureTable {
    pub fn new(
        customer_ids: Vec<String>,
        columns: Vec<FeatureColumn>,
        labels: Vec<f64>,
        split: Vec<Split>,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        let n = customer_ids.len();
        if labels.len() != n {
            return Err(DataError::Inconsistent(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        if split.len() != n {
            return Err(DataError::Inconsistent(format!(
                "{} split tags for {n} rows",
                split.len()
            )));
        }
        let mut seen = HashSet::new();
        for col in &columns {
            if col.values.len() != n {
                return Err(DataError::Inconsistent(format!(
                    "column `{}` has {} cells for {n} rows",
                    col.name,
                    col.values.len()
                )));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(DataError::Inconsistent(format!("duplicate column `{}`", col.name)));
            }
            if col.values.iter().flatten().any(|v| !v.is_finite()) {
                return Err(DataError::Inconsistent(format!(
                    "column `{}` holds a non-finite value",
                    col.name
                )));
            }
        }
        for (row, &value) in labels.iter().enumerate() {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(DataError::NegativeLabel { row, value });
            }
        }
        let mut ids = HashSet::new();
        for id in &customer_ids {
            if !ids.insert(id.as_str()) {
                return Err(DataError::Inconsistent(format!("duplicate customer id `{id}`")));
            }
        }
        Ok(Self { customer_ids, columns, labels, split, provenance })
    }

    pub fn n_rows(&self) -> usize {
        self.customer_ids.len()
    }

    pub fn customer_ids(&self) -> &[String] {
        &self.customer_ids
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&FeatureColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn split(&self) -> &[Split] {
        &self.split
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn is_ntl(&self, row: usize) -> bool {
        self.labels[row] > 0.0
    }

    pub fn ntl_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0.0).count()
    }

    pub fn row_of(&self, customer_id: &str) -> Option<usize> {
        self.customer_ids.iter().position(|c| c == customer_id)
    }

    /// Row indices carrying `tag`, in table order.
    pub fn rows_in(&self, tag: Split) -> Vec<usize> {
        (0..self.n_rows()).filter(|&r| self.split[r] == tag).collect()
    }

    pub fn has_split(&self, tag: Split) -> bool {
        self.split.iter().any(|&s| s == tag)
    }

    pub fn with_split(&self, split: Vec<Split>) -> Result<Self, DataError> {
        Self::new(
            self.customer_ids.clone(),
            self.columns.clone(),
            self.labels.clone(),
            split,
            self.provenance.clone(),
        )
    }

    /// Row-major view of `rows` over the named features, in the given order.
    pub fn matrix(&self, features: &[String], rows: &[usize]) -> Result<RowMatrix, DataError> {
        let mut missing = Vec::new();
        let mut cols = Vec::with_capacity(features.len());
        for name in features {
            match self.column(name) {
                Some(c) => cols.push(c),
                None => missing.push(name.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(DataError::MissingColumn(missing));
        }
        let mut cells = Vec::with_capacity(features.len() * rows.len());
        for &r in rows {
            cells.extend(cols.iter().map(|c| c.values[r]));
        }
        Ok(RowMatrix { n_features: features.len(), cells })
    }

    pub fn labels_of(&self, rows: &[usize]) -> Vec<f64> {
        rows.iter().map(|&r| self.labels[r]).collect()
    }
}

/// Dense row-major matrix of optional cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMatrix {
    n_features: usize,
    cells: Vec<Option<f64>>,
}

impl RowMatrix {
    pub fn from_rows(n_features: usize, rows: &[Vec<Option<f64>>]) -> Self {
        let mut cells = Vec::with_capacity(rows.len() * n_features);
        for row in rows {
            assert_eq!(row.len(), n_features, "ragged row");
            cells.extend_from_slice(row);
        }
        Self { n_features, cells }
    }

    pub fn n_rows(&self) -> usize {
        if self.n_features == 0 {
            0
        } else {
            self.cells.len() / self.n_features
        }
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        &self.cells[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[Option<f64>]> {
        self.cells.chunks(self.n_features.max(1))
    }
}
