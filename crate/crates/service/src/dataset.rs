//! Where a session's data comes from, and how to load it again on restart.

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use ntl_core::data::{
    generate_split_corpus, load_csv, stratified_split, DataError, FeatureTable, Split, SplitSpec, SynthConfig,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("dataset path {0:?} must be relative to the data directory and must not contain `..`")]
    PathOutsideDataDir(PathBuf),
    #[error("dataset file {path:?}: {source}")]
    Load { path: PathBuf, source: DataError },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dataset reference as accepted by `POST /sessions` and stored with each
/// session. Uploads are written into the session directory and stored as a
/// `path` reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetRef {
    /// A CSV under the data directory. Files without validation/test rows are
    /// split with `split` (or the default split).
    Path {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<SplitSpec>,
    },
    Synthetic {
        #[serde(default)]
        config: SynthConfig,
        #[serde(default)]
        split: SplitSpec,
    },
    /// CSV text sent in the request body.
    Upload {
        csv: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        split: Option<SplitSpec>,
    },
}

/// Loads a CSV and assigns a stratified split when the file has none.
pub fn load_csv_with_split(path: &Path, split: Option<&SplitSpec>) -> Result<FeatureTable, DatasetError> {
    let table = load_csv(path, None).map_err(|source| DatasetError::Load { path: path.to_path_buf(), source })?;
    ensure_split(table, split)
}

fn ensure_split(table: FeatureTable, split: Option<&SplitSpec>) -> Result<FeatureTable, DatasetError> {
    let unsplit = !table.has_split(Split::Validation) && !table.has_split(Split::Test);
    match (split, unsplit) {
        (Some(spec), _) => Ok(stratified_split(&table, spec)?),
        (None, true) => Ok(stratified_split(&table, &SplitSpec::default())?),
        (None, false) => Ok(table),
    }
}

/// Resolves a client-supplied path against the data directory.
pub fn resolve(data_dir: &Path, path: &Path) -> Result<PathBuf, DatasetError> {
    let confined = path.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if !confined {
        return Err(DatasetError::PathOutsideDataDir(path.to_path_buf()));
    }
    Ok(data_dir.join(path))
}

impl DatasetRef {
    /// Loads the table. Uploads must be persisted first (see
    /// [`DatasetRef::persist_upload`]).
    pub fn load(&self, data_dir: &Path) -> Result<Arc<FeatureTable>, DatasetError> {
        let table = match self {
            DatasetRef::Path { path, split } => load_csv_with_split(&resolve(data_dir, path)?, split.as_ref())?,
            DatasetRef::Synthetic { config, split } => generate_split_corpus(config, split)?.table,
            DatasetRef::Upload { .. } => unreachable!("uploads are persisted before loading"),
        };
        Ok(Arc::new(table))
    }

    /// Writes uploaded CSV text to `dest` (relative to the data directory)
    /// and returns the equivalent path reference.
    pub fn persist_upload(self, data_dir: &Path, dest: PathBuf) -> Result<Self, DatasetError> {
        match self {
            DatasetRef::Upload { csv, split } => {
                std::fs::write(data_dir.join(&dest), csv)?;
                Ok(DatasetRef::Path { path: dest, split })
            }
            other => Ok(other),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_escaping_paths() {
        let dir = Path::new("/srv/data");
        assert!(resolve(dir, Path::new("../etc/passwd")).is_err());
        assert!(resolve(dir, Path::new("/etc/passwd")).is_err());
        assert_eq!(resolve(dir, Path::new("./a/b.csv")).unwrap(), Path::new("/srv/data/./a/b.csv"));
    }

    #[test]
    fn wire_shape() {
        let r: DatasetRef = serde_json::from_str(r#"{"kind":"synthetic","config":{"n_customers":500}}"#).unwrap();
        match r {
            DatasetRef::Synthetic { config, split } => {
                assert_eq!(config.n_customers, 500);
                assert_eq!(split, SplitSpec::default());
            }
            other => panic!("{other:?}"),
        }
    }
}
