//! Session registry. Each session has one writer slot (mutations fail fast
//! with 409 instead of queueing) and a read/write lock around the session
//! itself that is held only briefly, never across training.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::Duration;

use ntl_core::session::{Clock, Journal, Session, SessionConfig, DETERMINISTIC_TIMESTAMP};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, OwnedMutexGuard};

use crate::dataset::DatasetRef;
use crate::error::ApiError;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const META_FILE: &str = "session.json";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Holds dataset files and one directory per session.
    pub data_dir: PathBuf,
    pub training_timeout: Duration,
    /// `None` allows any origin.
    pub cors_origin: Option<String>,
    pub clock: Clock,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self { data_dir: data_dir.into(), training_timeout: Duration::from_secs(600), cors_origin: None, clock: Clock::Wall }
    }
}

/// Persisted next to the journal so sessions survive a restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub dataset: DatasetRef,
    pub created_at: String,
}

pub struct SessionSlot {
    pub meta: SessionMeta,
    session: RwLock<Session>,
    writer: Arc<Mutex<()>>,
}

impl SessionSlot {
    pub fn read(&self) -> Result<RwLockReadGuard<'_, Session>, ApiError> {
        self.session.read().map_err(|_| ApiError::Internal("session lock poisoned".into()))
    }

    pub fn write(&self) -> Result<RwLockWriteGuard<'_, Session>, ApiError> {
        self.session.write().map_err(|_| ApiError::Internal("session lock poisoned".into()))
    }

    /// Claims the writer slot, or fails with 409 if another mutation holds it.
    pub fn claim(&self) -> Result<OwnedMutexGuard<()>, ApiError> {
        self.writer.clone().try_lock_owned().map_err(|_| ApiError::Busy(self.meta.id.clone()))
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    sessions: RwLock<BTreeMap<String, Arc<SessionSlot>>>,
}

impl AppState {
    /// Opens the data directory and reloads every session found in it.
    /// Sessions that fail to reload are skipped with a warning.
    pub fn open(config: ServiceConfig) -> std::io::Result<Self> {
        std::fs::create_dir_all(config.data_dir.join("sessions"))?;
        let state = Self { config, sessions: RwLock::new(BTreeMap::new()) };
        for entry in std::fs::read_dir(state.sessions_dir())? {
            let dir = entry?.path();
            match state.reload(&dir) {
                Ok(slot) => {
                    tracing::info!(id = %slot.meta.id, "restored session");
                    state.insert(slot);
                }
                Err(e) => tracing::warn!(dir = %dir.display(), error = %e, "skipping session directory"),
            }
        }
        Ok(state)
    }

    fn sessions_dir(&self) -> PathBuf {
        self.config.data_dir.join("sessions")
    }

    fn reload(&self, dir: &Path) -> Result<SessionSlot, ApiError> {
        let meta: SessionMeta = serde_json::from_slice(&std::fs::read(dir.join(META_FILE)).map_err(io)?)
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let dataset = meta.dataset.load(&self.config.data_dir)?;
        let session = Session::resume(dir.join(JOURNAL_FILE), dataset, SessionConfig::default(), self.config.clock)?
            .with_workdir(dir)?;
        Ok(SessionSlot { meta, session: RwLock::new(session), writer: Arc::new(Mutex::new(())) })
    }

    fn insert(&self, slot: SessionSlot) -> Arc<SessionSlot> {
        let slot = Arc::new(slot);
        self.sessions.write().expect("registry lock").insert(slot.meta.id.clone(), slot.clone());
        slot
    }

    pub fn get(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.sessions
            .read()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    pub fn list(&self) -> Vec<Arc<SessionSlot>> {
        self.sessions.read().expect("registry lock").values().cloned().collect()
    }

    /// Creates and registers a session. Blocking (loads data, writes files).
    pub fn create(&self, dataset: DatasetRef, config: SessionConfig) -> Result<Arc<SessionSlot>, ApiError> {
        config.validate()?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = self.sessions_dir().join(&id);
        std::fs::create_dir_all(&dir).map_err(io)?;
        let result = (|| {
            let dataset = dataset.persist_upload(&self.config.data_dir, Path::new("sessions").join(&id).join("dataset.csv"))?;
            let table = dataset.load(&self.config.data_dir)?;
            let session = Session::new(table, config)?.with_workdir(&dir)?;
            let created_at = match self.config.clock {
                Clock::Wall => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
                Clock::Fixed => DETERMINISTIC_TIMESTAMP.to_string(),
            };
            let meta = SessionMeta { id: id.clone(), dataset, created_at };
            std::fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&meta).expect("meta serializes")).map_err(io)?;
            let journal = Journal::create(dir.join(JOURNAL_FILE), self.config.clock)?;
            Ok::<_, ApiError>(SessionSlot {
                meta,
                session: RwLock::new(session.with_journal(journal)?),
                writer: Arc::new(Mutex::new(())),
            })
        })();
        match result {
            Ok(slot) => Ok(self.insert(slot)),
            Err(e) => {
                let _ = std::fs::remove_dir_all(&dir);
                Err(e)
            }
        }
    }
}

fn io(e: std::io::Error) -> ApiError {
    ApiError::Internal(e.to_string())
}
