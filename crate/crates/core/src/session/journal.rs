//! Append-only JSON-lines event log. One event per line; replaying the
//! events reproduces the session state exactly.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Provenance;

use super::{IterationRecord, RefinementAction, SessionConfig, SessionError, SessionState};

/// Timestamp written by [`Clock::Fixed`].
pub const DETERMINISTIC_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clock {
    #[default]
    Wall,
    /// Constant timestamps, for byte-reproducible journals.
    Fixed,
}

impl Clock {
    fn now(self) -> String {
        match self {
            Clock::Wall => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            Clock::Fixed => DETERMINISTIC_TIMESTAMP.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    SessionStarted {
        config: SessionConfig,
        provenance: Provenance,
        fingerprint: String,
        features: Vec<String>,
    },
    ActionApplied {
        action: RefinementAction,
    },
    IterationCompleted {
        record: Box<IterationRecord>,
    },
}

impl EventBody {
    pub(super) fn started(state: &SessionState) -> Self {
        EventBody::SessionStarted {
            config: state.config.clone(),
            provenance: state.provenance.clone(),
            fingerprint: state.fingerprint.clone(),
            features: state.all_features.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEvent {
    pub seq: u64,
    pub timestamp: String,
    /// Number of completed iterations when the event was written.
    pub iteration: usize,
    /// Digest of provenance, data fingerprint and config.
    pub digest: String,
    pub event: EventBody,
}

/// Journal sink. Each event is flushed as soon as it is written.
pub struct Journal {
    sink: Box<dyn Write + Send + Sync>,
    clock: Clock,
    next_seq: u64,
}

impl std::fmt::Debug for Journal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Journal").field("clock", &self.clock).field("next_seq", &self.next_seq).finish()
    }
}

impl Journal {
    pub fn new(sink: impl Write + Send + Sync + 'static, clock: Clock) -> Self {
        Self { sink: Box::new(sink), clock, next_seq: 0 }
    }

    /// Creates (truncating) a journal file.
    pub fn create(path: impl AsRef<Path>, clock: Clock) -> Result<Self, SessionError> {
        Ok(Self::new(File::create(path)?, clock))
    }

    /// Appends to an existing journal that already holds `existing` events.
    pub fn append_to(path: impl AsRef<Path>, clock: Clock, existing: u64) -> Result<Self, SessionError> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { sink: Box::new(file), clock, next_seq: existing })
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub(super) fn append(&mut self, state: &SessionState, event: EventBody) -> Result<(), SessionError> {
        let ev = JournalEvent {
            seq: self.next_seq,
            timestamp: self.clock.now(),
            iteration: state.iterations.len(),
            digest: state.digest(),
            event,
        };
        let mut line = serde_json::to_vec(&ev).expect("events serialize");
        line.push(b'\n');
        self.sink.write_all(&line)?;
        self.sink.flush()?;
        self.next_seq += 1;
        Ok(())
    }
}

/// Parses a journal, returning each event with its 1-based line number.
/// Blank lines are skipped.
pub fn parse_events(input: impl BufRead) -> Result<Vec<(usize, JournalEvent)>, SessionError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| SessionError::CorruptJournal { line: line_no, reason: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let ev: JournalEvent = serde_json::from_str(&line)
            .map_err(|e| SessionError::CorruptJournal { line: line_no, reason: e.to_string() })?;
        out.push((line_no, ev));
    }
    Ok(out)
}

pub fn read_events(path: impl AsRef<Path>) -> Result<Vec<(usize, JournalEvent)>, SessionError> {
    parse_events(BufReader::new(File::open(path)?))
}
