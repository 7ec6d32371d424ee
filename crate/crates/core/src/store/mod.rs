//! Session records: one JSON-Lines file per session. Line 1 is a header,
//! every following line one [`SessionEvent`].

mod replay;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{verify_phase_walk, DialogueSession, LoopPhase, SessionConfig, SessionStatus};
use crate::event::{EventKind, SessionEvent};
use crate::prompt::{PromptBundle, PromptComponent, PromptError};

pub use replay::{replay, ReplayError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session {0} already exists")]
    AlreadyExists(String),
    #[error("corrupt record {path}, line {line}: {message}")]
    CorruptRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("event #{found} does not follow #{last}")]
    SequenceGap { last: u64, found: u64 },
    #[error("storage failure at {path}: {source}")]
    StorageFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn storage(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::StorageFailure {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub schema_version: u32,
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub command: String,
    pub config: SessionConfig,
    pub prompts: Vec<PromptComponent>,
}

impl RecordHeader {
    pub fn for_session(session: &DialogueSession) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            session_id: session.session_id().to_string(),
            created_at: Utc::now(),
            command: session.command().to_string(),
            config: session.config().clone(),
            prompts: session.bundle().components().to_vec(),
        }
    }

    pub fn bundle(&self) -> Result<PromptBundle, PromptError> {
        PromptBundle::from_components(self.prompts.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub header: RecordHeader,
    pub events: Vec<SessionEvent>,
}

impl SessionRecord {
    pub fn session_id(&self) -> &str {
        &self.header.session_id
    }

    /// Appends in memory, enforcing contiguous sequence numbers.
    pub fn append(&mut self, event: SessionEvent) -> Result<(), StoreError> {
        let last = self.events.last().map_or(0, |e| e.sequence);
        if event.sequence != last + 1 {
            return Err(StoreError::SequenceGap {
                last,
                found: event.sequence,
            });
        }
        self.events.push(event);
        Ok(())
    }

    /// Status carried by the last phase change.
    pub fn status(&self) -> SessionStatus {
        self.events
            .iter()
            .rev()
            .find(|e| e.kind == EventKind::PhaseChanged)
            .and_then(|e| serde_json::from_value(e.payload["status"].clone()).ok())
            .unwrap_or(SessionStatus::Running)
    }

    pub fn phase(&self) -> LoopPhase {
        self.events
            .iter()
            .rev()
            .find(|e| e.kind == EventKind::PhaseChanged)
            .and_then(|e| serde_json::from_value(e.payload["to"].clone()).ok())
            .unwrap_or(LoopPhase::MakeRap)
    }

    pub fn summary(&self, path: PathBuf) -> SessionSummary {
        SessionSummary {
            session_id: self.header.session_id.clone(),
            created_at: self.header.created_at,
            command: self.header.command.clone(),
            status: self.status(),
            rap_versions: self
                .events
                .iter()
                .filter(|e| e.kind == EventKind::RapParsed)
                .count(),
            events: self.events.len(),
            path,
        }
    }

    /// The JSON-Lines text of the record.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses and checks a record. `path` only labels errors.
    pub fn parse(text: &str, path: &Path) -> Result<Self, StoreError> {
        let corrupt = |line: usize, message: String| StoreError::CorruptRecord {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.split_inclusive('\n').enumerate().peekable();
        let (_, first) = lines.next().ok_or_else(|| corrupt(1, "empty file".into()))?;
        let header: RecordHeader =
            serde_json::from_str(first.trim_end()).map_err(|e| corrupt(1, e.to_string()))?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(corrupt(
                1,
                format!("unsupported schema_version {}", header.schema_version),
            ));
        }
        let mut record = SessionRecord {
            header,
            events: Vec::new(),
        };
        while let Some((i, raw)) = lines.next() {
            let line = i + 1;
            let body = raw.trim_end();
            if body.is_empty() {
                continue;
            }
            let event: SessionEvent = match serde_json::from_str(body) {
                Ok(e) => e,
                // A crash mid-write leaves at most one unterminated tail line.
                Err(_) if lines.peek().is_none() && !raw.ends_with('\n') => {
                    log::warn!("{}: dropping torn final line {line}", path.display());
                    break;
                }
                Err(e) => return Err(corrupt(line, e.to_string())),
            };
            record.append(event).map_err(|e| corrupt(line, e.to_string()))?;
        }
        verify_phase_walk(&record.events).map_err(|e| corrupt(0, e.to_string()))?;
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub command: String,
    pub status: SessionStatus,
    pub rap_versions: usize,
    pub events: usize,
    pub path: PathBuf,
}

/// A directory of session records.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    /// Opens `root`, creating it if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(storage(&root))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, session_id: &str) -> PathBuf {
        self.root.join(format!("{session_id}.jsonl"))
    }

    fn check_id(session_id: &str) -> Result<(), StoreError> {
        let ok = !session_id.is_empty()
            && session_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if ok {
            Ok(())
        } else {
            Err(StoreError::NotFound(session_id.to_string()))
        }
    }

    /// Writes the header of a new record.
    pub fn create(&self, header: &RecordHeader) -> Result<(), StoreError> {
        Self::check_id(&header.session_id)?;
        let path = self.path_for(&header.session_id);
        let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(StoreError::AlreadyExists(header.session_id.clone()))
            }
            Err(e) => return Err(storage(&path)(e)),
        };
        let mut line = serde_json::to_string(header).expect("header serializes");
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(storage(&path))?;
        file.sync_all().map_err(storage(&path))
    }

    /// Writes a whole record, replacing nothing.
    pub fn save(&self, record: &SessionRecord) -> Result<PathBuf, StoreError> {
        self.create(&record.header)?;
        let path = self.path_for(record.session_id());
        self.append_lines(&path, &record.events)?;
        Ok(path)
    }

    /// Durably appends `events`, which must continue the record on disk
    /// whose last sequence number is `last`.
    pub fn append(&self, session_id: &str, last: u64, events: &[SessionEvent]) -> Result<(), StoreError> {
        Self::check_id(session_id)?;
        let mut expect = last;
        for e in events {
            if e.sequence != expect + 1 {
                return Err(StoreError::SequenceGap {
                    last: expect,
                    found: e.sequence,
                });
            }
            expect = e.sequence;
        }
        let path = self.path_for(session_id);
        if !path.exists() {
            return Err(StoreError::NotFound(session_id.to_string()));
        }
        self.append_lines(&path, events)
    }

    fn append_lines(&self, path: &Path, events: &[SessionEvent]) -> Result<(), StoreError> {
        if events.is_empty() {
            return Ok(());
        }
        let mut buf = String::new();
        for e in events {
            buf.push_str(&serde_json::to_string(e).expect("event serializes"));
            buf.push('\n');
        }
        let mut file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(storage(path))?;
        file.write_all(buf.as_bytes()).map_err(storage(path))?;
        file.sync_data().map_err(storage(path))
    }

    pub fn load_session(&self, session_id: &str) -> Result<SessionRecord, StoreError> {
        Self::check_id(session_id)?;
        let path = self.path_for(session_id);
        if !path.exists() {
            return Err(StoreError::NotFound(session_id.to_string()));
        }
        load_file(&path)
    }

    /// Summaries of every readable record, oldest first. Unreadable files
    /// are skipped with a warning.
    pub fn list_sessions(&self) -> Result<Vec<SessionSummary>, StoreError> {
        let mut out = Vec::new();
        let entries = std::fs::read_dir(&self.root).map_err(storage(&self.root))?;
        for entry in entries {
            let path = entry.map_err(storage(&self.root))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            match load_file(&path) {
                Ok(record) => out.push(record.summary(path)),
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        out.sort_by(|a, b| {
            a.created_at
                .cmp(&b.created_at)
                .then_with(|| a.session_id.cmp(&b.session_id))
        });
        Ok(out)
    }
}

/// Reads a record from any path.
pub fn load_file(path: &Path) -> Result<SessionRecord, StoreError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => StoreError::NotFound(path.display().to_string()),
        _ => storage(path)(e),
    })?;
    let mut bytes = Vec::new();
    std::io::Read::read_to_end(&mut &file, &mut bytes).map_err(storage(path))?;
    let text = String::from_utf8(bytes).map_err(|e| StoreError::CorruptRecord {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    SessionRecord::parse(&text, path)
}

/// Persists a running session's new events at every checkpoint.
#[derive(Debug)]
pub struct SessionRecorder {
    store: SessionStore,
    session_id: String,
    written: u64,
}

impl SessionRecorder {
    /// Creates the record for a fresh session.
    pub fn create(store: SessionStore, session: &DialogueSession) -> Result<Self, StoreError> {
        store.create(&RecordHeader::for_session(session))?;
        let mut recorder = Self {
            store,
            session_id: session.session_id().to_string(),
            written: 0,
        };
        recorder.flush(session)?;
        Ok(recorder)
    }

    /// Continues an existing record that already holds `written` events.
    pub fn resume(store: SessionStore, session_id: &str, written: u64) -> Self {
        Self {
            store,
            session_id: session_id.to_string(),
            written,
        }
    }

    pub fn path(&self) -> PathBuf {
        self.store.path_for(&self.session_id)
    }

    pub fn written(&self) -> u64 {
        self.written
    }

    pub fn flush(&mut self, session: &DialogueSession) -> Result<(), StoreError> {
        let pending = &session.events()[self.written as usize..];
        self.store.append(&self.session_id, self.written, pending)?;
        self.written += pending.len() as u64;
        Ok(())
    }
}

impl crate::dialogue::Checkpoint for SessionRecorder {
    fn checkpoint(&mut self, session: &DialogueSession) -> Result<(), StoreError> {
        self.flush(session)
    }
}
