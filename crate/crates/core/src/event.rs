//! The event log every session produces. Session records persist it and
//! metrics and replay are computed from it.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Request,
    Response,
    RapParsed,
    AnalysisParsed,
    QuestionsParsed,
    AnswersSubmitted,
    PhaseChanged,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    #[serde(rename = "seq")]
    pub sequence: u64,
    pub kind: EventKind,
    pub at: DateTime<Utc>,
    pub payload: Value,
}

impl SessionEvent {
    /// Equality ignoring the timestamp.
    pub fn same_content(&self, other: &SessionEvent) -> bool {
        self.sequence == other.sequence && self.kind == other.kind && self.payload == other.payload
    }
}

/// Values carried in `Error` event payloads under `"kind"`.
pub mod error_kind {
    pub const BACKEND_FAILURE: &str = "backend_failure";
    pub const MALFORMED_RAP: &str = "malformed_rap";
    pub const REPAIR_EXHAUSTED: &str = "repair_exhausted";
}
