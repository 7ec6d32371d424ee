//! The planning loop: make a RAP, analyze what it is missing, ask the
//! collaborator, fold the answers into the next RAP, and stop once the
//! analysis (or the question phase) answers `none`.
//!
//! Each phase is one exchange inside a single growing conversation. A
//! [`DialogueSession`] owns that conversation, every RAP version it
//! produced, and the event log that session records persist.

mod answers;
mod parse;
mod session;
mod walk;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::LlmError;
use crate::store::StoreError;

pub use answers::{AnswerProvider, FnAnswers, OrdinalAnswers, ProviderError, QueuedAnswers, RefuseAll};
pub use parse::{is_none_sentinel, parse_analysis, parse_questions, parse_questions_from};
pub use session::{
    run_to_completion, start_session, Artifact, Checkpoint, DialogueSession, PhaseOutcome,
    RunResult, Turn,
};
pub use walk::{verify_phase_walk, PhaseWalkError, WalkEnd};

/// Text sent to the model in place of a refused answer.
pub const REFUSAL_TEXT: &str = "I cannot answer this question.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopPhase {
    MakeRap,
    Analyze,
    Question,
    AwaitAnswers,
    Done,
}

impl LoopPhase {
    pub fn can_transition_to(self, next: LoopPhase) -> bool {
        use LoopPhase::*;
        matches!(
            (self, next),
            (MakeRap, Analyze)
                | (Analyze, Done)
                | (Analyze, Question)
                | (Question, Done)
                | (Question, AwaitAnswers)
                | (AwaitAnswers, MakeRap)
        )
    }

    /// Phases in which [`DialogueSession::advance`] talks to the model.
    pub fn is_exchange(self) -> bool {
        matches!(self, LoopPhase::MakeRap | LoopPhase::Analyze | LoopPhase::Question)
    }
}

impl std::fmt::Display for LoopPhase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LoopPhase::MakeRap => "make_rap",
            LoopPhase::Analyze => "analyze",
            LoopPhase::Question => "question",
            LoopPhase::AwaitAnswers => "await_answers",
            LoopPhase::Done => "done",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    Done,
    /// The iteration cap fired before the model declared the plan clear.
    Truncated,
}

impl std::fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SessionStatus::Running => "running",
            SessionStatus::Done => "done",
            SessionStatus::Truncated => "truncated",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub max_iterations: u32,
    pub temperature: f32,
    pub model: String,
    pub repair_attempts: u32,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10,
            temperature: 0.0,
            model: "gpt-4-0314".to_string(),
            repair_attempts: 1,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), DialogueError> {
        if self.max_iterations < 1 {
            return Err(DialogueError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(DialogueError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub raw_text: String,
    pub missing_items: Vec<String>,
    pub is_none: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub text: String,
}

impl Question {
    /// Session-wide ordinal encoded in the id (`q3` is 3).
    pub fn ordinal(&self) -> Option<u32> {
        self.id.strip_prefix('q')?.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub raw_text: String,
    pub questions: Vec<Question>,
    pub is_none: bool,
}

/// An answer, or the collaborator's refusal to give one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AnswerText {
    Text(String),
    Refused,
}

impl AnswerText {
    pub const REFUSED_TOKEN: &'static str = "REFUSED";

    /// `"REFUSED"` and blank input both mean refusal.
    pub fn from_input(raw: &str) -> Self {
        let t = raw.trim();
        if t.is_empty() || t == Self::REFUSED_TOKEN {
            AnswerText::Refused
        } else {
            AnswerText::Text(t.to_string())
        }
    }

    pub fn as_wire(&self) -> &str {
        match self {
            AnswerText::Text(t) => t,
            AnswerText::Refused => Self::REFUSED_TOKEN,
        }
    }
}

impl Serialize for AnswerText {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_wire())
    }
}

impl<'de> Deserialize<'de> for AnswerText {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Ok(AnswerText::from_input(&raw))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub question_id: String,
    pub text: AnswerText,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSet {
    pub answers: Vec<Answer>,
}

impl AnswerSet {
    pub fn new(answers: Vec<Answer>) -> Self {
        Self { answers }
    }

    pub fn push(&mut self, question_id: impl Into<String>, text: AnswerText) {
        self.answers.push(Answer {
            question_id: question_id.into(),
            text,
        });
    }
}

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("command is empty")]
    EmptyCommand,
    #[error("invalid session configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot advance a session in phase {0}")]
    IllegalPhase(LoopPhase),
    #[error("expected phase {expected}, session is in {actual}")]
    PhaseViolation { expected: LoopPhase, actual: LoopPhase },
    #[error("no pending question with id {0}")]
    UnknownQuestionId(String),
    #[error("question {0} answered more than once")]
    DuplicateAnswer(String),
    #[error("missing answers for {0:?}")]
    MissingAnswer(Vec<String>),
    #[error("backend failure: {0}")]
    BackendFailure(#[from] LlmError),
    #[error("no readable RAP after {attempts} repair attempt(s): {error}")]
    RepairExhausted { attempts: u32, error: String },
    #[error("answer provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Store(#[from] StoreError),
}
