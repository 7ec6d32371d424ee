//! Session metrics, before/after plan comparison, coverage comparison
//! between two plans, and batch experiments over scripted or live trials.

mod experiment;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{DialogueError, DialogueSession, SessionStatus};
use crate::event::{EventKind, SessionEvent};
use crate::llm::LlmError;
use crate::rap::{diff, key_vocabulary, parse_steps_value, RapDiff, RobotActionPlan};
use crate::store::{SessionRecord, StoreError};

pub use experiment::{
    run_experiment, Annotations, ExperimentFile, ExperimentOptions, ExperimentReport,
    ExperimentSpec, ScriptedTrials, TaskBackend, TaskReport, TrialReport,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("session is not finished: {0}")]
    IncompleteSession(String),
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("cannot read {path}: {message}")]
    Input { path: String, message: String },
    #[error(transparent)]
    Dialogue(#[from] DialogueError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Backend(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub iterations: u32,
    pub question_turns: u32,
    pub questions_total: u32,
    pub final_status: SessionStatus,
    pub tokens_estimated: u64,
}

/// Metrics of whatever the log covers, finished or not.
pub fn metrics_from_events(events: &[SessionEvent]) -> SessionMetrics {
    let mut m = SessionMetrics {
        iterations: 0,
        question_turns: 0,
        questions_total: 0,
        final_status: SessionStatus::Running,
        tokens_estimated: 0,
    };
    for e in events {
        match e.kind {
            EventKind::RapParsed => m.iterations += 1,
            EventKind::QuestionsParsed => {
                let n = e.payload["questions"]["questions"]
                    .as_array()
                    .map_or(0, |q| q.len() as u32);
                let none = e.payload["questions"]["is_none"].as_bool().unwrap_or(false);
                if !none && n > 0 {
                    m.question_turns += 1;
                    m.questions_total += n;
                }
            }
            EventKind::Request => {
                m.tokens_estimated += e.payload["tokens_estimated"].as_u64().unwrap_or(0)
            }
            EventKind::PhaseChanged => {
                if let Ok(s) = serde_json::from_value(e.payload["status"].clone()) {
                    m.final_status = s;
                }
            }
            _ => {}
        }
    }
    m
}

fn finished(events: &[SessionEvent]) -> Result<SessionMetrics, EvalError> {
    let m = metrics_from_events(events);
    match m.final_status {
        SessionStatus::Running => Err(EvalError::IncompleteSession(format!(
            "{} RAP version(s) so far",
            m.iterations
        ))),
        _ => Ok(m),
    }
}

pub fn compute_metrics(session: &DialogueSession) -> Result<SessionMetrics, EvalError> {
    finished(session.events())
}

pub fn record_metrics(record: &SessionRecord) -> Result<SessionMetrics, EvalError> {
    finished(&record.events)
}

/// Truncates to two decimals, so 8/3 prints as `2.66`.
pub fn format_2dp(value: f64) -> String {
    let hundredths = (value * 100.0 + 1e-9).floor();
    format!("{:.2}", hundredths / 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub trials: usize,
    pub mean_iterations: f64,
    pub mean_question_turns: f64,
    pub mean_questions: f64,
    pub rows: Vec<SessionMetrics>,
}

impl Aggregate {
    pub fn mean_iterations_2dp(&self) -> String {
        format_2dp(self.mean_iterations)
    }

    pub fn mean_questions_2dp(&self) -> String {
        format_2dp(self.mean_questions)
    }

    pub fn mean_question_turns_2dp(&self) -> String {
        format_2dp(self.mean_question_turns)
    }
}

pub fn aggregate(metrics: &[SessionMetrics]) -> Result<Aggregate, EvalError> {
    if metrics.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = metrics.len() as f64;
    let mean = |f: fn(&SessionMetrics) -> u32| metrics.iter().map(|m| f(m) as f64).sum::<f64>() / n;
    Ok(Aggregate {
        trials: metrics.len(),
        mean_iterations: mean(|m| m.iterations),
        mean_question_turns: mean(|m| m.question_turns),
        mean_questions: mean(|m| m.questions_total),
        rows: metrics.to_vec(),
    })
}

/// Diff between the first and the last plan of a session.
pub fn compare_before_after(session: &DialogueSession) -> Result<RapDiff, EvalError> {
    let versions = session.rap_versions();
    match (versions.first(), versions.last()) {
        (Some(first), Some(last)) => Ok(diff(first, last)),
        _ => Err(EvalError::IncompleteSession("no RAP produced".into())),
    }
}

/// Every plan a record holds, in revision order.
pub fn record_rap_versions(record: &SessionRecord) -> Result<Vec<RobotActionPlan>, EvalError> {
    record
        .events
        .iter()
        .filter(|e| e.kind == EventKind::RapParsed)
        .map(|e| {
            let revision = e.payload["revision"].as_u64().unwrap_or(0) as u32;
            parse_steps_value(&e.payload["plan"])
                .map(|steps| RobotActionPlan::new(steps).with_context(record.header.command.clone(), revision))
                .map_err(|err| EvalError::IncompleteSession(format!("event #{}: {err}", e.sequence)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    A,
    B,
}

/// One human-identified information item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub present_in: Side,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub keys_only_in_a: BTreeSet<String>,
    pub keys_only_in_b: BTreeSet<String>,
    pub step_count_a: usize,
    pub step_count_b: usize,
    pub narrative_items: Vec<String>,
}

impl CoverageReport {
    /// No key-level difference between the two plans.
    pub fn is_empty(&self) -> bool {
        self.keys_only_in_a.is_empty() && self.keys_only_in_b.is_empty()
    }
}

/// Compares a plan from a terse command (`a`) with one from an elaborated
/// command (`b`). Annotated items marked `b` become narrative items.
pub fn compare_commands(
    a: &RobotActionPlan,
    b: &RobotActionPlan,
    annotations: &[Annotation],
) -> CoverageReport {
    let ka = key_vocabulary(a);
    let kb = key_vocabulary(b);
    CoverageReport {
        keys_only_in_a: ka.difference(&kb).cloned().collect(),
        keys_only_in_b: kb.difference(&ka).cloned().collect(),
        step_count_a: a.len(),
        step_count_b: b.len(),
        narrative_items: annotations
            .iter()
            .filter(|n| n.present_in == Side::B)
            .map(|n| n.label.clone())
            .collect(),
    }
}
