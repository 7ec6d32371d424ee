use std::sync::Arc;

use thiserror::Error;

use super::SessionRecord;
use crate::dialogue::{AnswerProvider, AnswerSet, DialogueSession, LoopPhase, QueuedAnswers};
use crate::event::{error_kind, EventKind, SessionEvent};
use crate::llm::{Script, ScriptEntry, ScriptedBackend};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("replay diverged at event #{sequence}: {detail}")]
    ReplayDivergence { sequence: u64, detail: String },
    #[error("cannot replay record: {0}")]
    CorruptRecord(String),
}

fn describe(e: &SessionEvent) -> String {
    format!("{:?} {}", e.kind, e.payload)
}

fn check_new(
    replayed: &[SessionEvent],
    recorded: &[SessionEvent],
    from: usize,
) -> Result<(), ReplayError> {
    for (i, got) in replayed.iter().enumerate().skip(from) {
        match recorded.get(i) {
            Some(want) if want.same_content(got) => {}
            Some(want) => {
                return Err(ReplayError::ReplayDivergence {
                    sequence: got.sequence,
                    detail: format!("recorded {}, replayed {}", describe(want), describe(got)),
                })
            }
            None => {
                return Err(ReplayError::ReplayDivergence {
                    sequence: got.sequence,
                    detail: format!("record ends, replayed {}", describe(got)),
                })
            }
        }
    }
    Ok(())
}

/// Rebuilds a session from its record with no network access. Recorded
/// responses and backend failures are fed back in order, recorded answers
/// are resubmitted, and every event the rebuilt session emits must match
/// the record (timestamps aside).
pub fn replay(record: &SessionRecord) -> Result<DialogueSession, ReplayError> {
    let corrupt = |m: String| ReplayError::CorruptRecord(m);
    let bundle = record.header.bundle().map_err(|e| corrupt(e.to_string()))?;

    let mut entries = Vec::new();
    let mut answer_sets = Vec::new();
    for e in &record.events {
        match e.kind {
            EventKind::Response => entries.push(ScriptEntry::Reply(
                e.payload["text"]
                    .as_str()
                    .ok_or_else(|| corrupt(format!("event #{} has no response text", e.sequence)))?
                    .to_string(),
            )),
            EventKind::Error if e.payload["kind"] == error_kind::BACKEND_FAILURE => {
                entries.push(ScriptEntry::Fail(
                    e.payload["message"].as_str().unwrap_or_default().to_string(),
                ))
            }
            EventKind::AnswersSubmitted => answer_sets.push(
                serde_json::from_value::<AnswerSet>(e.payload["answers"].clone())
                    .map_err(|err| corrupt(format!("event #{}: {err}", e.sequence)))?,
            ),
            _ => {}
        }
    }

    let backend = ScriptedBackend::new(Script::new(entries));
    let mut answers = QueuedAnswers::new(answer_sets);
    let mut session = DialogueSession::with_id(
        record.header.session_id.clone(),
        &record.header.command,
        record.header.config.clone(),
        Arc::new(bundle),
    )
    .map_err(|e| corrupt(e.to_string()))?;

    let recorded = &record.events;
    while session.events().len() < recorded.len() && !session.is_finished() {
        let before = session.events().len();
        let step_failed = match session.phase() {
            LoopPhase::AwaitAnswers => {
                let pending = session.pending_questions().to_vec();
                match answers.answers(&session, &pending) {
                    Ok(set) => session.submit_answers(set).is_err(),
                    Err(_) => true,
                }
            }
            _ => session.advance(&backend).is_err(),
        };
        check_new(session.events(), recorded, before)?;
        if step_failed && session.events().len() == before {
            break;
        }
    }

    if session.events().len() < recorded.len() {
        let next = &recorded[session.events().len()];
        return Err(ReplayError::ReplayDivergence {
            sequence: next.sequence,
            detail: format!("replay stopped before recorded {}", describe(next)),
        });
    }
    Ok(session)
}
