//! Checks that an event log describes a legal run of the loop.

use thiserror::Error;

use super::LoopPhase;
use crate::event::{EventKind, SessionEvent};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PhaseWalkError {
    #[error("event #{found} out of order, expected #{expected}")]
    Sequence { expected: u64, found: u64 },
    #[error("event #{sequence}: illegal transition {from} -> {to}")]
    IllegalTransition {
        sequence: u64,
        from: LoopPhase,
        to: LoopPhase,
    },
    #[error("event #{sequence}: {kind:?} not allowed in phase {phase}")]
    WrongPhase {
        sequence: u64,
        kind: EventKind,
        phase: LoopPhase,
    },
    #[error("event #{sequence}: iteration {found}, expected {expected}")]
    Iteration { sequence: u64, expected: u64, found: u64 },
    #[error("event #{sequence}: {message}")]
    MalformedPayload { sequence: u64, message: String },
    #[error("event #{sequence} recorded after the session finished")]
    AfterDone { sequence: u64 },
}

/// Where a walk ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkEnd {
    pub phase: LoopPhase,
    pub iteration: u64,
}

fn payload_phase(ev: &SessionEvent, field: &str) -> Result<LoopPhase, PhaseWalkError> {
    serde_json::from_value(ev.payload[field].clone()).map_err(|_| PhaseWalkError::MalformedPayload {
        sequence: ev.sequence,
        message: format!("missing or unknown {field:?}"),
    })
}

fn payload_iteration(ev: &SessionEvent) -> Result<u64, PhaseWalkError> {
    ev.payload["iteration"]
        .as_u64()
        .ok_or_else(|| PhaseWalkError::MalformedPayload {
            sequence: ev.sequence,
            message: "missing \"iteration\"".into(),
        })
}

/// Replays the phase machine over `events` and reports the first step that
/// could not have happened.
pub fn verify_phase_walk(events: &[SessionEvent]) -> Result<WalkEnd, PhaseWalkError> {
    let mut phase = LoopPhase::MakeRap;
    let mut iteration = 1u64;
    for (i, ev) in events.iter().enumerate() {
        let expected = i as u64 + 1;
        if ev.sequence != expected {
            return Err(PhaseWalkError::Sequence {
                expected,
                found: ev.sequence,
            });
        }
        if phase == LoopPhase::Done {
            return Err(PhaseWalkError::AfterDone {
                sequence: ev.sequence,
            });
        }
        let wrong_phase = || PhaseWalkError::WrongPhase {
            sequence: ev.sequence,
            kind: ev.kind,
            phase,
        };
        let found = payload_iteration(ev)?;
        let mut want_iteration = iteration;
        match ev.kind {
            EventKind::PhaseChanged => {
                let from = payload_phase(ev, "from")?;
                let to = payload_phase(ev, "to")?;
                if from != phase || !from.can_transition_to(to) {
                    return Err(PhaseWalkError::IllegalTransition {
                        sequence: ev.sequence,
                        from,
                        to,
                    });
                }
                if from == LoopPhase::AwaitAnswers {
                    want_iteration = iteration + 1;
                    iteration += 1;
                }
                phase = to;
            }
            EventKind::Request | EventKind::Response => {
                if !phase.is_exchange() || payload_phase(ev, "phase")? != phase {
                    return Err(wrong_phase());
                }
            }
            EventKind::RapParsed if phase != LoopPhase::MakeRap => return Err(wrong_phase()),
            EventKind::AnalysisParsed if phase != LoopPhase::Analyze => return Err(wrong_phase()),
            EventKind::QuestionsParsed if phase != LoopPhase::Question => return Err(wrong_phase()),
            EventKind::AnswersSubmitted if phase != LoopPhase::AwaitAnswers => {
                return Err(wrong_phase())
            }
            EventKind::Error
                if payload_phase(ev, "phase")? != phase => {
                    return Err(wrong_phase());
                }
            _ => {}
        }
        if found != want_iteration {
            return Err(PhaseWalkError::Iteration {
                sequence: ev.sequence,
                expected: want_iteration,
                found,
            });
        }
    }
    Ok(WalkEnd { phase, iteration })
}
