use std::sync::Arc;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::answers::AnswerProvider;
use super::parse::{parse_analysis, parse_questions_from};
use super::{
    AnalysisResult, AnswerSet, AnswerText, DialogueError, LoopPhase, Question, QuestionSet,
    SessionConfig, SessionStatus, REFUSAL_TEXT,
};
use crate::eval::{metrics_from_events, SessionMetrics};
use crate::event::{error_kind, EventKind, SessionEvent};
use crate::llm::{ChatBackend, ChatMessage};
use crate::prompt::{assemble_messages, estimate_tokens, PhaseInstruction, PromptBundle};
use crate::rap::{canonicalize, parse_rap, validate, Finality, RobotActionPlan};
use crate::store::StoreError;

/// What the model's response was read as.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Artifact {
    Rap { revision: u32 },
    MalformedRap { error: String },
    Analysis(AnalysisResult),
    Questions(QuestionSet),
}

/// One entry of the conversation transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "turn", rename_all = "snake_case")]
pub enum Turn {
    Exchange {
        phase: LoopPhase,
        iteration: u32,
        request: String,
        response: String,
        artifact: Artifact,
    },
    Answers {
        iteration: u32,
        message: String,
        answers: AnswerSet,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PhaseOutcome {
    pub completed: LoopPhase,
    pub next: LoopPhase,
    pub status: SessionStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub final_rap: Option<RobotActionPlan>,
    pub metrics: SessionMetrics,
    pub status: SessionStatus,
}

/// Called at every step boundary of [`run_to_completion`].
pub trait Checkpoint {
    fn checkpoint(&mut self, session: &DialogueSession) -> Result<(), StoreError>;
}

impl Checkpoint for () {
    fn checkpoint(&mut self, _: &DialogueSession) -> Result<(), StoreError> {
        Ok(())
    }
}

/// Full state of one planning loop.
#[derive(Debug, Clone)]
pub struct DialogueSession {
    session_id: String,
    command: String,
    config: SessionConfig,
    bundle: Arc<PromptBundle>,
    phase: LoopPhase,
    status: SessionStatus,
    iteration: u32,
    rap_versions: Vec<RobotActionPlan>,
    turns: Vec<Turn>,
    pending: Vec<Question>,
    next_question: u32,
    repairs: u32,
    events: Vec<SessionEvent>,
}

pub fn start_session(
    command: &str,
    config: SessionConfig,
    bundle: Arc<PromptBundle>,
) -> Result<DialogueSession, DialogueError> {
    DialogueSession::with_id(uuid::Uuid::new_v4().to_string(), command, config, bundle)
}

impl DialogueSession {
    /// Starts a session under a caller-chosen id.
    pub fn with_id(
        session_id: String,
        command: &str,
        config: SessionConfig,
        bundle: Arc<PromptBundle>,
    ) -> Result<Self, DialogueError> {
        let command = command.trim();
        if command.is_empty() {
            return Err(DialogueError::EmptyCommand);
        }
        config.validate()?;
        Ok(Self {
            session_id,
            command: command.to_string(),
            config,
            bundle,
            phase: LoopPhase::MakeRap,
            status: SessionStatus::Running,
            iteration: 1,
            rap_versions: Vec::new(),
            turns: Vec::new(),
            pending: Vec::new(),
            next_question: 1,
            repairs: 0,
            events: Vec::new(),
        })
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn bundle(&self) -> &Arc<PromptBundle> {
        &self.bundle
    }

    pub fn phase(&self) -> LoopPhase {
        self.phase
    }

    pub fn status(&self) -> SessionStatus {
        self.status
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn rap_versions(&self) -> &[RobotActionPlan] {
        &self.rap_versions
    }

    /// The latest plan, once the loop has finished.
    pub fn final_rap(&self) -> Option<&RobotActionPlan> {
        match self.phase {
            LoopPhase::Done => self.rap_versions.last(),
            _ => None,
        }
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn pending_questions(&self) -> &[Question] {
        &self.pending
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    /// The message of the most recent `Error` event, if the session has not
    /// since moved on.
    pub fn last_error(&self) -> Option<String> {
        let last = self.events.last()?;
        (last.kind == EventKind::Error)
            .then(|| last.payload["message"].as_str().unwrap_or_default().to_string())
    }

    pub fn is_finished(&self) -> bool {
        self.phase == LoopPhase::Done
    }

    /// The conversation so far, excluding the system prompt.
    pub fn history(&self) -> Vec<ChatMessage> {
        let mut out = Vec::with_capacity(self.turns.len() * 2);
        for turn in &self.turns {
            match turn {
                Turn::Exchange {
                    request, response, ..
                } => {
                    out.push(ChatMessage::user(request.clone()));
                    out.push(ChatMessage::assistant(response.clone()));
                }
                Turn::Answers { message, .. } => out.push(ChatMessage::user(message.clone())),
            }
        }
        out
    }

    /// Runs the current phase's exchange with the model and moves the loop
    /// forward.
    pub fn advance(&mut self, backend: &dyn ChatBackend) -> Result<PhaseOutcome, DialogueError> {
        let completed = self.phase;
        match completed {
            LoopPhase::MakeRap => self.make_rap(backend)?,
            LoopPhase::Analyze => self.analyze(backend)?,
            LoopPhase::Question => self.ask(backend)?,
            other => return Err(DialogueError::IllegalPhase(other)),
        }
        Ok(PhaseOutcome {
            completed,
            next: self.phase,
            status: self.status,
        })
    }

    /// Hands the collaborator's answers to the session and starts the next
    /// iteration.
    pub fn submit_answers(&mut self, answers: AnswerSet) -> Result<(), DialogueError> {
        if self.phase != LoopPhase::AwaitAnswers {
            return Err(DialogueError::PhaseViolation {
                expected: LoopPhase::AwaitAnswers,
                actual: self.phase,
            });
        }

        let mut seen: Vec<&str> = Vec::new();
        for answer in &answers.answers {
            let id = answer.question_id.as_str();
            if !self.pending.iter().any(|q| q.id == id) {
                return Err(DialogueError::UnknownQuestionId(id.to_string()));
            }
            if seen.contains(&id) {
                return Err(DialogueError::DuplicateAnswer(id.to_string()));
            }
            seen.push(id);
        }
        let missing: Vec<String> = self
            .pending
            .iter()
            .filter(|q| !seen.contains(&q.id.as_str()))
            .map(|q| q.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(DialogueError::MissingAnswer(missing));
        }

        // Present answers in question order regardless of submission order.
        let ordered = AnswerSet::new(
            self.pending
                .iter()
                .filter_map(|q| answers.answers.iter().find(|a| a.question_id == q.id).cloned())
                .collect(),
        );
        let message = render_answers(&self.pending, &ordered);
        self.emit(
            EventKind::AnswersSubmitted,
            json!({
                "iteration": self.iteration,
                "answers": ordered,
                "message": message,
            }),
        );
        self.turns.push(Turn::Answers {
            iteration: self.iteration,
            message,
            answers: ordered,
        });
        self.pending.clear();
        self.iteration += 1;
        self.repairs = 0;
        self.transition(LoopPhase::MakeRap, SessionStatus::Running);
        Ok(())
    }

    fn make_rap(&mut self, backend: &dyn ChatBackend) -> Result<(), DialogueError> {
        let mut instruction = if self.rap_versions.is_empty() {
            PhaseInstruction::make_rap(&self.command)
        } else {
            PhaseInstruction::revise_rap()
        };
        let mut attempt = 1;
        loop {
            let response = self.exchange(&instruction, attempt, backend)?;
            match read_plan(&response) {
                Ok((plan, warnings)) => {
                    let revision = self.rap_versions.len() as u32 + 1;
                    let plan = plan.with_context(self.command.clone(), revision);
                    self.emit(
                        EventKind::RapParsed,
                        json!({
                            "iteration": self.iteration,
                            "revision": revision,
                            "repairs": self.repairs,
                            "plan": plan.to_json(),
                            "warnings": warnings,
                        }),
                    );
                    self.push_exchange(instruction, response, Artifact::Rap { revision });
                    self.rap_versions.push(plan);
                    self.transition(LoopPhase::Analyze, SessionStatus::Running);
                    return Ok(());
                }
                Err(error) => {
                    self.emit_error(error_kind::MALFORMED_RAP, &error);
                    self.push_exchange(
                        instruction,
                        response,
                        Artifact::MalformedRap {
                            error: error.clone(),
                        },
                    );
                    if self.repairs >= self.config.repair_attempts {
                        let attempts = self.repairs;
                        self.emit_error(error_kind::REPAIR_EXHAUSTED, &error);
                        self.repairs = 0;
                        return Err(DialogueError::RepairExhausted { attempts, error });
                    }
                    self.repairs += 1;
                    attempt += 1;
                    log::info!("repairing malformed RAP (attempt {attempt}): {error}");
                    instruction = PhaseInstruction::repair_rap(&error);
                }
            }
        }
    }

    fn analyze(&mut self, backend: &dyn ChatBackend) -> Result<(), DialogueError> {
        let instruction = PhaseInstruction::analyze();
        let response = self.exchange(&instruction, 1, backend)?;
        let result = parse_analysis(&response);
        self.emit(
            EventKind::AnalysisParsed,
            json!({ "iteration": self.iteration, "result": result }),
        );
        let is_none = result.is_none;
        self.push_exchange(instruction, response, Artifact::Analysis(result));
        if is_none {
            self.transition(LoopPhase::Done, SessionStatus::Done);
        } else if self.iteration >= self.config.max_iterations {
            log::warn!(
                "session {} reached max_iterations={} without a clear plan",
                self.session_id,
                self.config.max_iterations
            );
            self.transition(LoopPhase::Done, SessionStatus::Truncated);
        } else {
            self.transition(LoopPhase::Question, SessionStatus::Running);
        }
        Ok(())
    }

    fn ask(&mut self, backend: &dyn ChatBackend) -> Result<(), DialogueError> {
        let instruction = PhaseInstruction::question();
        let response = self.exchange(&instruction, 1, backend)?;
        let set = parse_questions_from(&response, self.next_question);
        self.next_question += set.questions.len() as u32;
        self.emit(
            EventKind::QuestionsParsed,
            json!({ "iteration": self.iteration, "questions": set }),
        );
        let questions = set.questions.clone();
        let is_none = set.is_none;
        self.push_exchange(instruction, response, Artifact::Questions(set));
        if is_none {
            self.transition(LoopPhase::Done, SessionStatus::Done);
        } else {
            self.pending = questions;
            self.transition(LoopPhase::AwaitAnswers, SessionStatus::Running);
        }
        Ok(())
    }

    /// One request/response pair. The request and its outcome are logged
    /// before returning.
    fn exchange(
        &mut self,
        instruction: &PhaseInstruction,
        attempt: u32,
        backend: &dyn ChatBackend,
    ) -> Result<String, DialogueError> {
        let messages = assemble_messages(&self.bundle, &self.history(), instruction);
        let tokens: usize = messages.iter().map(|m| estimate_tokens(&m.content)).sum();
        let digest = Sha256::digest(serde_json::to_vec(&messages).expect("messages serialize"));
        self.emit(
            EventKind::Request,
            json!({
                "phase": self.phase,
                "iteration": self.iteration,
                "attempt": attempt,
                "instruction": instruction.text,
                "message_count": messages.len(),
                "tokens_estimated": tokens,
                "request_sha256": hex::encode(digest),
            }),
        );
        match backend.complete(&messages) {
            Ok(text) => {
                self.emit(
                    EventKind::Response,
                    json!({ "phase": self.phase, "iteration": self.iteration, "text": text }),
                );
                Ok(text)
            }
            Err(e) => {
                self.emit_error(error_kind::BACKEND_FAILURE, &e.to_string());
                Err(DialogueError::BackendFailure(e))
            }
        }
    }

    fn push_exchange(&mut self, instruction: PhaseInstruction, response: String, artifact: Artifact) {
        self.turns.push(Turn::Exchange {
            phase: self.phase,
            iteration: self.iteration,
            request: instruction.text,
            response,
            artifact,
        });
    }

    fn transition(&mut self, to: LoopPhase, status: SessionStatus) {
        debug_assert!(self.phase.can_transition_to(to), "{} -> {to}", self.phase);
        let from = self.phase;
        self.phase = to;
        self.status = status;
        self.emit(
            EventKind::PhaseChanged,
            json!({
                "from": from,
                "to": to,
                "iteration": self.iteration,
                "status": status,
            }),
        );
    }

    fn emit_error(&mut self, kind: &str, message: &str) {
        self.emit(
            EventKind::Error,
            json!({
                "phase": self.phase,
                "iteration": self.iteration,
                "kind": kind,
                "message": message,
            }),
        );
    }

    fn emit(&mut self, kind: EventKind, payload: serde_json::Value) {
        self.events.push(SessionEvent {
            sequence: self.events.len() as u64 + 1,
            kind,
            at: Utc::now(),
            payload,
        });
    }
}

/// Parses, canonicalizes and checks a MakeRap response. Returns the plan
/// and its warnings, or a description of why it cannot be used.
fn read_plan(response: &str) -> Result<(RobotActionPlan, Vec<String>), String> {
    let plan = canonicalize(&parse_rap(response).map_err(|e| e.to_string())?);
    let report = validate(&plan, Finality::Final);
    if !report.valid {
        let reasons: Vec<String> = report
            .errors()
            .map(|i| match i.step_index {
                Some(s) => format!("step {s}: {}", i.message),
                None => i.message.clone(),
            })
            .collect();
        return Err(reasons.join("; "));
    }
    let warnings = report
        .warnings()
        .map(|i| match i.step_index {
            Some(s) => format!("step {s}: {}", i.message),
            None => i.message.clone(),
        })
        .collect();
    Ok((plan, warnings))
}

/// The single human message carrying every answer of one question turn.
fn render_answers(questions: &[Question], answers: &AnswerSet) -> String {
    let mut out = String::from("Here is the information for your questions.");
    for (i, q) in questions.iter().enumerate() {
        let answer = answers
            .answers
            .iter()
            .find(|a| a.question_id == q.id)
            .map(|a| match &a.text {
                AnswerText::Text(t) => t.as_str(),
                AnswerText::Refused => REFUSAL_TEXT,
            })
            .unwrap_or(REFUSAL_TEXT);
        out.push_str(&format!("\n{}. {}\nAnswer: {}", i + 1, q.text, answer));
    }
    out
}

/// Drives a session until it is done, asking `answers` whenever the loop
/// waits on the collaborator. `checkpoint` runs after every step, including
/// the one that failed.
pub fn run_to_completion(
    session: &mut DialogueSession,
    backend: &dyn ChatBackend,
    answers: &mut dyn AnswerProvider,
    checkpoint: &mut dyn Checkpoint,
) -> Result<RunResult, DialogueError> {
    while !session.is_finished() {
        let step = match session.phase() {
            LoopPhase::AwaitAnswers => {
                let pending = session.pending_questions().to_vec();
                answers
                    .answers(session, &pending)
                    .map_err(DialogueError::from)
                    .and_then(|set| session.submit_answers(set))
            }
            _ => session.advance(backend).map(|_| ()),
        };
        checkpoint.checkpoint(session)?;
        step?;
    }
    Ok(RunResult {
        final_rap: session.final_rap().cloned(),
        metrics: metrics_from_events(session.events()),
        status: session.status(),
    })
}
