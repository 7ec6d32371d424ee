//! Sources of collaborator answers.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use thiserror::Error;

use super::{AnswerSet, AnswerText, DialogueSession, Question};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("cannot read answers: {0}")]
    Io(#[from] std::io::Error),
    #[error("answer file is not a JSON object of ordinal to text: {0}")]
    Format(String),
    #[error("no queued answers left for {0}")]
    Exhausted(String),
    #[error("{0}")]
    Other(String),
}

/// Supplies answers for the questions a session is waiting on.
pub trait AnswerProvider {
    fn answers(
        &mut self,
        session: &DialogueSession,
        questions: &[Question],
    ) -> Result<AnswerSet, ProviderError>;
}

/// Refuses every question.
#[derive(Debug, Default, Clone, Copy)]
pub struct RefuseAll;

impl AnswerProvider for RefuseAll {
    fn answers(&mut self, _: &DialogueSession, questions: &[Question]) -> Result<AnswerSet, ProviderError> {
        let mut set = AnswerSet::default();
        for q in questions {
            set.push(q.id.clone(), AnswerText::Refused);
        }
        Ok(set)
    }
}

/// Answers keyed by the session-wide question ordinal. Ordinals without an
/// entry are refused.
#[derive(Debug, Clone, Default)]
pub struct OrdinalAnswers {
    by_ordinal: BTreeMap<u32, AnswerText>,
}

impl OrdinalAnswers {
    pub fn new(by_ordinal: BTreeMap<u32, AnswerText>) -> Self {
        Self { by_ordinal }
    }

    /// Reads `{"1": "text", "2": "REFUSED", ...}`.
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, ProviderError> {
        let raw: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| ProviderError::Format(e.to_string()))?;
        let mut by_ordinal = BTreeMap::new();
        for (k, v) in raw {
            let n: u32 = k
                .trim()
                .trim_start_matches('q')
                .parse()
                .map_err(|_| ProviderError::Format(format!("key {k:?} is not an ordinal")))?;
            by_ordinal.insert(n, AnswerText::from_input(&v));
        }
        Ok(Self { by_ordinal })
    }

    pub fn len(&self) -> usize {
        self.by_ordinal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_ordinal.is_empty()
    }
}

impl AnswerProvider for OrdinalAnswers {
    fn answers(&mut self, _: &DialogueSession, questions: &[Question]) -> Result<AnswerSet, ProviderError> {
        let mut set = AnswerSet::default();
        for q in questions {
            let text = q.ordinal().and_then(|n| self.by_ordinal.get(&n)).cloned();
            let text = text.unwrap_or_else(|| {
                log::warn!("no answer for {}, refusing", q.id);
                AnswerText::Refused
            });
            set.push(q.id.clone(), text);
        }
        Ok(set)
    }
}

/// Whole answer sets handed out in order, one per question turn.
#[derive(Debug, Clone, Default)]
pub struct QueuedAnswers {
    queue: VecDeque<AnswerSet>,
}

impl QueuedAnswers {
    pub fn new(sets: impl IntoIterator<Item = AnswerSet>) -> Self {
        Self {
            queue: sets.into_iter().collect(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }
}

impl AnswerProvider for QueuedAnswers {
    fn answers(&mut self, _: &DialogueSession, questions: &[Question]) -> Result<AnswerSet, ProviderError> {
        self.queue.pop_front().ok_or_else(|| {
            let ids: Vec<&str> = questions.iter().map(|q| q.id.as_str()).collect();
            ProviderError::Exhausted(ids.join(", "))
        })
    }
}

/// Wraps a closure.
pub struct FnAnswers<F>(pub F);

impl<F> AnswerProvider for FnAnswers<F>
where
    F: FnMut(&DialogueSession, &[Question]) -> Result<AnswerSet, ProviderError>,
{
    fn answers(
        &mut self,
        session: &DialogueSession,
        questions: &[Question],
    ) -> Result<AnswerSet, ProviderError> {
        (self.0)(session, questions)
    }
}
