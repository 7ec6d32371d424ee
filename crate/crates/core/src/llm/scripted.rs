use std::path::Path;
use std::sync::Mutex;

use super::{check_request, ChatBackend, ChatMessage, LlmError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptEntry {
    Reply(String),
    /// Fails the call with [`LlmError::Replayed`] carrying this message.
    Fail(String),
}

/// Canned responses consumed strictly in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    entries: Vec<ScriptEntry>,
    cursor: usize,
}

impl Script {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        Self { entries, cursor: 0 }
    }

    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            responses
                .into_iter()
                .map(|r| ScriptEntry::Reply(r.into()))
                .collect(),
        )
    }

    /// Reads a script file: a JSON array of response strings.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        let responses: Vec<String> = serde_json::from_str(text)?;
        Ok(Self::from_responses(responses))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn remaining(&self) -> usize {
        self.entries.len() - self.cursor
    }

    fn next_entry(&mut self) -> Option<&ScriptEntry> {
        let entry = self.entries.get(self.cursor)?;
        self.cursor += 1;
        Some(entry)
    }
}

#[derive(Debug, Default)]
struct State {
    script: Script,
    log: Vec<Vec<ChatMessage>>,
}

/// Deterministic backend answering from a [`Script`].
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    state: Mutex<State>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        Self {
            state: Mutex::new(State {
                script,
                log: Vec::new(),
            }),
        }
    }

    pub fn from_responses<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(Script::from_responses(responses))
    }

    /// Every request received so far, in order.
    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.lock().log.clone()
    }

    pub fn cursor(&self) -> usize {
        self.lock().script.cursor()
    }

    pub fn remaining(&self) -> usize {
        self.lock().script.remaining()
    }

    /// Moves the cursor forward without recording requests.
    pub fn skip(&self, n: usize) {
        let mut state = self.lock();
        let script = &mut state.script;
        script.cursor = (script.cursor + n).min(script.entries.len());
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        check_request(messages)?;
        let mut state = self.lock();
        let len = state.script.len();
        let entry = state
            .script
            .next_entry()
            .cloned()
            .ok_or(LlmError::ScriptExhausted { len })?;
        state.log.push(messages.to_vec());
        match entry {
            ScriptEntry::Reply(text) => Ok(text),
            ScriptEntry::Fail(message) => Err(LlmError::Replayed(message)),
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}
