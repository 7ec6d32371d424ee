//! System prompt assembly from the five editable components and the
//! per-phase user instructions.
//!
//! Components live as plain text files (`role.txt`, `prerequisites.txt`,
//! `process.txt`, `output.txt`, `example.txt`); any file missing from an
//! asset directory falls back to the embedded default.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::ChatMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Role,
    Prerequisites,
    Process,
    Output,
    Example,
}

impl ComponentKind {
    /// Assembly order.
    pub const ALL: [ComponentKind; 5] = [
        ComponentKind::Role,
        ComponentKind::Prerequisites,
        ComponentKind::Process,
        ComponentKind::Output,
        ComponentKind::Example,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            ComponentKind::Role => "role",
            ComponentKind::Prerequisites => "prerequisites",
            ComponentKind::Process => "process",
            ComponentKind::Output => "output",
            ComponentKind::Example => "example",
        }
    }

    pub fn header(self) -> &'static str {
        match self {
            ComponentKind::Role => "Role",
            ComponentKind::Prerequisites => "Prerequisites",
            ComponentKind::Process => "Process",
            ComponentKind::Output => "Output",
            ComponentKind::Example => "Example",
        }
    }

    pub fn default_body(self) -> &'static str {
        match self {
            ComponentKind::Role => include_str!("../assets/prompts/role.txt"),
            ComponentKind::Prerequisites => include_str!("../assets/prompts/prerequisites.txt"),
            ComponentKind::Process => include_str!("../assets/prompts/process.txt"),
            ComponentKind::Output => include_str!("../assets/prompts/output.txt"),
            ComponentKind::Example => include_str!("../assets/prompts/example.txt"),
        }
    }

    fn from_stem(stem: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.file_stem().eq_ignore_ascii_case(stem))
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.header())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptComponent {
    pub kind: ComponentKind,
    pub body: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("component {0} supplied more than once")]
    DuplicateComponent(ComponentKind),
    #[error("component {0} is missing")]
    MissingComponent(ComponentKind),
    #[error("cannot read prompt asset {path}: {source}")]
    UnreadableAsset {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The five components in assembly order, plus the token estimate of the
/// rendered system prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    components: Vec<PromptComponent>,
    token_estimate: usize,
}

impl PromptBundle {
    pub fn defaults() -> Self {
        Self::build(
            ComponentKind::ALL
                .iter()
                .map(|&kind| PromptComponent {
                    kind,
                    body: kind.default_body().to_string(),
                })
                .collect(),
        )
    }

    /// Builds a bundle from exactly one component of each kind, in any
    /// order.
    pub fn from_components(components: Vec<PromptComponent>) -> Result<Self, PromptError> {
        let mut by_kind: HashMap<ComponentKind, PromptComponent> = HashMap::new();
        for c in components {
            if by_kind.contains_key(&c.kind) {
                return Err(PromptError::DuplicateComponent(c.kind));
            }
            by_kind.insert(c.kind, c);
        }
        let ordered = ComponentKind::ALL
            .iter()
            .map(|k| by_kind.remove(k).ok_or(PromptError::MissingComponent(*k)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::build(ordered))
    }

    fn build(components: Vec<PromptComponent>) -> Self {
        let mut bundle = Self {
            components,
            token_estimate: 0,
        };
        bundle.token_estimate = estimate_tokens(&bundle.system_prompt()).max(1);
        bundle
    }

    pub fn components(&self) -> &[PromptComponent] {
        &self.components
    }

    pub fn body(&self, kind: ComponentKind) -> &str {
        self.components
            .iter()
            .find(|c| c.kind == kind)
            .map(|c| c.body.as_str())
            .expect("bundle holds every kind")
    }

    pub fn token_estimate(&self) -> usize {
        self.token_estimate
    }

    /// The system message: each component under a `# Header` line.
    pub fn system_prompt(&self) -> String {
        self.components
            .iter()
            .map(|c| format!("# {}\n{}", c.kind.header(), c.body.trim_end()))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// Where component bodies come from.
#[derive(Debug, Clone, Copy)]
pub enum AssetSource<'a> {
    Embedded,
    Directory(&'a Path),
}

pub fn load_components(source: AssetSource<'_>) -> Result<PromptBundle, PromptError> {
    let dir = match source {
        AssetSource::Embedded => return Ok(PromptBundle::defaults()),
        AssetSource::Directory(dir) => dir,
    };
    let unreadable = |path: &Path, source| PromptError::UnreadableAsset {
        path: path.to_path_buf(),
        source,
    };

    let mut found: HashMap<ComponentKind, PathBuf> = HashMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| unreadable(dir, e))? {
        let path = entry.map_err(|e| unreadable(dir, e))?.path();
        let is_txt = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("txt"));
        let kind = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(ComponentKind::from_stem);
        if let (true, Some(kind)) = (is_txt, kind) {
            if found.insert(kind, path).is_some() {
                return Err(PromptError::DuplicateComponent(kind));
            }
        }
    }

    let mut components = Vec::with_capacity(5);
    for kind in ComponentKind::ALL {
        let body = match found.get(&kind) {
            Some(path) => std::fs::read_to_string(path).map_err(|e| unreadable(path, e))?,
            None => kind.default_body().to_string(),
        };
        components.push(PromptComponent { kind, body });
    }
    PromptBundle::from_components(components)
}

/// `ceil(chars / 4)`; zero only for the empty string.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionPhase {
    MakeRap,
    Analyze,
    Question,
}

pub const MAKE_RAP_SENTENCE: &str = "a) Make RAP (provide a modified RAP. It should be something that the robot can easily understand. Therefore, the prompt should be unambiguous.)";
pub const LIST_SENTENCE: &str = "a-1) The RAP should be output as a list.";
pub const ANALYZE_SENTENCE: &str = "Please analyze step by step what elements are missing in the RAP for the robot to work. Then output the information that should be added to the RAP. If there is no information to be added, please output 'none'.";
pub const QUESTION_SENTENCE: &str = "Please collect the information you suggested in the b) analysis that should be added to the RAP by asking questions. I will provide the information for your question. If you have no questions, please output 'none'.";

const FIRST_RAP_TEMPLATE: &str = "Command: {command}\n\nPerform process a) for this command.\n{make_rap}\n{list}\nOutput only the RAP.";
const REVISE_RAP_TEMPLATE: &str = "Perform process a) again, using the command and all of the information from the questions and answers so far.\n{make_rap}\n{list}\nOutput only the RAP.";
const ANALYZE_TEMPLATE: &str = "Perform process b) on the latest RAP.\n{analyze}";
const QUESTION_TEMPLATE: &str = "Perform process c).\n{question}";
const REPAIR_TEMPLATE: &str = "The RAP in your previous message could not be read: {error}\nPerform process a) again and output the complete RAP as one JSON list of step objects, with no other JSON in the message.\n{list}";

/// The newest user message of one exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseInstruction {
    pub phase: InstructionPhase,
    pub text: String,
}

impl PhaseInstruction {
    fn render(phase: InstructionPhase, template: &str, vars: &[(&str, &str)]) -> Self {
        let mut text = template
            .replace("{make_rap}", MAKE_RAP_SENTENCE)
            .replace("{list}", LIST_SENTENCE)
            .replace("{analyze}", ANALYZE_SENTENCE)
            .replace("{question}", QUESTION_SENTENCE);
        for (name, value) in vars {
            text = text.replace(&format!("{{{name}}}"), value);
        }
        Self { phase, text }
    }

    /// First plan of a session: built from the command alone.
    pub fn make_rap(command: &str) -> Self {
        Self::render(InstructionPhase::MakeRap, FIRST_RAP_TEMPLATE, &[("command", command)])
    }

    /// Later plans: built from the command plus the answers in history.
    pub fn revise_rap() -> Self {
        Self::render(InstructionPhase::MakeRap, REVISE_RAP_TEMPLATE, &[])
    }

    pub fn repair_rap(error: &str) -> Self {
        Self::render(InstructionPhase::MakeRap, REPAIR_TEMPLATE, &[("error", error)])
    }

    pub fn analyze() -> Self {
        Self::render(InstructionPhase::Analyze, ANALYZE_TEMPLATE, &[])
    }

    pub fn question() -> Self {
        Self::render(InstructionPhase::Question, QUESTION_TEMPLATE, &[])
    }
}

/// System prompt, then the prior transcript, then the instruction.
pub fn assemble_messages(
    bundle: &PromptBundle,
    history: &[ChatMessage],
    instruction: &PhaseInstruction,
) -> Vec<ChatMessage> {
    let mut out = Vec::with_capacity(history.len() + 2);
    out.push(ChatMessage::system(bundle.system_prompt()));
    out.extend(history.iter().cloned());
    out.push(ChatMessage::user(instruction.text.clone()));
    out
}
