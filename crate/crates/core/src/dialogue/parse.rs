//! Reading the analysis and question phases' free-text responses.

use std::sync::OnceLock;

use regex::Regex;

use super::{AnalysisResult, Question, QuestionSet};

fn enumerator_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:[-*•+]|\d{1,3}[.)]|\(\d{1,3}\))\s+(.*\S)\s*$").expect("valid regex")
    })
}

fn is_quote(c: char) -> bool {
    matches!(c, '‘' | '’' | '“' | '”' | '«' | '»' | '「' | '」' | '。')
}

fn is_none_token(s: &str) -> bool {
    s.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation() || is_quote(c))
        .eq_ignore_ascii_case("none")
}

/// The loop-terminating sentinel: the whole response, or its final line,
/// is `none` once surrounding whitespace, punctuation and quotes are
/// stripped. A response containing a question mark never qualifies.
pub fn is_none_sentinel(text: &str) -> bool {
    if text.contains('?') {
        return false;
    }
    if is_none_token(text) {
        return true;
    }
    text.lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .is_some_and(is_none_token)
}

/// Bulleted or numbered items. Indented lines directly after an item are
/// folded into it.
fn enumerated_items(text: &str) -> Vec<String> {
    let mut items: Vec<String> = Vec::new();
    let mut open = false;
    for line in text.lines() {
        if let Some(caps) = enumerator_re().captures(line) {
            items.push(caps[1].to_string());
            open = true;
        } else if line.trim().is_empty() {
            open = false;
        } else if open && line.starts_with(char::is_whitespace) {
            let last = items.last_mut().expect("open implies an item");
            last.push(' ');
            last.push_str(line.trim());
        } else {
            open = false;
        }
    }
    items
}

/// Sentences, split after `.`, `!` or `?` followed by whitespace, and at
/// line breaks.
fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut current = String::new();
        let mut chars = line.chars().peekable();
        while let Some(c) = chars.next() {
            current.push(c);
            let boundary = matches!(c, '.' | '!' | '?')
                && chars.peek().is_none_or(|n| n.is_whitespace());
            if boundary {
                let s = current.trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                current.clear();
            }
        }
        let s = current.trim();
        if !s.is_empty() {
            out.push(s.to_string());
        }
    }
    out
}

pub fn parse_analysis(text: &str) -> AnalysisResult {
    if is_none_sentinel(text) {
        return AnalysisResult {
            raw_text: text.to_string(),
            missing_items: Vec::new(),
            is_none: true,
        };
    }
    let mut missing_items = enumerated_items(text);
    if missing_items.is_empty() {
        missing_items.push(text.trim().to_string());
    }
    AnalysisResult {
        raw_text: text.to_string(),
        missing_items,
        is_none: false,
    }
}

/// Parses a question-phase response, numbering ids from `q1`.
pub fn parse_questions(text: &str) -> QuestionSet {
    parse_questions_from(text, 1)
}

/// Parses a question-phase response with ids starting at `q{first_id}`.
pub fn parse_questions_from(text: &str, first_id: u32) -> QuestionSet {
    if is_none_sentinel(text) {
        return QuestionSet {
            raw_text: text.to_string(),
            questions: Vec::new(),
            is_none: true,
        };
    }
    let mut texts = enumerated_items(text);
    if texts.is_empty() {
        texts = sentences(text)
            .into_iter()
            .filter(|s| s.ends_with('?'))
            .collect();
    }
    if texts.is_empty() {
        texts.push(text.trim().to_string());
    }
    let questions = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| Question {
            id: format!("q{}", first_id + i as u32),
            text,
        })
        .collect();
    QuestionSet {
        raw_text: text.to_string(),
        questions,
        is_none: false,
    }
}
