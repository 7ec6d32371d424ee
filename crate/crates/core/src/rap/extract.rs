//! Locating a JSON array inside free-form model output.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;

use super::RapParseError;

/// Upper bound on `[` positions tried in raw text.
const MAX_CANDIDATES: usize = 256;

fn fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```[^\n`]*\n(.*?)```").expect("valid regex"))
}

/// Finds the first JSON array in `text`, looking in fenced code blocks
/// before falling back to the raw text.
pub(crate) fn locate_array(text: &str) -> Result<Value, RapParseError> {
    let mut first_failure: Option<RapParseError> = None;

    for caps in fence_re().captures_iter(text) {
        let body = caps.get(1).expect("group 1");
        match scan(body.as_str(), body.start()) {
            Ok(Some(value)) => return Ok(value),
            Ok(None) => {}
            Err(e) => {
                first_failure.get_or_insert(e);
            }
        }
    }

    match scan(text, 0) {
        Ok(Some(value)) => Ok(value),
        Ok(None) => Err(first_failure.unwrap_or(RapParseError::NoJsonFound)),
        Err(e) => Err(first_failure.unwrap_or(e)),
    }
}

/// Scans one region. `Ok(None)` means nothing JSON-like was found, `Err`
/// means something JSON-like was found but could not be used.
fn scan(region: &str, base: usize) -> Result<Option<Value>, RapParseError> {
    let trimmed = region.trim_start();
    if trimmed.starts_with('{') {
        let mut stream = serde_json::Deserializer::from_str(trimmed).into_iter::<Value>();
        if let Some(Ok(Value::Object(_))) = stream.next() {
            return Err(RapParseError::NotAnArray);
        }
    }

    let bytes = region.as_bytes();
    let mut failure: Option<RapParseError> = None;
    let mut skip_until = 0usize;
    let mut tried = 0usize;

    for (pos, _) in region.match_indices('[') {
        if pos < skip_until {
            continue;
        }
        if tried == MAX_CANDIDATES {
            break;
        }
        tried += 1;
        let end = matching_bracket(bytes, pos).unwrap_or(bytes.len());
        let candidate = &region[pos..end];
        match serde_json::from_str::<Value>(candidate) {
            Ok(value) => return Ok(Some(value)),
            Err(e) => {
                if looks_like_json(candidate) && failure.is_none() {
                    failure = Some(RapParseError::MalformedJson {
                        offset: base + pos + error_offset(candidate, &e),
                        message: e.to_string(),
                    });
                }
                skip_until = end;
            }
        }
    }

    match failure {
        Some(e) => Err(e),
        None => Ok(None),
    }
}

/// Index one past the `]` closing the `[` at `open`, honoring JSON string
/// quoting. `None` if the bracket is never closed.
fn matching_bracket(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'[' | b'{' => depth += 1,
            b']' | b'}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

fn looks_like_json(candidate: &str) -> bool {
    matches!(
        candidate[1..].trim_start().chars().next(),
        Some('{') | Some('[') | Some(']') | Some('"') | None
    )
}

/// Converts serde_json's 1-based line/column into a byte offset within
/// `candidate`.
fn error_offset(candidate: &str, err: &serde_json::Error) -> usize {
    let line = err.line().max(1);
    let line_start: usize = candidate
        .split_inclusive('\n')
        .take(line - 1)
        .map(str::len)
        .sum();
    (line_start + err.column().saturating_sub(1)).min(candidate.len())
}
