use indexmap::IndexMap;
use serde_json::{Map, Value};
use thiserror::Error;

use super::canonical::normalize_key;
use super::extract::locate_array;
use super::{
    ActionStep, RobotActionPlan, ACTION, GRIPPER_L, GRIPPER_R, NONE, OBJECT, ROBOT_POSITION,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RapParseError {
    #[error("no JSON array found in the response")]
    NoJsonFound,
    #[error("malformed JSON at byte {offset}: {message}")]
    MalformedJson { offset: usize, message: String },
    #[error("the JSON found is not an array of steps")]
    NotAnArray,
    #[error("step {index} is not a JSON object")]
    NotAnObject { index: usize },
}

/// Keys recognized as an explicit step ordinal when their value is a
/// positive integer.
const STEP_INDEX_KEYS: [&str; 4] = ["STEP", "STEP_INDEX", "STEP_NO", "STEP_NUMBER"];

/// Parses a plan out of model output or RAP file content.
///
/// Required keys are matched case-insensitively with spaces, hyphens and
/// underscores treated alike; anything else is kept verbatim as an
/// extension. The returned plan has an empty `source_command` and
/// revision 1.
pub fn parse_rap(text: &str) -> Result<RobotActionPlan, RapParseError> {
    let value = locate_array(text)?;
    let steps = parse_steps_value(&value)?;
    Ok(RobotActionPlan::new(steps))
}

/// Interprets an already-decoded JSON value as a step array.
pub fn parse_steps_value(value: &Value) -> Result<Vec<ActionStep>, RapParseError> {
    let items = value.as_array().ok_or(RapParseError::NotAnArray)?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let obj = item
                .as_object()
                .ok_or(RapParseError::NotAnObject { index: i + 1 })?;
            Ok(step_from_object(obj, i + 1))
        })
        .collect()
}

fn step_from_object(obj: &Map<String, Value>, position: usize) -> ActionStep {
    let mut step = ActionStep {
        step_index: position as u32,
        ..ActionStep::default()
    };
    let mut action: Option<String> = None;
    let mut explicit_index = false;
    let mut extensions = IndexMap::new();

    for (raw_key, raw_value) in obj {
        let key = normalize_key(raw_key);
        if !explicit_index && STEP_INDEX_KEYS.contains(&key.as_str()) {
            if let Some(n) = raw_value.as_u64().filter(|n| *n >= 1 && *n <= u32::MAX as u64) {
                step.step_index = n as u32;
                explicit_index = true;
                continue;
            }
        }
        let value = value_text(raw_value);
        let slot = match key.as_str() {
            ACTION => &mut action,
            OBJECT => &mut step.object,
            ROBOT_POSITION => &mut step.robot_position,
            GRIPPER_L => &mut step.gripper_l,
            GRIPPER_R => &mut step.gripper_r,
            _ => {
                extensions.entry(raw_key.clone()).or_insert(value);
                continue;
            }
        };
        if slot.is_none() {
            *slot = Some(value);
        }
    }

    step.action = action.unwrap_or_default();
    step.extensions = extensions;
    step
}

fn value_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        Value::Null => NONE.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        other => other.to_string(),
    }
}
