use indexmap::IndexMap;

use super::{ActionStep, RobotActionPlan, ACTION, GRIPPER_L, GRIPPER_R, NONE, OBJECT, ROBOT_POSITION};

/// Upper-snake-case form of a key: `"Robot Position"` and
/// `"robot-position"` both become `ROBOT_POSITION`.
pub fn normalize_key(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    for ch in raw.trim().chars() {
        if ch.is_whitespace() || ch == '_' || ch == '-' {
            pending_sep = true;
        } else {
            if pending_sep && !out.is_empty() {
                out.push('_');
            }
            pending_sep = false;
            out.extend(ch.to_uppercase());
        }
    }
    out
}

fn normalize_value(raw: &str) -> String {
    let trimmed = raw.trim();
    if trimmed.eq_ignore_ascii_case("none") {
        NONE.to_string()
    } else {
        trimmed.to_string()
    }
}

/// Returns the canonical form of a plan. Idempotent.
///
/// Extension keys are normalized; one that normalizes onto a required key
/// fills that field if it was absent and is dropped otherwise. When two
/// extension keys collapse to the same name the first one wins.
pub fn canonicalize(plan: &RobotActionPlan) -> RobotActionPlan {
    RobotActionPlan {
        steps: plan.steps.iter().map(canonical_step).collect(),
        source_command: plan.source_command.clone(),
        revision: plan.revision,
    }
}

fn canonical_step(step: &ActionStep) -> ActionStep {
    let norm = |v: &Option<String>| v.as_deref().map(normalize_value);
    let mut out = ActionStep {
        step_index: step.step_index,
        action: normalize_value(&step.action),
        object: norm(&step.object),
        robot_position: norm(&step.robot_position),
        gripper_l: norm(&step.gripper_l),
        gripper_r: norm(&step.gripper_r),
        extensions: IndexMap::new(),
    };

    for (key, value) in &step.extensions {
        let key = normalize_key(key);
        let value = normalize_value(value);
        let slot = match key.as_str() {
            ACTION => {
                if out.action.is_empty() {
                    out.action = value;
                }
                continue;
            }
            OBJECT => &mut out.object,
            ROBOT_POSITION => &mut out.robot_position,
            GRIPPER_L => &mut out.gripper_l,
            GRIPPER_R => &mut out.gripper_r,
            _ => {
                out.extensions.entry(key).or_insert(value);
                continue;
            }
        };
        if slot.is_none() {
            *slot = Some(value);
        }
    }
    out
}
