use serde::{Deserialize, Serialize};

use super::{RobotActionPlan, ACTION, GRIPPER_L, GRIPPER_R, NONE, OBJECT, ROBOT_POSITION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finality {
    Draft,
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub step_index: Option<u32>,
    pub key: Option<String>,
    pub message: String,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Warning)
    }
}

/// Actions that only make sense with a concrete target.
const MANIPULATION_ACTIONS: [&str; 3] = ["GRAB", "CUT", "POUR"];

/// Spellings that look like an attempt at the `NONE` sentinel.
const SENTINEL_LOOKALIKES: [&str; 9] = [
    "null", "nil", "n/a", "na", "nothing", "empty", "-", "--", "no object",
];

pub fn validate(plan: &RobotActionPlan, finality: Finality) -> ValidationReport {
    let mut issues = Vec::new();
    let mut push = |step: Option<u32>, key: Option<&str>, severity, message: String| {
        issues.push(Issue {
            step_index: step,
            key: key.map(str::to_string),
            message,
            severity,
        })
    };

    if finality == Finality::Final && plan.steps.is_empty() {
        push(None, None, Severity::Error, "a final plan must contain at least one step".into());
    }

    for (pos, step) in plan.steps.iter().enumerate() {
        let expected = pos as u32 + 1;
        let idx = Some(step.step_index);

        if step.step_index != expected {
            push(
                idx,
                None,
                Severity::Error,
                format!("step index {} at position {expected}; indices must run 1..N", step.step_index),
            );
        }

        let action = step.action.trim();
        if action.is_empty() {
            push(idx, Some(ACTION), Severity::Error, "ACTION is empty".into());
        } else if !is_upper_snake(action) && action != NONE {
            push(
                idx,
                Some(ACTION),
                Severity::Warning,
                format!("ACTION {action:?} is not an upper-snake-case motion class"),
            );
        }

        let required = [
            (OBJECT, &step.object),
            (ROBOT_POSITION, &step.robot_position),
            (GRIPPER_L, &step.gripper_l),
            (GRIPPER_R, &step.gripper_r),
        ];
        for (key, value) in required {
            if value.is_none() {
                push(idx, Some(key), Severity::Warning, format!("{key} is missing"));
            }
        }

        let object_is_none = step
            .object
            .as_deref()
            .is_none_or(|o| o.trim().eq_ignore_ascii_case(NONE));
        if object_is_none && MANIPULATION_ACTIONS.contains(&action.to_ascii_uppercase().as_str()) {
            push(
                idx,
                Some(OBJECT),
                Severity::Warning,
                format!("{action} has no target OBJECT"),
            );
        }

        for (key, value) in step.fields() {
            let v = value.trim();
            if key != ACTION && SENTINEL_LOOKALIKES.iter().any(|s| v.eq_ignore_ascii_case(s)) {
                push(
                    idx,
                    Some(key),
                    Severity::Warning,
                    format!("value {v:?} looks like an unknown spelling of {NONE}"),
                );
            }
        }
    }

    let valid = !issues.iter().any(|i| i.severity == Severity::Error);
    ValidationReport { valid, issues }
}

fn is_upper_snake(s: &str) -> bool {
    !s.starts_with('_')
        && !s.ends_with('_')
        && s.chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rap::ActionStep;

    fn step(i: u32, action: &str, object: &str) -> ActionStep {
        ActionStep::new(i, action).with_fields(object, "kitchen", NONE, NONE)
    }

    #[test]
    fn well_formed_single_step() {
        let plan = RobotActionPlan::new(vec![step(1, "MOVE", NONE)]);
        let report = validate(&plan, Finality::Final);
        assert!(report.valid);
        assert!(report.issues.is_empty(), "{:?}", report.issues);
    }

    #[test]
    fn empty_action_is_an_error_naming_the_step() {
        let plan = RobotActionPlan::new(vec![step(1, "MOVE", NONE), step(2, "", "egg")]);
        let report = validate(&plan, Finality::Draft);
        assert!(!report.valid);
        let errors: Vec<_> = report.errors().collect();
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].step_index, Some(2));
        assert_eq!(errors[0].key.as_deref(), Some(ACTION));
    }

    #[test]
    fn gap_in_indices() {
        let plan = RobotActionPlan::new(vec![step(1, "MOVE", NONE), step(3, "GRAB", "egg")]);
        let report = validate(&plan, Finality::Draft);
        assert!(!report.valid);
        let errors: Vec<_> = report.errors().collect();
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].step_index, Some(3));
    }

    #[test]
    fn empty_plan_is_fine_as_draft_only() {
        let plan = RobotActionPlan::new(vec![]);
        assert!(validate(&plan, Finality::Draft).valid);
        assert!(!validate(&plan, Finality::Final).valid);
    }

    #[test]
    fn manipulation_without_object_warns() {
        let plan = RobotActionPlan::new(vec![step(1, "GRAB", "none")]);
        let report = validate(&plan, Finality::Final);
        assert!(report.valid);
        assert_eq!(report.warnings().count(), 1);
    }

    #[test]
    fn sentinel_lookalike_warns() {
        let plan = RobotActionPlan::new(vec![step(1, "MOVE", "N/A")]);
        let report = validate(&plan, Finality::Final);
        assert!(report.valid);
        assert!(report.warnings().any(|i| i.key.as_deref() == Some(OBJECT)));
    }

    #[test]
    fn missing_keys_and_lowercase_action_warn() {
        let plan = RobotActionPlan::new(vec![ActionStep::new(1, "move")]);
        let report = validate(&plan, Finality::Final);
        assert!(report.valid);
        assert_eq!(report.warnings().count(), 5);
    }
}
