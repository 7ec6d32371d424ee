//! Robot Action Plans: the ordered list of motion records the planner
//! produces, together with parsing, validation, canonicalization and
//! structural diffing.
//!
//! A plan on disk (and inside model output) is a JSON array of step
//! objects. Each step carries five required keys (`ACTION`, `OBJECT`,
//! `ROBOT_POSITION`, `GRIPPER_L`, `GRIPPER_R`) and any number of extension
//! keys the model chose to add (`TIME`, `CUT_SIZE`, `LOCATION`, ...).

mod canonical;
mod diff;
mod extract;
mod parse;
mod validate;

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};

pub use canonical::{canonicalize, normalize_key};
pub use diff::{diff, FieldChange, RapDiff, StepChange, StepEntry};
pub use parse::{parse_rap, parse_steps_value, RapParseError};
pub use validate::{validate, Finality, Issue, Severity, ValidationReport};

pub const ACTION: &str = "ACTION";
pub const OBJECT: &str = "OBJECT";
pub const ROBOT_POSITION: &str = "ROBOT_POSITION";
pub const GRIPPER_L: &str = "GRIPPER_L";
pub const GRIPPER_R: &str = "GRIPPER_R";

/// The five keys every step is expected to carry, in canonical order.
pub const REQUIRED_KEYS: [&str; 5] = [ACTION, OBJECT, ROBOT_POSITION, GRIPPER_L, GRIPPER_R];

/// Sentinel for "nothing": an empty gripper, an action without a target.
pub const NONE: &str = "NONE";

/// Key used to carry an explicit step ordinal when it differs from the
/// step's position in the list.
pub const STEP_KEY: &str = "STEP";

/// One motion record of a plan.
///
/// `object`, `robot_position` and the grippers are `None` when the source
/// omitted the key entirely; the sentinel [`NONE`] is a present value.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ActionStep {
    pub step_index: u32,
    pub action: String,
    pub object: Option<String>,
    pub robot_position: Option<String>,
    pub gripper_l: Option<String>,
    pub gripper_r: Option<String>,
    pub extensions: IndexMap<String, String>,
}

impl ActionStep {
    pub fn new(step_index: u32, action: impl Into<String>) -> Self {
        Self {
            step_index,
            action: action.into(),
            ..Self::default()
        }
    }

    /// Builder-style helper filling all four descriptor fields.
    pub fn with_fields(
        mut self,
        object: &str,
        robot_position: &str,
        gripper_l: &str,
        gripper_r: &str,
    ) -> Self {
        self.object = Some(object.to_string());
        self.robot_position = Some(robot_position.to_string());
        self.gripper_l = Some(gripper_l.to_string());
        self.gripper_r = Some(gripper_r.to_string());
        self
    }

    pub fn with_extension(mut self, key: &str, value: &str) -> Self {
        self.extensions.insert(key.to_string(), value.to_string());
        self
    }

    /// Looks up a value by canonical key name, required or extension.
    pub fn get(&self, key: &str) -> Option<&str> {
        match key {
            ACTION => Some(self.action.as_str()),
            OBJECT => self.object.as_deref(),
            ROBOT_POSITION => self.robot_position.as_deref(),
            GRIPPER_L => self.gripper_l.as_deref(),
            GRIPPER_R => self.gripper_r.as_deref(),
            other => self.extensions.get(other).map(String::as_str),
        }
    }

    /// All present `(key, value)` pairs in canonical serialization order.
    pub fn fields(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::with_capacity(5 + self.extensions.len());
        out.push((ACTION, self.action.as_str()));
        let optional = [
            (OBJECT, &self.object),
            (ROBOT_POSITION, &self.robot_position),
            (GRIPPER_L, &self.gripper_l),
            (GRIPPER_R, &self.gripper_r),
        ];
        for (key, value) in optional {
            if let Some(v) = value {
                out.push((key, v.as_str()));
            }
        }
        for (k, v) in &self.extensions {
            out.push((k.as_str(), v.as_str()));
        }
        out
    }

    /// Key names present on this step. `ACTION` counts as present when
    /// non-empty.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.fields()
            .into_iter()
            .filter(|(k, v)| *k != ACTION || !v.is_empty())
            .map(|(k, _)| k)
    }

    fn to_json(&self, position: usize) -> Value {
        let mut map = Map::new();
        if self.step_index as usize != position {
            map.insert(STEP_KEY.to_string(), Value::from(self.step_index));
        }
        for (k, v) in self.fields() {
            map.insert(k.to_string(), Value::String(v.to_string()));
        }
        Value::Object(map)
    }
}

/// An ordered list of steps plus the command and loop iteration that
/// produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RobotActionPlan {
    #[serde(serialize_with = "ser_steps", deserialize_with = "de_steps")]
    pub steps: Vec<ActionStep>,
    #[serde(default)]
    pub source_command: String,
    #[serde(default = "first_revision")]
    pub revision: u32,
}

fn first_revision() -> u32 {
    1
}

fn ser_steps<S: Serializer>(steps: &[ActionStep], s: S) -> Result<S::Ok, S::Error> {
    steps_to_json(steps).serialize(s)
}

fn de_steps<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<ActionStep>, D::Error> {
    let value = Value::deserialize(d)?;
    parse_steps_value(&value).map_err(serde::de::Error::custom)
}

fn steps_to_json(steps: &[ActionStep]) -> Value {
    Value::Array(
        steps
            .iter()
            .enumerate()
            .map(|(i, s)| s.to_json(i + 1))
            .collect(),
    )
}

impl RobotActionPlan {
    pub fn new(steps: Vec<ActionStep>) -> Self {
        Self {
            steps,
            source_command: String::new(),
            revision: 1,
        }
    }

    pub fn with_context(mut self, source_command: impl Into<String>, revision: u32) -> Self {
        self.source_command = source_command.into();
        self.revision = revision;
        self
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// The plan as the RAP file format: a JSON array of step objects.
    pub fn to_json(&self) -> Value {
        steps_to_json(&self.steps)
    }

    /// Canonical pretty-printed serialization of the step array.
    pub fn serialize(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("plan serializes")
    }
}

/// Union of key names across all steps of a plan.
pub fn key_vocabulary(plan: &RobotActionPlan) -> BTreeSet<String> {
    plan.steps
        .iter()
        .flat_map(|s| s.keys().map(str::to_string).collect::<Vec<_>>())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_step() -> ActionStep {
        ActionStep::new(1, "MOVE").with_fields(NONE, "kitchen", NONE, NONE)
    }

    #[test]
    fn vocabulary_of_empty_plan_is_empty() {
        assert!(key_vocabulary(&RobotActionPlan::new(vec![])).is_empty());
    }

    #[test]
    fn vocabulary_of_required_only_step() {
        let vocab = key_vocabulary(&RobotActionPlan::new(vec![full_step()]));
        let expected: BTreeSet<String> = REQUIRED_KEYS.iter().map(|k| k.to_string()).collect();
        assert_eq!(vocab, expected);
    }

    #[test]
    fn vocabulary_includes_extensions() {
        let plan = RobotActionPlan::new(vec![
            full_step(),
            ActionStep::new(2, "COOK")
                .with_fields("egg", "stove", NONE, "pan")
                .with_extension("TIME", "3 minutes"),
        ]);
        assert!(key_vocabulary(&plan).contains("TIME"));
    }

    #[test]
    fn serialization_key_order() {
        let step = full_step().with_extension("TIME", "1 minute");
        let plan = RobotActionPlan::new(vec![step]);
        let text = serde_json::to_string(&plan.to_json()).unwrap();
        assert_eq!(
            text,
            r#"[{"ACTION":"MOVE","OBJECT":"NONE","ROBOT_POSITION":"kitchen","GRIPPER_L":"NONE","GRIPPER_R":"NONE","TIME":"1 minute"}]"#
        );
    }

    #[test]
    fn explicit_step_key_only_when_out_of_position() {
        let plan = RobotActionPlan::new(vec![full_step(), ActionStep::new(3, "GRAB")]);
        let value = plan.to_json();
        assert!(value[0].get(STEP_KEY).is_none());
        assert_eq!(value[1][STEP_KEY], Value::from(3));
    }

    #[test]
    fn plan_serde_round_trip() {
        let plan = RobotActionPlan::new(vec![full_step()]).with_context("Cut carrots.", 2);
        let json = serde_json::to_string(&plan).unwrap();
        let back: RobotActionPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
    }
}
