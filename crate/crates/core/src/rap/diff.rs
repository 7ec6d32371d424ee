use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{key_vocabulary, ActionStep, RobotActionPlan};

/// A step together with its 1-based position in the plan it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEntry {
    pub position: usize,
    pub step: ActionStep,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldChange {
    pub old: Option<String>,
    pub new: Option<String>,
}

/// An aligned step pair whose fields differ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepChange {
    pub before_position: usize,
    pub after_position: usize,
    pub changes: IndexMap<String, FieldChange>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RapDiff {
    pub added_steps: Vec<StepEntry>,
    pub removed_steps: Vec<StepEntry>,
    pub modified_steps: Vec<StepChange>,
    pub added_keys: BTreeSet<String>,
    pub removed_keys: BTreeSet<String>,
}

impl RapDiff {
    pub fn is_empty(&self) -> bool {
        self.added_steps.is_empty()
            && self.removed_steps.is_empty()
            && self.modified_steps.is_empty()
            && self.added_keys.is_empty()
            && self.removed_keys.is_empty()
    }
}

fn identity(step: &ActionStep) -> (&str, &str) {
    (step.action.as_str(), step.object.as_deref().unwrap_or(""))
}

/// Structural diff of two canonicalized plans.
///
/// Steps are aligned by longest common subsequence over `(ACTION, OBJECT)`.
/// Within each unaligned stretch, leftover steps sharing an `ACTION` are
/// paired in order and reported as modifications; everything else is an
/// addition or removal.
pub fn diff(before: &RobotActionPlan, after: &RobotActionPlan) -> RapDiff {
    let a = &before.steps;
    let b = &after.steps;
    let (n, m) = (a.len(), b.len());

    // lcs[i][j] = LCS length of a[i..] and b[j..]
    let mut lcs = vec![vec![0usize; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            lcs[i][j] = if identity(&a[i]) == identity(&b[j]) {
                lcs[i + 1][j + 1] + 1
            } else {
                lcs[i + 1][j].max(lcs[i][j + 1])
            };
        }
    }

    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let mut gap_a: Vec<usize> = Vec::new();
    let mut gap_b: Vec<usize> = Vec::new();
    let mut out = RapDiff::default();

    let (mut i, mut j) = (0, 0);
    while i < n || j < m {
        if i < n && j < m && identity(&a[i]) == identity(&b[j]) {
            close_gap(a, b, &mut gap_a, &mut gap_b, &mut pairs, &mut out);
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if j == m || (i < n && lcs[i + 1][j] >= lcs[i][j + 1]) {
            gap_a.push(i);
            i += 1;
        } else {
            gap_b.push(j);
            j += 1;
        }
    }
    close_gap(a, b, &mut gap_a, &mut gap_b, &mut pairs, &mut out);

    pairs.sort_unstable();
    for (i, j) in pairs {
        let changes = field_changes(&a[i], &b[j]);
        if !changes.is_empty() {
            out.modified_steps.push(StepChange {
                before_position: i + 1,
                after_position: j + 1,
                changes,
            });
        }
    }
    out.added_steps.sort_by_key(|e| e.position);
    out.removed_steps.sort_by_key(|e| e.position);

    let keys_before = key_vocabulary(before);
    let keys_after = key_vocabulary(after);
    out.added_keys = keys_after.difference(&keys_before).cloned().collect();
    out.removed_keys = keys_before.difference(&keys_after).cloned().collect();
    out
}

/// Resolves one unaligned stretch: same-action steps pair up in order,
/// the rest become removals and additions.
fn close_gap(
    a: &[ActionStep],
    b: &[ActionStep],
    gap_a: &mut Vec<usize>,
    gap_b: &mut Vec<usize>,
    pairs: &mut Vec<(usize, usize)>,
    out: &mut RapDiff,
) {
    let mut next_b = 0;
    let mut used_b = vec![false; gap_b.len()];
    for &i in gap_a.iter() {
        let found = (next_b..gap_b.len()).find(|&k| b[gap_b[k]].action == a[i].action);
        match found {
            Some(k) => {
                used_b[k] = true;
                next_b = k + 1;
                pairs.push((i, gap_b[k]));
            }
            None => out.removed_steps.push(StepEntry {
                position: i + 1,
                step: a[i].clone(),
            }),
        }
    }
    for (k, &j) in gap_b.iter().enumerate() {
        if !used_b[k] {
            out.added_steps.push(StepEntry {
                position: j + 1,
                step: b[j].clone(),
            });
        }
    }
    gap_a.clear();
    gap_b.clear();
}

fn field_changes(old: &ActionStep, new: &ActionStep) -> IndexMap<String, FieldChange> {
    let mut keys: Vec<&str> = new.fields().into_iter().map(|(k, _)| k).collect();
    for (k, _) in old.fields() {
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .filter_map(|k| {
            let (o, n) = (old.get(k), new.get(k));
            (o != n).then(|| {
                (
                    k.to_string(),
                    FieldChange {
                        old: o.map(str::to_string),
                        new: n.map(str::to_string),
                    },
                )
            })
        })
        .collect()
}
