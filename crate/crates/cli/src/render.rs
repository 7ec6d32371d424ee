use std::fmt::Write;

use clarify_core::dialogue::{AnswerText, Artifact, DialogueSession, LoopPhase, Question, Turn};
use clarify_core::rap::{RobotActionPlan, REQUIRED_KEYS};
use clarify_core::store::SessionSummary;

const EMPTY: &str = "-";

/// Aligned table: `STEP`, the required keys, then extension keys in order
/// of first appearance.
pub fn rap_table(plan: &RobotActionPlan) -> String {
    let mut columns: Vec<String> = REQUIRED_KEYS.iter().map(|k| k.to_string()).collect();
    for step in &plan.steps {
        for key in step.extensions.keys() {
            if !columns.contains(key) {
                columns.push(key.clone());
            }
        }
    }
    let mut rows = vec![std::iter::once("STEP".to_string()).chain(columns.iter().cloned()).collect::<Vec<_>>()];
    for (i, step) in plan.steps.iter().enumerate() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(columns.iter().map(|c| step.get(c).unwrap_or(EMPTY).to_string()));
        rows.push(row);
    }
    align(&rows)
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            let _ = write!(line, "{cell:<w$}", w = widths[c]);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

pub fn questions(qs: &[Question]) -> String {
    qs.iter()
        .map(|q| format!("  [{}] {}\n", q.id, q.text))
        .collect()
}

pub fn summaries(list: &[SessionSummary]) -> String {
    let mut rows = vec![["SESSION", "CREATED", "STATUS", "RAPS", "EVENTS", "COMMAND"]
        .map(String::from)
        .to_vec()];
    for s in list {
        rows.push(vec![
            s.session_id.clone(),
            s.created_at.format("%Y-%m-%d %H:%M:%S").to_string(),
            s.status.to_string(),
            s.rap_versions.to_string(),
            s.events.to_string(),
            s.command.clone(),
        ]);
    }
    align(&rows)
}

/// Full transcript: each RAP revision as a table and every question with
/// its answer.
pub fn transcript(session: &DialogueSession) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "session  {}", session.session_id());
    let _ = writeln!(out, "command  {}", session.command());
    let _ = writeln!(out, "status   {} (phase {})", session.status(), session.phase());
    let mut asked: Vec<Question> = Vec::new();
    for turn in session.turns() {
        match turn {
            Turn::Exchange { iteration, artifact, .. } => match artifact {
                Artifact::Rap { revision } => {
                    if let Some(plan) = session.rap_versions().get(*revision as usize - 1) {
                        let _ = writeln!(out, "\nRAP r{revision} (iteration {iteration})");
                        out.push_str(&rap_table(plan));
                    }
                }
                Artifact::MalformedRap { error } => {
                    let _ = writeln!(out, "\nunreadable RAP (iteration {iteration}): {error}");
                }
                Artifact::Analysis(a) if a.is_none => {
                    let _ = writeln!(out, "\nanalysis: nothing missing");
                }
                Artifact::Analysis(a) => {
                    let _ = writeln!(out, "\nmissing (iteration {iteration}):");
                    for item in &a.missing_items {
                        let _ = writeln!(out, "  - {item}");
                    }
                }
                Artifact::Questions(q) if q.is_none => {
                    let _ = writeln!(out, "\nquestions: none");
                }
                Artifact::Questions(q) => {
                    asked.extend(q.questions.iter().cloned());
                }
            },
            Turn::Answers { iteration, answers, .. } => {
                let _ = writeln!(out, "\nQ&A (iteration {iteration}):");
                for a in &answers.answers {
                    let text = asked
                        .iter()
                        .find(|q| q.id == a.question_id)
                        .map_or("?", |q| q.text.as_str());
                    let reply = match &a.text {
                        AnswerText::Text(t) => t.as_str(),
                        AnswerText::Refused => "(refused)",
                    };
                    let _ = writeln!(out, "  [{}] {text}\n       {reply}", a.question_id);
                }
            }
        }
    }
    if session.phase() == LoopPhase::AwaitAnswers {
        let _ = writeln!(out, "\nwaiting for answers:");
        out.push_str(&questions(session.pending_questions()));
    }
    out
}
