use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    aggregate, compare_before_after, compare_commands, compute_metrics, Aggregate,
    Annotation, CoverageReport, EvalError, SessionMetrics,
};
use crate::dialogue::{
    run_to_completion, AnswerProvider, Checkpoint, DialogueSession, OrdinalAnswers, RefuseAll,
    SessionConfig,
};
use crate::llm::{BackendConfig, ChatBackend, HttpBackend, Script, ScriptedBackend};
use crate::prompt::PromptBundle;
use crate::rap::{RapDiff, RobotActionPlan};
use crate::store::{SessionRecorder, SessionStore};

fn default_trials() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TaskBackend {
    Scripted(ScriptedTrials),
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTrials {
    /// One script per trial.
    pub scripts: Vec<PathBuf>,
    /// Script for the elaborated-command session.
    #[serde(default)]
    pub elaborated_script: Option<PathBuf>,
}

/// One task: a command run for a number of trials, optionally compared
/// against the plan of a more detailed command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub task: String,
    pub command: String,
    #[serde(default = "default_trials")]
    pub trials: u32,
    pub backend: TaskBackend,
    /// Answer file per trial; trials without one refuse every question.
    #[serde(default)]
    pub answers: Vec<PathBuf>,
    #[serde(default)]
    pub config: Option<SessionConfig>,
    #[serde(default)]
    pub elaborated_command: Option<String>,
    #[serde(default)]
    pub annotations: Option<PathBuf>,
    /// 1-based trial whose final plan is compared with the elaborated
    /// plan. Defaults to the last trial.
    #[serde(default)]
    pub coverage_trial: Option<u32>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |m: String| Err(EvalError::InvalidSpec(format!("task {:?}: {m}", self.task)));
        if self.trials < 1 {
            return invalid("trials must be at least 1".into());
        }
        if self.command.trim().is_empty() {
            return invalid("command is empty".into());
        }
        if !self.answers.is_empty() && self.answers.len() != self.trials as usize {
            return invalid(format!(
                "{} answer files for {} trials",
                self.answers.len(),
                self.trials
            ));
        }
        if let Some(n) = self.coverage_trial {
            if n < 1 || n > self.trials {
                return invalid(format!("coverage_trial {n} out of range"));
            }
        }
        if let TaskBackend::Scripted(s) = &self.backend {
            if s.scripts.len() != self.trials as usize {
                return invalid(format!(
                    "{} scripts for {} trials",
                    s.scripts.len(),
                    self.trials
                ));
            }
            if self.elaborated_command.is_some() && s.elaborated_script.is_none() {
                return invalid("elaborated_command needs an elaborated_script".into());
            }
        }
        if let Some(c) = &self.config {
            c.validate()?;
        }
        Ok(())
    }
}

/// An experiment file: either a single task object or `{"tasks": [...]}`.
/// Relative paths resolve against the file's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentFile {
    pub tasks: Vec<ExperimentSpec>,
    pub base_dir: PathBuf,
}

impl ExperimentFile {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Input {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Self::parse(&text, base_dir)
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self, EvalError> {
        let invalid = |e: serde_json::Error| EvalError::InvalidSpec(e.to_string());
        let value: Value = serde_json::from_str(text).map_err(invalid)?;
        let tasks: Vec<ExperimentSpec> = match value.get("tasks") {
            Some(tasks) => serde_json::from_value(tasks.clone()).map_err(invalid)?,
            None => vec![serde_json::from_value(value).map_err(invalid)?],
        };
        if tasks.is_empty() {
            return Err(EvalError::InvalidSpec("no tasks".into()));
        }
        for t in &tasks {
            t.validate()?;
        }
        Ok(Self { tasks, base_dir })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}

/// Reads an annotation file: a JSON list of `{label, present_in}`.
pub struct Annotations;

impl Annotations {
    pub fn load(path: &Path) -> Result<Vec<Annotation>, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|e| EvalError::Input {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| EvalError::Input {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub bundle: Arc<PromptBundle>,
    /// Where session records are written, if anywhere.
    pub store: Option<SessionStore>,
    /// Endpoint settings for live tasks.
    pub live: BackendConfig,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            bundle: Arc::new(PromptBundle::defaults()),
            store: None,
            live: BackendConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub trial: u32,
    pub session_id: String,
    pub metrics: SessionMetrics,
    pub final_rap: Option<Value>,
    pub before_after: RapDiff,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Means {
    pub trials: usize,
    pub mean_iterations: String,
    pub mean_question_turns: String,
    pub mean_questions: String,
}

impl From<&Aggregate> for Means {
    fn from(a: &Aggregate) -> Self {
        Self {
            trials: a.trials,
            mean_iterations: a.mean_iterations_2dp(),
            mean_question_turns: a.mean_question_turns_2dp(),
            mean_questions: a.mean_questions_2dp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageSection {
    pub elaborated_command: String,
    pub elaborated_session_id: String,
    pub compared_trial: u32,
    pub report: CoverageReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskReport {
    pub task: String,
    pub command: String,
    pub deterministic: bool,
    pub trials: Vec<TrialReport>,
    pub means: Means,
    pub coverage: Option<CoverageSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub deterministic: bool,
    pub tasks: Vec<TaskReport>,
    pub pooled: Means,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>5} {:>10} {:>14} {:>9} {:<9} session",
            "task", "trial", "iterations", "question_turns", "questions", "status"
        );
        for t in &self.tasks {
            for r in &t.trials {
                let _ = writeln!(
                    out,
                    "{:<12} {:>5} {:>10} {:>14} {:>9} {:<9} {}",
                    t.task,
                    r.trial,
                    r.metrics.iterations,
                    r.metrics.question_turns,
                    r.metrics.questions_total,
                    r.metrics.final_status.to_string(),
                    r.session_id
                );
            }
            let _ = writeln!(
                out,
                "{:<12} {:>5} {:>10} {:>14} {:>9}",
                t.task,
                "mean",
                t.means.mean_iterations,
                t.means.mean_question_turns,
                t.means.mean_questions
            );
        }
        let _ = writeln!(
            out,
            "{:<12} {:>5} {:>10} {:>14} {:>9}",
            "pooled",
            "mean",
            self.pooled.mean_iterations,
            self.pooled.mean_question_turns,
            self.pooled.mean_questions
        );
        for t in &self.tasks {
            if let Some(c) = &t.coverage {
                let _ = writeln!(out, "\n{} coverage vs {:?}", t.task, c.elaborated_command);
                let _ = writeln!(out, "  keys only in terse plan:     {:?}", c.report.keys_only_in_a);
                let _ = writeln!(out, "  keys only in elaborated plan: {:?}", c.report.keys_only_in_b);
                let _ = writeln!(
                    out,
                    "  steps: {} vs {}",
                    c.report.step_count_a, c.report.step_count_b
                );
                for item in &c.report.narrative_items {
                    let _ = writeln!(out, "  - {item}");
                }
            }
        }
        if !self.deterministic {
            out.push_str("\n(non-deterministic: live backend)\n");
        }
        out
    }
}

fn load_script(path: &Path) -> Result<ScriptedBackend, EvalError> {
    let script = Script::load(path).map_err(|e| EvalError::Input {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(ScriptedBackend::new(script))
}

fn run_one(
    command: &str,
    config: &SessionConfig,
    opts: &ExperimentOptions,
    backend: &dyn ChatBackend,
    answers: &mut dyn AnswerProvider,
) -> Result<DialogueSession, EvalError> {
    let mut session =
        crate::dialogue::start_session(command, config.clone(), opts.bundle.clone())?;
    let mut recorder = match &opts.store {
        Some(store) => Some(SessionRecorder::create(store.clone(), &session)?),
        None => None,
    };
    let checkpoint: &mut dyn Checkpoint = match recorder.as_mut() {
        Some(r) => r,
        None => &mut (),
    };
    run_to_completion(&mut session, backend, answers, checkpoint)?;
    Ok(session)
}

fn last_plan(session: &DialogueSession) -> Option<&RobotActionPlan> {
    session.rap_versions().last()
}

/// Runs every task of `file` and aggregates the results per task and
/// pooled over all tasks.
pub fn run_experiment(
    file: &ExperimentFile,
    opts: &ExperimentOptions,
) -> Result<ExperimentReport, EvalError> {
    let mut tasks = Vec::new();
    let mut pooled = Vec::new();
    for spec in &file.tasks {
        spec.validate()?;
        let config = spec.config.clone().unwrap_or_default();
        let live = match spec.backend {
            TaskBackend::Live => {
                let mut cfg = opts.live.clone();
                cfg.model = config.model.clone();
                cfg.temperature = config.temperature;
                Some(HttpBackend::from_env(cfg)?)
            }
            TaskBackend::Scripted(_) => None,
        };

        let mut trials = Vec::new();
        let mut sessions = Vec::new();
        for n in 1..=spec.trials {
            let idx = (n - 1) as usize;
            let mut answers: Box<dyn AnswerProvider> = match spec.answers.get(idx) {
                Some(p) => Box::new(
                    OrdinalAnswers::load(&file.resolve(p)).map_err(|e| EvalError::Input {
                        path: p.display().to_string(),
                        message: e.to_string(),
                    })?,
                ),
                None => Box::new(RefuseAll),
            };
            let session = match (&spec.backend, &live) {
                (TaskBackend::Scripted(s), _) => {
                    let backend = load_script(&file.resolve(&s.scripts[idx]))?;
                    run_one(&spec.command, &config, opts, &backend, answers.as_mut())?
                }
                (TaskBackend::Live, Some(backend)) => {
                    run_one(&spec.command, &config, opts, backend, answers.as_mut())?
                }
                (TaskBackend::Live, None) => unreachable!("live backend built above"),
            };
            let metrics = compute_metrics(&session)?;
            trials.push(TrialReport {
                trial: n,
                session_id: session.session_id().to_string(),
                metrics,
                final_rap: last_plan(&session).map(|p| p.to_json()),
                before_after: compare_before_after(&session)?,
            });
            sessions.push(session);
        }

        let coverage = match &spec.elaborated_command {
            Some(elaborated) => {
                let mut refuse = RefuseAll;
                let session = match (&spec.backend, &live) {
                    (TaskBackend::Scripted(s), _) => {
                        let path = s.elaborated_script.as_ref().expect("validated");
                        let backend = load_script(&file.resolve(path))?;
                        run_one(elaborated, &config, opts, &backend, &mut refuse)?
                    }
                    (TaskBackend::Live, Some(backend)) => {
                        run_one(elaborated, &config, opts, backend, &mut refuse)?
                    }
                    (TaskBackend::Live, None) => unreachable!("live backend built above"),
                };
                let compared = spec.coverage_trial.unwrap_or(spec.trials);
                let annotations = match &spec.annotations {
                    Some(p) => Annotations::load(&file.resolve(p))?,
                    None => Vec::new(),
                };
                let terse = last_plan(&sessions[(compared - 1) as usize])
                    .ok_or_else(|| EvalError::IncompleteSession("terse trial has no RAP".into()))?;
                let rich = last_plan(&session).ok_or_else(|| {
                    EvalError::IncompleteSession("elaborated session has no RAP".into())
                })?;
                Some(CoverageSection {
                    elaborated_command: elaborated.clone(),
                    elaborated_session_id: session.session_id().to_string(),
                    compared_trial: compared,
                    report: compare_commands(terse, rich, &annotations),
                })
            }
            None => None,
        };

        let metrics: Vec<SessionMetrics> = trials.iter().map(|t| t.metrics).collect();
        pooled.extend_from_slice(&metrics);
        tasks.push(TaskReport {
            task: spec.task.clone(),
            command: spec.command.clone(),
            deterministic: live.is_none(),
            trials,
            means: Means::from(&aggregate(&metrics)?),
            coverage,
        });
    }
    let deterministic = tasks.iter().all(|t| t.deterministic);
    Ok(ExperimentReport {
        deterministic,
        pooled: Means::from(&aggregate(&pooled)?),
        tasks,
    })
}
