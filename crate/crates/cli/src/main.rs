//! `clarify-plan`: build robot action plans with a language model that asks
//! for what it is missing.
//!
//! Exit codes: 0 plan finished, 1 usage or input error, 2 model backend
//! failure, 3 iteration cap reached, 4 replay divergence or corrupt record.

mod render;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use clarify_api::{BackendFactory, LiveBackends, ScriptedBackends, ServeConfig};
use clarify_core::dialogue::{
    run_to_completion, start_session, AnswerProvider, AnswerSet, AnswerText, DialogueError,
    DialogueSession, OrdinalAnswers, ProviderError, Question, SessionConfig, SessionStatus,
};
use clarify_core::eval::{run_experiment, EvalError, ExperimentFile, ExperimentOptions};
use clarify_core::llm::{BackendConfig, ChatBackend, HttpBackend, Script, ScriptedBackend};
use clarify_core::prompt::{load_components, AssetSource, PromptBundle};
use clarify_core::store::{load_file, replay, SessionRecorder, SessionStore, StoreError};

#[derive(Debug, Parser)]
#[command(name = "clarify-plan", version, about = "Interactive robot action planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan a command, asking questions until the plan is complete.
    Plan(PlanArgs),
    /// Re-run a recorded session offline and check it matches.
    Replay {
        /// Session id or path to a record file.
        target: String,
        #[arg(long, default_value = "sessions")]
        sessions_dir: PathBuf,
    },
    /// Run an experiment spec and report per-trial and mean metrics.
    Experiment {
        spec: PathBuf,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: bool,
        /// Write a record for every session run.
        #[arg(long)]
        sessions_dir: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Inspect stored sessions.
    Sessions {
        #[command(subcommand)]
        action: SessionsAction,
        #[arg(long, global = true, default_value = "sessions")]
        sessions_dir: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum SessionsAction {
    List,
    Show { id: String },
}

#[derive(Debug, Args)]
struct LiveArgs {
    /// Base URL of an OpenAI-compatible API.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f32>,
}

#[derive(Debug, Args)]
struct PlanArgs {
    command: String,
    /// Canned model responses (JSON list) instead of the live API.
    #[arg(long, conflicts_with_all = ["endpoint", "model", "temperature"])]
    scripted: Option<PathBuf>,
    /// Answer file (ordinal to text); without it questions are asked on stdin.
    #[arg(long)]
    answers: Option<PathBuf>,
    /// Directory overriding the prompt components.
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    max_iter: Option<u32>,
    /// Directory for the session record.
    #[arg(long, default_value = "sessions")]
    out: PathBuf,
    /// Explicit session id instead of a random one.
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    json: bool,
    #[command(flatten)]
    live: LiveArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "sessions")]
    sessions_dir: PathBuf,
    /// Static web client to serve under `/`.
    #[arg(long)]
    serve_ui: Option<PathBuf>,
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// Canned model responses shared by every session.
    #[arg(long)]
    scripted: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }

    fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self::new(1, error)
    }
}

type Outcome = Result<u8, Failure>;

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn dialogue_code(e: &DialogueError) -> u8 {
    match e {
        DialogueError::BackendFailure(_) | DialogueError::RepairExhausted { .. } => 2,
        _ => 1,
    }
}

fn store_code(e: &StoreError) -> u8 {
    match e {
        StoreError::CorruptRecord { .. } | StoreError::SequenceGap { .. } => 4,
        _ => 1,
    }
}

fn eval_code(e: &EvalError) -> u8 {
    match e {
        EvalError::Dialogue(d) => dialogue_code(d),
        EvalError::Backend(_) => 2,
        EvalError::Store(s) => store_code(s),
        _ => 1,
    }
}

fn bundle(prompts: Option<&Path>) -> Result<PromptBundle, Failure> {
    let source = prompts.map_or(AssetSource::Embedded, AssetSource::Directory);
    load_components(source).map_err(Failure::usage)
}

fn load_script(path: &Path) -> Result<Script, Failure> {
    Script::load(path)
        .with_context(|| format!("cannot load scripted responses from {}", path.display()))
        .map_err(Failure::usage)
}

fn live_config(live: &LiveArgs, config: &SessionConfig) -> BackendConfig {
    let mut cfg = BackendConfig::default();
    if let Some(e) = &live.endpoint {
        cfg.endpoint = e.clone();
    }
    cfg.model = config.model.clone();
    cfg.temperature = config.temperature;
    cfg
}

/// Asks each question on stderr and reads one line per answer. A blank
/// line or `/refuse` declines the question.
struct StdinAnswers;

impl AnswerProvider for StdinAnswers {
    fn answers(&mut self, session: &DialogueSession, pending: &[Question]) -> Result<AnswerSet, ProviderError> {
        let mut err = std::io::stderr().lock();
        if let Some(plan) = session.rap_versions().last() {
            let _ = writeln!(err, "\ncurrent plan (r{}):\n{}", plan.revision, render::rap_table(plan));
        }
        let _ = writeln!(err, "The planner needs more information. Blank line or /refuse declines.");
        let stdin = std::io::stdin();
        let mut lines = stdin.lock();
        let mut answers = Vec::with_capacity(pending.len());
        for q in pending {
            let _ = write!(err, "[{}] {}\n> ", q.id, q.text);
            let _ = err.flush();
            let mut line = String::new();
            if lines.read_line(&mut line)? == 0 {
                return Err(ProviderError::Exhausted(format!("{} (stdin closed)", q.id)));
            }
            let line = line.trim();
            let text = if line == "/refuse" {
                AnswerText::Refused
            } else {
                AnswerText::from_input(line)
            };
            answers.push(clarify_core::dialogue::Answer {
                question_id: q.id.clone(),
                text,
            });
        }
        Ok(AnswerSet::new(answers))
    }
}

fn cmd_plan(args: PlanArgs) -> Outcome {
    if args.command.trim().is_empty() {
        return Err(Failure::usage(anyhow!(
            "command is empty\n\nUsage: clarify-plan plan <COMMAND> [--scripted FILE] [--answers FILE]"
        )));
    }
    let bundle = Arc::new(bundle(args.prompts.as_deref())?);
    let mut config = SessionConfig::default();
    if let Some(n) = args.max_iter {
        config.max_iterations = n;
    }
    if let Some(m) = &args.live.model {
        config.model = m.clone();
    }
    if let Some(t) = args.live.temperature {
        config.temperature = t;
    }

    let backend: Box<dyn ChatBackend> = match &args.scripted {
        Some(path) => Box::new(ScriptedBackend::new(load_script(path)?)),
        None => Box::new(
            HttpBackend::from_env(live_config(&args.live, &config)).map_err(|e| Failure::new(2, e))?,
        ),
    };
    let mut answers: Box<dyn AnswerProvider> = match &args.answers {
        Some(path) => Box::new(
            OrdinalAnswers::load(path)
                .with_context(|| format!("cannot load answers from {}", path.display()))
                .map_err(Failure::usage)?,
        ),
        None => Box::new(StdinAnswers),
    };

    let mut session = match &args.id {
        Some(id) => DialogueSession::with_id(id.clone(), &args.command, config, bundle),
        None => start_session(&args.command, config, bundle),
    }
    .map_err(Failure::usage)?;
    let store = SessionStore::open(&args.out).map_err(Failure::usage)?;
    let mut recorder = SessionRecorder::create(store, &session).map_err(Failure::usage)?;
    let result = run_to_completion(&mut session, backend.as_ref(), answers.as_mut(), &mut recorder);
    eprintln!("session {} recorded at {}", session.session_id(), recorder.path().display());
    let result = result.map_err(|e| Failure::new(dialogue_code(&e), e))?;

    if args.json {
        let out = serde_json::json!({
            "session_id": session.session_id(),
            "status": result.status,
            "metrics": result.metrics,
            "final_rap": result.final_rap.as_ref().map(|p| p.to_json()),
        });
        emit(&format!("{}\n", serde_json::to_string_pretty(&out).expect("output serializes")));
    } else if let Some(plan) = &result.final_rap {
        emit(&render::rap_table(plan));
    }
    Ok(match result.status {
        SessionStatus::Truncated => {
            eprintln!("stopped at the iteration cap; the plan may still be incomplete");
            3
        }
        _ => 0,
    })
}

fn cmd_replay(target: &str, sessions_dir: &Path) -> Outcome {
    let path = Path::new(target);
    let record = if path.is_file() {
        load_file(path)
    } else {
        SessionStore::open(sessions_dir).and_then(|s| s.load_session(target))
    }
    .map_err(|e| Failure::new(store_code(&e), e))?;
    let session = replay(&record).map_err(|e| Failure::new(4, e))?;
    emit(&format!(
        "replay ok: {} events match ({}, {} RAP versions)\n",
        session.events().len(),
        session.status(),
        session.rap_versions().len()
    ));
    Ok(0)
}

fn cmd_experiment(spec: &Path, out: Option<&Path>, json: bool, sessions_dir: Option<&Path>) -> Outcome {
    let file = ExperimentFile::load(spec).map_err(|e| Failure::new(eval_code(&e), e))?;
    let mut opts = ExperimentOptions::default();
    if let Some(dir) = sessions_dir {
        opts.store = Some(SessionStore::open(dir).map_err(Failure::usage)?);
    }
    let report = run_experiment(&file, &opts).map_err(|e| Failure::new(eval_code(&e), e))?;
    if let Some(path) = out {
        std::fs::write(path, report.to_json())
            .with_context(|| format!("cannot write report to {}", path.display()))
            .map_err(Failure::usage)?;
    }
    if json {
        emit(&format!("{}\n", report.to_json()));
    } else {
        emit(&report.to_table());
    }
    Ok(0)
}

fn cmd_serve(args: ServeArgs) -> Outcome {
    let bundle = Arc::new(bundle(args.prompts.as_deref())?);
    let factory: Arc<dyn BackendFactory> = match &args.scripted {
        Some(path) => Arc::new(ScriptedBackends::new(load_script(path)?)),
        None => {
            let mut base = BackendConfig::default();
            if let Some(e) = &args.endpoint {
                base.endpoint = e.clone();
            }
            Arc::new(LiveBackends { base })
        }
    };
    let state = clarify_api::state_for(&args.sessions_dir, factory, bundle).map_err(Failure::usage)?;
    let config = ServeConfig {
        bind: args.bind,
        port: args.port,
        cors_origins: args.cors_origins,
        serve_ui: args.serve_ui,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(Failure::usage)?;
    runtime
        .block_on(clarify_api::serve(config, state))
        .context("server failed")
        .map_err(Failure::usage)?;
    Ok(0)
}

fn cmd_sessions(action: SessionsAction, dir: &Path) -> Outcome {
    let store = SessionStore::open(dir).map_err(Failure::usage)?;
    match action {
        SessionsAction::List => {
            let list = store.list_sessions().map_err(Failure::usage)?;
            if list.is_empty() {
                emit("no sessions\n");
            } else {
                emit(&render::summaries(&list));
            }
        }
        SessionsAction::Show { id } => {
            let record = store.load_session(&id).map_err(|e| Failure::new(store_code(&e), e))?;
            let session = replay(&record).map_err(|e| Failure::new(4, e))?;
            emit(&render::transcript(&session));
        }
    }
    Ok(0)
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Plan(args) => cmd_plan(args),
        Command::Replay { target, sessions_dir } => cmd_replay(&target, &sessions_dir),
        Command::Experiment { spec, out, json, sessions_dir } => {
            cmd_experiment(&spec, out.as_deref(), json, sessions_dir.as_deref())
        }
        Command::Serve(args) => cmd_serve(args),
        Command::Sessions { action, sessions_dir } => cmd_sessions(action, &sessions_dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
