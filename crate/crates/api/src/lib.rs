//! HTTP service over planning sessions.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | start a session, `201` |
//! | GET | `/sessions` | list stored sessions |
//! | GET | `/sessions/{id}` | current view |
//! | POST | `/sessions/{id}/answers` | answer pending questions, `202` |
//! | POST | `/sessions/{id}/resume` | retry after a backend failure, `202` |
//! | GET | `/sessions/{id}/diff?from=&to=` | diff of two RAP revisions |
//! | GET | `/sessions/{id}/events?after=` | server-sent event log |
//!
//! Model calls run on background workers; handlers return immediately.

mod backend;
mod error;
mod state;

use std::collections::VecDeque;
use std::convert::Infallible;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use clarify_core::dialogue::{start_session, AnswerSet, DialogueError, SessionConfig};
use clarify_core::eval::metrics_from_events;
use clarify_core::event::{EventKind, SessionEvent};
use clarify_core::rap::diff;
use futures::Stream;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::ServeDir;

pub use backend::{BackendFactory, FnBackends, LiveBackends, ScriptedBackends};
pub use error::ApiError;
pub use state::AppState;

use state::{is_await, Slot};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub bind: String,
    pub port: u16,
    /// Origins allowed by CORS; empty allows any.
    pub cors_origins: Vec<String>,
    /// Static files served under `/`.
    pub serve_ui: Option<PathBuf>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            cors_origins: Vec::new(),
            serve_ui: None,
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/answers", post(post_answers))
        .route("/sessions/:id/resume", post(resume))
        .route("/sessions/:id/diff", get(get_diff))
        .route("/sessions/:id/events", get(get_events))
        .with_state(state)
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
    layer.allow_origin(AllowOrigin::list(list))
}

/// The full application: API routes, CORS and optional static UI.
pub fn app(state: AppState, config: &ServeConfig) -> Router {
    let mut app = router(state);
    if let Some(dir) = &config.serve_ui {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(cors(&config.cors_origins))
}

pub async fn serve(config: ServeConfig, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind((config.bind.as_str(), config.port)).await?;
    let addr: SocketAddr = listener.local_addr()?;
    log::info!("listening on http://{addr}");
    eprintln!("listening on http://{addr}");
    axum::serve(listener, app(state, &config)).await
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// Applies overrides onto the default configuration. Unknown keys fail.
fn merge_config(overrides: Option<&Value>) -> Result<SessionConfig, ApiError> {
    let mut base = serde_json::to_value(SessionConfig::default()).expect("config serializes");
    match overrides {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (k, v) in map {
                if base.get(k).is_none() {
                    return Err(ApiError::bad_request(format!("unknown config key {k:?}")));
                }
                base[k] = v.clone();
            }
        }
        Some(_) => return Err(ApiError::bad_request("config must be an object")),
    }
    let config: SessionConfig =
        serde_json::from_value(base).map_err(|e| ApiError::bad_request(e.to_string()))?;
    config
        .validate()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(config)
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let body: Value = parse_json(&body)?;
    let command = body.get("command").and_then(Value::as_str).unwrap_or_default();
    if command.trim().is_empty() {
        return Err(ApiError::bad_request("command is empty"));
    }
    let config = merge_config(body.get("config"))?;
    let backend = state
        .factory
        .create(&config, 0)
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, format!("backend unavailable: {e}")))?;
    let session = start_session(command, config.clone(), state.bundle.clone())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let id = session.session_id().to_string();
    let slot = state.insert(session, backend)?;
    state
        .kick(&slot)
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()))?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "session_id": id, "command": command.trim(), "config": config })),
    ))
}

async fn list_sessions(State(state): State<AppState>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(json!(state.store.list_sessions()?)))
}

fn view(slot: &Slot) -> Value {
    let g = slot.lock();
    let s = &g.session;
    let metrics = metrics_from_events(s.events());
    let raps: Vec<Value> = s
        .rap_versions()
        .iter()
        .map(|p| json!({ "revision": p.revision, "steps": p.to_json() }))
        .collect();
    json!({
        "session_id": s.session_id(),
        "command": s.command(),
        "config": s.config(),
        "phase": s.phase(),
        "status": s.status(),
        "iteration": s.iteration(),
        "pending_questions": s.pending_questions(),
        "rap_versions": raps,
        "metrics": metrics,
        "busy": g.busy,
        "last_error": s.last_error(),
        "event_count": s.events().len(),
    })
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let slot = state.slot(&id)?;
    Ok(Json(view(&slot)))
}

/// Answers as an order-independent list of `(question_id, wire text)`.
fn answer_key(set: &AnswerSet) -> Vec<(String, String)> {
    let mut v: Vec<_> = set
        .answers
        .iter()
        .map(|a| (a.question_id.clone(), a.text.as_wire().to_string()))
        .collect();
    v.sort();
    v
}

fn last_submitted(events: &[SessionEvent]) -> Option<AnswerSet> {
    let e = events.iter().rev().find(|e| e.kind == EventKind::AnswersSubmitted)?;
    serde_json::from_value(e.payload["answers"].clone()).ok()
}

async fn post_answers(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let slot = state.slot(&id)?;
    let set: AnswerSet = parse_json(&body)?;
    {
        let mut g = slot.lock();
        if g.busy || !is_await(&g.session) {
            let repeat = last_submitted(g.session.events())
                .is_some_and(|prev| answer_key(&prev) == answer_key(&set));
            if repeat {
                return Ok((StatusCode::ACCEPTED, Json(json!({ "session_id": id, "duplicate": true }))));
            }
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("session is in phase {}, not await_answers", g.session.phase()),
            ));
        }
        match g.session.submit_answers(set) {
            Ok(()) => slot.commit(g),
            Err(e @ DialogueError::MissingAnswer(_)) => {
                let DialogueError::MissingAnswer(ids) = &e else { unreachable!() };
                let ids = json!(ids);
                return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()).with("missing", ids));
            }
            Err(e @ (DialogueError::UnknownQuestionId(_) | DialogueError::DuplicateAnswer(_))) => {
                return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()));
            }
            Err(e) => return Err(ApiError::internal(e.to_string())),
        }
    }
    state
        .kick(&slot)
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()))?;
    Ok((StatusCode::ACCEPTED, Json(json!({ "session_id": id, "duplicate": false }))))
}

async fn resume(State(state): State<AppState>, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    let slot = state.slot(&id)?;
    let started = state
        .kick(&slot)
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, e.to_string()))?;
    if !started {
        let phase = slot.lock().session.phase();
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("nothing to resume in phase {phase}"),
        ));
    }
    Ok((StatusCode::ACCEPTED, Json(json!({ "session_id": id }))))
}

#[derive(Debug, Deserialize)]
struct DiffQuery {
    from: Option<String>,
    to: Option<String>,
}

fn revision(raw: &str) -> Result<usize, ApiError> {
    let digits = raw.trim().trim_start_matches(['r', 'R']);
    digits
        .parse()
        .map_err(|_| ApiError::bad_request(format!("bad revision {raw:?}")))
}

async fn get_diff(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<DiffQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let slot = state.slot(&id)?;
    let g = slot.lock();
    let versions = g.session.rap_versions();
    let from = q.from.as_deref().map(revision).transpose()?.unwrap_or(1);
    let to = q.to.as_deref().map(revision).transpose()?.unwrap_or(versions.len());
    let pick = |r: usize| {
        r.checked_sub(1)
            .and_then(|i| versions.get(i))
            .ok_or_else(|| ApiError::not_found(format!("no revision {r}")))
    };
    let d = diff(pick(from)?, pick(to)?);
    Ok(Json(json!({ "from": from, "to": to, "diff": d })))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    after: Option<usize>,
}

fn sse_event(e: &SessionEvent) -> Event {
    Event::default()
        .id(e.sequence.to_string())
        .event(format!("{:?}", e.kind))
        .data(serde_json::to_string(e).expect("event serializes"))
}

/// Streams events with sequence numbers above `after` (or `Last-Event-ID`)
/// and ends once the session is done and everything was sent.
async fn get_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let slot = state.slot(&id)?;
    let resume_from = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok());
    let next = q.after.or(resume_from).unwrap_or(0);
    let rx = slot.subscribe();
    let stream = futures::stream::unfold(
        (slot, next, rx, VecDeque::<SessionEvent>::new()),
        |(slot, mut next, mut rx, mut buf)| async move {
            loop {
                if let Some(e) = buf.pop_front() {
                    return Some((Ok(sse_event(&e)), (slot, next, rx, buf)));
                }
                rx.borrow_and_update();
                let (new, done) = {
                    let g = slot.lock();
                    let events = g.session.events();
                    let new = events.get(next..).map(<[_]>::to_vec).unwrap_or_default();
                    (new, g.session.is_finished())
                };
                if !new.is_empty() {
                    next += new.len();
                    buf.extend(new);
                    continue;
                }
                if done || rx.changed().await.is_err() {
                    return None;
                }
            }
        },
    );
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

/// Convenience for binaries: a state writing to `sessions_dir`.
pub fn state_for(
    sessions_dir: impl Into<PathBuf>,
    factory: Arc<dyn BackendFactory>,
    bundle: Arc<clarify_core::prompt::PromptBundle>,
) -> Result<AppState, clarify_core::store::StoreError> {
    Ok(AppState::new(
        clarify_core::store::SessionStore::open(sessions_dir)?,
        factory,
        bundle,
    ))
}
