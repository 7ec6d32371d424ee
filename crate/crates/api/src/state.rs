use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard};

use clarify_core::dialogue::{DialogueSession, LoopPhase};
use clarify_core::event::{error_kind, EventKind};
use clarify_core::llm::{ChatBackend, LlmError};
use clarify_core::prompt::PromptBundle;
use clarify_core::store::{replay, SessionRecorder, SessionStore, StoreError};
use tokio::sync::watch;

use crate::backend::BackendFactory;
use crate::error::ApiError;

pub(crate) struct SlotState {
    pub session: DialogueSession,
    pub recorder: SessionRecorder,
    pub backend: Option<Arc<dyn ChatBackend>>,
    /// A worker is driving the session.
    pub busy: bool,
}

impl SlotState {
    fn flush(&mut self) {
        if let Err(e) = self.recorder.flush(&self.session) {
            log::error!("session {}: cannot persist events: {e}", self.session.session_id());
        }
    }
}

/// One live session plus the channel that announces new events.
pub(crate) struct Slot {
    state: Mutex<SlotState>,
    notify: watch::Sender<usize>,
}

impl Slot {
    fn new(state: SlotState) -> Self {
        let (notify, _) = watch::channel(state.session.events().len());
        Self {
            state: Mutex::new(state),
            notify,
        }
    }

    pub fn lock(&self) -> MutexGuard<'_, SlotState> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn subscribe(&self) -> watch::Receiver<usize> {
        self.notify.subscribe()
    }

    /// Persists new events and wakes event-stream subscribers.
    pub fn commit(&self, mut guard: MutexGuard<'_, SlotState>) {
        guard.flush();
        let n = guard.session.events().len();
        drop(guard);
        self.notify.send_replace(n);
    }
}

fn prior_calls(session: &DialogueSession) -> usize {
    session
        .events()
        .iter()
        .filter(|e| {
            e.kind == EventKind::Response
                || (e.kind == EventKind::Error && e.payload["kind"] == error_kind::BACKEND_FAILURE)
        })
        .count()
}

/// Shared service state.
#[derive(Clone)]
pub struct AppState {
    pub(crate) store: SessionStore,
    pub(crate) factory: Arc<dyn BackendFactory>,
    pub(crate) bundle: Arc<PromptBundle>,
    slots: Arc<Mutex<HashMap<String, Arc<Slot>>>>,
}

impl AppState {
    pub fn new(store: SessionStore, factory: Arc<dyn BackendFactory>, bundle: Arc<PromptBundle>) -> Self {
        Self {
            store,
            factory,
            bundle,
            slots: Arc::default(),
        }
    }

    fn slots(&self) -> MutexGuard<'_, HashMap<String, Arc<Slot>>> {
        self.slots.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub(crate) fn insert(
        &self,
        session: DialogueSession,
        backend: Arc<dyn ChatBackend>,
    ) -> Result<Arc<Slot>, StoreError> {
        let recorder = SessionRecorder::create(self.store.clone(), &session)?;
        let id = session.session_id().to_string();
        let slot = Arc::new(Slot::new(SlotState {
            session,
            recorder,
            backend: Some(backend),
            busy: false,
        }));
        self.slots().insert(id, slot.clone());
        Ok(slot)
    }

    /// The session with `id`, rebuilt from its record if it is not in
    /// memory.
    pub(crate) fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        if let Some(slot) = self.slots().get(id) {
            return Ok(slot.clone());
        }
        let record = self.store.load_session(id)?;
        let session = replay(&record).map_err(|e| ApiError::internal(e.to_string()))?;
        let recorder =
            SessionRecorder::resume(self.store.clone(), id, record.events.len() as u64);
        let slot = Arc::new(Slot::new(SlotState {
            session,
            recorder,
            backend: None,
            busy: false,
        }));
        // Another request may have loaded it meanwhile; keep the first.
        Ok(self.slots().entry(id.to_string()).or_insert(slot).clone())
    }

    /// Starts a background worker if the session has model work to do and
    /// none is running. Returns whether one was started or already running.
    pub(crate) fn kick(&self, slot: &Arc<Slot>) -> Result<bool, LlmError> {
        let mut g = slot.lock();
        if g.busy {
            return Ok(true);
        }
        if !g.session.phase().is_exchange() {
            return Ok(false);
        }
        if g.backend.is_none() {
            let prior = prior_calls(&g.session);
            g.backend = Some(self.factory.create(g.session.config(), prior)?);
        }
        g.busy = true;
        drop(g);
        let slot = slot.clone();
        tokio::task::spawn_blocking(move || drive(&slot));
        Ok(true)
    }
}

/// Advances the session until it needs answers, finishes, or fails. The
/// model call runs on a copy so readers never wait on it.
fn drive(slot: &Slot) {
    loop {
        let (mut work, backend) = {
            let mut g = slot.lock();
            if !g.session.phase().is_exchange() {
                g.busy = false;
                return;
            }
            let backend = g.backend.clone().expect("backend set before driving");
            (g.session.clone(), backend)
        };
        let result = work.advance(backend.as_ref());
        let mut g = slot.lock();
        g.session = work;
        let failed = result.is_err();
        if let Err(e) = result {
            log::warn!("session {}: {e}", g.session.session_id());
            g.busy = false;
        }
        slot.commit(g);
        if failed {
            return;
        }
    }
}

pub(crate) fn is_await(session: &DialogueSession) -> bool {
    session.phase() == LoopPhase::AwaitAnswers
}
