use std::sync::Arc;

use clarify_core::dialogue::SessionConfig;
use clarify_core::llm::{BackendConfig, ChatBackend, HttpBackend, LlmError, Script, ScriptedBackend};

/// Supplies the model backend for each new or resumed session.
/// `prior_calls` is how many model calls the session already made.
pub trait BackendFactory: Send + Sync {
    fn create(&self, config: &SessionConfig, prior_calls: usize) -> Result<Arc<dyn ChatBackend>, LlmError>;
}

/// Live OpenAI-compatible endpoint, credential from the environment.
#[derive(Debug, Clone, Default)]
pub struct LiveBackends {
    pub base: BackendConfig,
}

impl BackendFactory for LiveBackends {
    fn create(&self, config: &SessionConfig, _: usize) -> Result<Arc<dyn ChatBackend>, LlmError> {
        let mut cfg = self.base.clone();
        cfg.model = config.model.clone();
        cfg.temperature = config.temperature;
        Ok(Arc::new(HttpBackend::from_env(cfg)?))
    }
}

/// Every session gets its own copy of one script.
#[derive(Debug, Clone)]
pub struct ScriptedBackends {
    script: Script,
}

impl ScriptedBackends {
    pub fn new(script: Script) -> Self {
        Self { script }
    }
}

impl BackendFactory for ScriptedBackends {
    fn create(&self, _: &SessionConfig, prior_calls: usize) -> Result<Arc<dyn ChatBackend>, LlmError> {
        let backend = ScriptedBackend::new(self.script.clone());
        backend.skip(prior_calls);
        Ok(Arc::new(backend))
    }
}

/// Wraps a closure.
pub struct FnBackends<F>(pub F);

impl<F> BackendFactory for FnBackends<F>
where
    F: Fn(&SessionConfig, usize) -> Result<Arc<dyn ChatBackend>, LlmError> + Send + Sync,
{
    fn create(&self, config: &SessionConfig, prior_calls: usize) -> Result<Arc<dyn ChatBackend>, LlmError> {
        (self.0)(config, prior_calls)
    }
}
