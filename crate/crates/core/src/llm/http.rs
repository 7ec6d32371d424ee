use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_request, ChatBackend, ChatMessage, LlmError};

/// Environment variable holding the bearer token for the live backend.
pub const API_KEY_ENV: &str = "CLARIFY_PLAN_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Base URL; requests go to `{endpoint}/chat/completions`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f32,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each further retry.
    pub backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".to_string(),
            model: "gpt-4-0314".to_string(),
            temperature: 0.0,
            timeout_secs: 120,
            max_retries: 2,
            backoff_ms: 1000,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::InvalidConfig(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.timeout_secs == 0 {
            return Err(LlmError::InvalidConfig("timeout must be positive".into()));
        }
        if self.endpoint.trim().is_empty() {
            return Err(LlmError::InvalidConfig("endpoint is empty".into()));
        }
        Ok(())
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.trim_end_matches('/'))
    }
}

/// Counters over the lifetime of one [`HttpBackend`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct HttpStats {
    pub requests: u64,
    pub retries: u64,
}

/// Live backend for any OpenAI-compatible chat endpoint.
///
/// Blocking; callers inside an async runtime must go through
/// `spawn_blocking`.
pub struct HttpBackend {
    config: BackendConfig,
    api_key: Option<String>,
    client: OnceLock<Result<reqwest::blocking::Client, String>>,
    requests: AtomicU64,
    retries: AtomicU64,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

enum Attempt {
    Done(String),
    Retry(LlmError),
    Fatal(LlmError),
}

impl HttpBackend {
    pub fn new(config: BackendConfig, api_key: Option<String>) -> Result<Self, LlmError> {
        config.validate()?;
        Ok(Self {
            config,
            api_key: api_key.filter(|k| !k.trim().is_empty()),
            client: OnceLock::new(),
            requests: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        })
    }

    /// Reads the credential from [`API_KEY_ENV`]. Fails with
    /// [`LlmError::AuthFailure`] when it is unset.
    pub fn from_env(config: BackendConfig) -> Result<Self, LlmError> {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.trim().is_empty());
        if key.is_none() {
            return Err(LlmError::AuthFailure(format!("{API_KEY_ENV} is not set")));
        }
        Self::new(config, key)
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn stats(&self) -> HttpStats {
        HttpStats {
            requests: self.requests.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
        }
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, LlmError> {
        self.client
            .get_or_init(|| {
                reqwest::blocking::Client::builder()
                    .timeout(Duration::from_secs(self.config.timeout_secs))
                    .build()
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| LlmError::Transport(e.clone()))
    }

    fn attempt(&self, key: &str, body: &serde_json::Value, attempts: u32) -> Attempt {
        let client = match self.client() {
            Ok(c) => c,
            Err(e) => return Attempt::Fatal(e),
        };
        self.requests.fetch_add(1, Ordering::Relaxed);
        let response = client
            .post(self.config.url())
            .bearer_auth(key)
            .json(body)
            .send();
        let response = match response {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Retry(LlmError::Timeout { attempts }),
            Err(e) => return Attempt::Retry(LlmError::Transport(e.to_string())),
        };

        let status = response.status().as_u16();
        let text = match response.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Retry(LlmError::Timeout { attempts }),
            Err(e) => return Attempt::Retry(LlmError::Transport(e.to_string())),
        };
        match status {
            200..=299 => match extract_content(&text) {
                Ok(content) => Attempt::Done(content),
                Err(e) => Attempt::Fatal(e),
            },
            401 | 403 => Attempt::Fatal(LlmError::AuthFailure(format!("status {status}"))),
            429 => Attempt::Retry(LlmError::RateLimited { attempts }),
            500..=599 => Attempt::Retry(LlmError::Server { status, attempts }),
            _ => Attempt::Fatal(LlmError::Http {
                status,
                body: truncate(&text, 500),
            }),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        check_request(messages)?;
        let key = self
            .api_key
            .as_deref()
            .ok_or_else(|| LlmError::AuthFailure(format!("{API_KEY_ENV} is not set")))?;
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": messages,
        });

        let mut attempt = 0u32;
        loop {
            attempt += 1;
            match self.attempt(key, &body, attempt) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) if attempt > self.config.max_retries => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("attempt {attempt} failed ({e}); retrying");
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    let factor = 1u64 << (attempt - 1).min(16);
                    std::thread::sleep(Duration::from_millis(self.config.backoff_ms * factor));
                }
            }
        }
    }
}

fn extract_content(body: &str) -> Result<String, LlmError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| LlmError::ProtocolError(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| {
            LlmError::ProtocolError(format!(
                "missing choices[0].message.content in {}",
                truncate(body, 200)
            ))
        })
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_bounds() {
        let mut cfg = BackendConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.temperature = 2.5;
        assert!(cfg.validate().is_err());
        cfg.temperature = 0.0;
        cfg.timeout_secs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn url_joins_without_double_slash() {
        let cfg = BackendConfig {
            endpoint: "http://localhost:1234/v1/".into(),
            ..BackendConfig::default()
        };
        assert_eq!(cfg.url(), "http://localhost:1234/v1/chat/completions");
    }

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"hi"}}]}"#;
        assert_eq!(extract_content(body).unwrap(), "hi");
        assert!(matches!(
            extract_content("{\"choices\":[]}"),
            Err(LlmError::ProtocolError(_))
        ));
        assert!(matches!(extract_content("<html>"), Err(LlmError::ProtocolError(_))));
    }

    #[test]
    fn missing_key_fails_before_network() {
        let backend = HttpBackend::new(
            BackendConfig {
                endpoint: "http://127.0.0.1:9".into(),
                ..BackendConfig::default()
            },
            None,
        )
        .unwrap();
        let err = backend
            .complete(&[ChatMessage::system("s"), ChatMessage::user("u")])
            .unwrap_err();
        assert!(matches!(err, LlmError::AuthFailure(_)));
        assert_eq!(backend.stats().requests, 0);
    }
}
