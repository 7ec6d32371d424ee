use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use clarify_core::llm::{BackendConfig, ChatBackend, ChatMessage, HttpBackend, LlmError};
use serde_json::{json, Value};

struct Canned {
    status: u16,
    body: String,
    delay: Duration,
}

fn ok(text: &str) -> Canned {
    Canned {
        status: 200,
        body: json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string(),
        delay: Duration::ZERO,
    }
}

fn status(code: u16) -> Canned {
    Canned {
        status: code,
        body: "{}".into(),
        delay: Duration::ZERO,
    }
}

type Seen = Arc<Mutex<Vec<(String, Value)>>>;

/// Serves the canned responses in order, one per connection, and records
/// each request's headers and JSON body.
fn stub(responses: Vec<Canned>) -> (String, Seen) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for canned in responses {
            let (mut stream, _) = match listener.accept() {
                Ok(s) => s,
                Err(_) => return,
            };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap() == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            log.lock()
                .unwrap()
                .push((head, serde_json::from_slice(&body).unwrap_or(Value::Null)));
            let reply = format!(
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                canned.status,
                canned.body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
            thread::sleep(canned.delay);
            let _ = stream.write_all(canned.body.as_bytes());
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn config(endpoint: String) -> BackendConfig {
    BackendConfig {
        endpoint,
        model: "stub-model".into(),
        temperature: 0.0,
        timeout_secs: 5,
        max_retries: 2,
        backoff_ms: 10,
    }
}

fn messages() -> Vec<ChatMessage> {
    vec![ChatMessage::system("sys"), ChatMessage::user("Make scrambled egg.")]
}

#[test]
fn returns_stub_text_and_sends_model_and_temperature() {
    let (url, seen) = stub(vec![ok("hello")]);
    let mut cfg = config(url);
    cfg.temperature = 0.7;
    let backend = HttpBackend::new(cfg, Some("secret".into())).unwrap();
    assert_eq!(backend.complete(&messages()).unwrap(), "hello");
    let seen = seen.lock().unwrap();
    let (head, body) = &seen[0];
    assert!(head.starts_with("POST /v1/chat/completions"));
    assert!(head.to_ascii_lowercase().contains("authorization: bearer secret"));
    assert_eq!(body["model"], "stub-model");
    assert!((body["temperature"].as_f64().unwrap() - 0.7).abs() < 1e-6);
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "Make scrambled egg.");
}

#[test]
fn retries_server_errors() {
    let (url, seen) = stub(vec![status(500), status(500), ok("third time")]);
    let backend = HttpBackend::new(config(url), Some("k".into())).unwrap();
    assert_eq!(backend.complete(&messages()).unwrap(), "third time");
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert_eq!(backend.stats().retries, 2);
    assert_eq!(backend.stats().requests, 3);
}

#[test]
fn gives_up_after_max_retries() {
    let (url, _) = stub(vec![status(503), status(503), status(503)]);
    let backend = HttpBackend::new(config(url), Some("k".into())).unwrap();
    assert!(matches!(
        backend.complete(&messages()),
        Err(LlmError::Server { status: 503, attempts: 3 })
    ));
}

#[test]
fn rate_limit_is_reported_after_retries() {
    let (url, _) = stub(vec![status(429), status(429), status(429)]);
    let backend = HttpBackend::new(config(url), Some("k".into())).unwrap();
    assert!(matches!(
        backend.complete(&messages()),
        Err(LlmError::RateLimited { attempts: 3 })
    ));
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = stub(vec![status(401), ok("unused")]);
    let backend = HttpBackend::new(config(url), Some("k".into())).unwrap();
    assert!(matches!(backend.complete(&messages()), Err(LlmError::AuthFailure(_))));
    assert_eq!(backend.stats().requests, 1);

    let (url, _) = stub(vec![status(400), ok("unused")]);
    let backend = HttpBackend::new(config(url), Some("k".into())).unwrap();
    assert!(matches!(
        backend.complete(&messages()),
        Err(LlmError::Http { status: 400, .. })
    ));
    assert_eq!(backend.stats().retries, 0);
    drop(seen);
}

#[test]
fn unparseable_body_is_a_protocol_error() {
    let (url, _) = stub(vec![Canned {
        status: 200,
        body: "not json".into(),
        delay: Duration::ZERO,
    }]);
    let backend = HttpBackend::new(config(url), Some("k".into())).unwrap();
    assert!(matches!(backend.complete(&messages()), Err(LlmError::ProtocolError(_))));
}

#[test]
fn slow_body_times_out() {
    let slow = || Canned {
        status: 200,
        body: ok("late").body,
        delay: Duration::from_secs(3),
    };
    let (url, _) = stub(vec![slow()]);
    let mut cfg = config(url);
    cfg.timeout_secs = 1;
    cfg.max_retries = 0;
    let backend = HttpBackend::new(cfg, Some("k".into())).unwrap();
    assert!(matches!(
        backend.complete(&messages()),
        Err(LlmError::Timeout { attempts: 1 })
    ));
}

#[test]
fn missing_credential_fails_before_network() {
    let backend = HttpBackend::new(config("http://127.0.0.1:9/v1".into()), None).unwrap();
    assert!(matches!(backend.complete(&messages()), Err(LlmError::AuthFailure(_))));
    assert_eq!(backend.stats().requests, 0);
}
