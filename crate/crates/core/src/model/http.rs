//! Chat-completions HTTP backend.
//!
//! Speaks the common JSON shape: request carries `model`, `messages`,
//! `temperature`, `max_tokens`; the reply is read from
//! `choices[0].message.content`. Transport failures and non-2xx statuses are
//! retried with exponential backoff; a malformed 2xx body is a protocol
//! error and is not retried.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, GenerationRequest, Message, ModelError};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    /// Bearer credential; read from the environment, never logged.
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Maximum backend calls in flight at once.
    pub connection_limit: usize,
    /// Total attempts per request, counting the first.
    pub max_attempts: u32,
    pub retry_base: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            api_key: None,
            timeout: Duration::from_secs(60),
            connection_limit: 4,
            max_attempts: 3,
            retry_base: Duration::from_millis(500),
        }
    }
}

/// Raw POST transport, split out so retry behavior is testable without a
/// live server.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &str,
        timeout: Duration,
    ) -> Result<(u16, String), ModelError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, ModelError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|err| ModelError::Transport {
                status: None,
                message: err.to_string(),
            })?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &str,
        _timeout: Duration,
    ) -> Result<(u16, String), ModelError> {
        let mut builder = self
            .client
            .post(url)
            .header("Content-Type", "application/json")
            .body(body.to_string());
        if let Some(key) = api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|err| ModelError::Transport {
            status: None,
            message: err.to_string(),
        })?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|err| ModelError::Transport {
            status: Some(status),
            message: err.to_string(),
        })?;
        Ok((status, text))
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

struct Gate {
    slots: Mutex<usize>,
    freed: Condvar,
}

impl Gate {
    fn new(limit: usize) -> Self {
        Self {
            slots: Mutex::new(limit.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> GatePermit<'_> {
        let mut slots = self.slots.lock().expect("gate lock");
        while *slots == 0 {
            slots = self.freed.wait(slots).expect("gate lock");
        }
        *slots -= 1;
        GatePermit { gate: self }
    }
}

struct GatePermit<'a> {
    gate: &'a Gate,
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        *self.gate.slots.lock().expect("gate lock") += 1;
        self.gate.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    transport: Box<dyn HttpTransport>,
    gate: Gate,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, ModelError> {
        if config.endpoint.is_empty() {
            return Err(ModelError::InvalidRequest(
                "no endpoint configured".into(),
            ));
        }
        let transport = ReqwestTransport::new(config.timeout)?;
        Ok(Self::with_transport(config, Box::new(transport)))
    }

    pub fn with_transport(config: HttpConfig, transport: Box<dyn HttpTransport>) -> Self {
        let gate = Gate::new(config.connection_limit);
        Self {
            config,
            transport,
            gate,
        }
    }

    fn attempt(&self, body: &str) -> Result<String, ModelError> {
        let _permit = self.gate.acquire();
        let (status, text) = self.transport.post_json(
            &self.config.endpoint,
            self.config.api_key.as_deref(),
            body,
            self.config.timeout,
        )?;
        if !(200..300).contains(&status) {
            return Err(ModelError::Transport {
                status: Some(status),
                message: truncate(&text, 200),
            });
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|err| ModelError::Protocol(format!("malformed response body: {err}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|choice| choice.message.content)
            .ok_or_else(|| ModelError::Protocol("response has no choices".into()))
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<String, ModelError> {
        let body = serde_json::to_string(&WireRequest {
            model: &request.model_name,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        })
        .expect("wire request serializes");

        let mut last_err = None;
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.config.retry_base * (1 << (attempt - 1)));
            }
            match self.attempt(&body) {
                Ok(content) => return Ok(content),
                Err(err @ ModelError::Transport { .. }) => {
                    log::warn!(
                        "attempt {}/{} failed: {err}",
                        attempt + 1,
                        self.config.max_attempts
                    );
                    last_err = Some(err);
                }
                Err(err) => return Err(err),
            }
        }
        Err(last_err.expect("at least one attempt"))
    }
}

fn truncate(text: &str, max: usize) -> String {
    if text.chars().count() <= max {
        text.to_string()
    } else {
        text.chars().take(max).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct FlakyTransport {
        calls: Arc<AtomicUsize>,
        fail_first: usize,
        status_on_failure: u16,
    }

    impl HttpTransport for FlakyTransport {
        fn post_json(
            &self,
            _url: &str,
            _api_key: Option<&str>,
            _body: &str,
            _timeout: Duration,
        ) -> Result<(u16, String), ModelError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                Ok((self.status_on_failure, "boom".into()))
            } else {
                Ok((
                    200,
                    r#"{"choices":[{"message":{"role":"assistant","content":"ok"}}]}"#.into(),
                ))
            }
        }
    }

    fn config() -> HttpConfig {
        HttpConfig {
            endpoint: "http://localhost/v1/chat/completions".into(),
            retry_base: Duration::from_millis(1),
            ..HttpConfig::default()
        }
    }

    fn request() -> GenerationRequest {
        GenerationRequest {
            model_name: "glm-4-flash".into(),
            messages: vec![Message::user("hello")],
            temperature: 0.7,
            max_tokens: 128,
            seed_tag: String::new(),
        }
    }

    fn backend(fail_first: usize, status: u16) -> (HttpBackend, Arc<AtomicUsize>) {
        let calls = Arc::new(AtomicUsize::new(0));
        let transport = FlakyTransport {
            calls: calls.clone(),
            fail_first,
            status_on_failure: status,
        };
        (
            HttpBackend::with_transport(config(), Box::new(transport)),
            calls,
        )
    }

    #[test]
    fn recovers_after_transient_failures() {
        let (backend, calls) = backend(2, 500);
        assert_eq!(backend.complete(&request()).unwrap(), "ok");
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn three_consecutive_500s_exhaust_retries() {
        let (backend, calls) = backend(3, 500);
        let err = backend.complete(&request()).unwrap_err();
        assert!(matches!(
            err,
            ModelError::Transport {
                status: Some(500),
                ..
            }
        ));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn malformed_body_is_a_protocol_error_without_retry() {
        struct GarbageTransport(Arc<AtomicUsize>);
        impl HttpTransport for GarbageTransport {
            fn post_json(
                &self,
                _url: &str,
                _api_key: Option<&str>,
                _body: &str,
                _timeout: Duration,
            ) -> Result<(u16, String), ModelError> {
                self.0.fetch_add(1, Ordering::SeqCst);
                Ok((200, "not json".into()))
            }
        }
        let calls = Arc::new(AtomicUsize::new(0));
        let backend =
            HttpBackend::with_transport(config(), Box::new(GarbageTransport(calls.clone())));
        assert!(matches!(
            backend.complete(&request()),
            Err(ModelError::Protocol(_))
        ));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn wire_request_shape() {
        let body = serde_json::to_string(&WireRequest {
            model: "glm-4-flash",
            messages: &[Message::system("s"), Message::user("u")],
            temperature: 0.7,
            max_tokens: 128,
        })
        .unwrap();
        let value: serde_json::Value = serde_json::from_str(&body).unwrap();
        assert_eq!(value["model"], "glm-4-flash");
        assert_eq!(value["messages"][0]["role"], "system");
        assert_eq!(value["messages"][1]["content"], "u");
        assert_eq!(value["temperature"], 0.7);
        assert_eq!(value["max_tokens"], 128);
    }

    #[test]
    fn missing_endpoint_is_rejected() {
        assert!(HttpBackend::new(HttpConfig::default()).is_err());
    }
}
