//! Pluggable generative-model access.
//!
//! A [`ModelHandle`] fronts any [`Backend`] (HTTP chat-completions endpoint,
//! scripted replay, synthetic environment) with an optional persistent
//! response cache. Handles are cheap to clone and safe to share across
//! threads.

mod cache;
mod http;
mod scripted;

pub use cache::ResponseCache;
pub use http::{HttpBackend, HttpConfig, HttpTransport, ReqwestTransport};
pub use scripted::{ScriptEntry, ScriptedModel};

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// One model exchange. Equal requests hash to equal cache keys, so the
/// `seed_tag` distinguishes logically distinct samples of the same prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub model_name: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed_tag: String,
}

impl GenerationRequest {
    /// The non-empty, user-terminated message list contract.
    pub fn validate(&self) -> Result<(), ModelError> {
        match self.messages.last() {
            None => Err(ModelError::InvalidRequest("messages are empty".into())),
            Some(last) if last.role != Role::User => Err(ModelError::InvalidRequest(
                "last message must have role user".into(),
            )),
            Some(_) => Ok(()),
        }
    }

    /// Content of the final user message (the prompt scripted backends match
    /// against).
    #[must_use]
    pub fn last_user_content(&self) -> &str {
        self.messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResponse {
    /// Raw model text, untrimmed.
    pub content: String,
    pub cached: bool,
    pub latency_ms: u64,
}

/// 256-bit digest of a request under its canonical JSON serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    #[must_use]
    pub fn for_request(request: &GenerationRequest) -> Self {
        let canonical =
            serde_json::to_string(request).expect("request serializes to canonical JSON");
        let digest = Sha256::digest(canonical.as_bytes());
        Self(digest.into())
    }

    #[must_use]
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    #[must_use]
    pub fn hex(&self) -> String {
        let mut out = String::with_capacity(64);
        for b in self.0 {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    pub fn parse_hex(hex: &str) -> Option<Self> {
        if hex.len() != 64 {
            return None;
        }
        let mut bytes = [0u8; 32];
        for (i, chunk) in hex.as_bytes().chunks(2).enumerate() {
            let s = std::str::from_utf8(chunk).ok()?;
            bytes[i] = u8::from_str_radix(s, 16).ok()?;
        }
        Some(Self(bytes))
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transport failure{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no script entry matches prompt: {prompt:?}")]
    ScriptMiss { prompt: String },
    #[error("cache I/O failure: {0}")]
    Cache(#[from] std::io::Error),
}

/// Anything that can answer a [`GenerationRequest`] with raw text.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> Result<String, ModelError>;
}

/// A shareable model endpoint: backend plus optional persistent cache.
///
/// The handle also carries the logical model name and the completion budget
/// stamped onto every request rendered against it.
#[derive(Clone)]
pub struct ModelHandle {
    backend: Arc<dyn Backend>,
    cache: Option<Arc<ResponseCache>>,
    name: String,
    max_tokens: u32,
}

impl ModelHandle {
    pub fn new(backend: impl Backend + 'static) -> Self {
        Self {
            backend: Arc::new(backend),
            cache: None,
            name: "default".to_string(),
            max_tokens: 512,
        }
    }

    #[must_use]
    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(Arc::new(cache));
        self
    }

    #[must_use]
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    #[must_use]
    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    #[must_use]
    pub fn name(&self) -> &str {
        &self.name
    }

    #[must_use]
    pub fn max_tokens(&self) -> u32 {
        self.max_tokens
    }

    /// Cache-first generation: a hit returns the stored content with
    /// `cached = true`; a miss calls the backend and stores the reply.
    pub fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, ModelError> {
        request.validate()?;
        let started = Instant::now();
        let key = CacheKey::for_request(request);
        if let Some(cache) = &self.cache {
            if let Some(content) = cache.get(&key) {
                return Ok(GenerationResponse {
                    content,
                    cached: true,
                    latency_ms: started.elapsed().as_millis() as u64,
                });
            }
        }
        let content = self.backend.complete(request)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &content)?;
        }
        Ok(GenerationResponse {
            content,
            cached: false,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }
}
