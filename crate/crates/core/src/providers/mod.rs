//! Completion backends behind one interface: a live chat-completion endpoint,
//! a recorded replay store and a synthetic recommender with known bias.

mod live;
mod ratelimit;
mod replay;
mod synthetic;

pub use live::{LiveConfig, LiveProvider};
pub use ratelimit::RateLimiter;
pub use replay::{ReplayProvider, ReplayRecord, ReplayStore};
pub use synthetic::{synthetic_generate, BiasProfile, SyntheticProvider};

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::RenderedPrompt;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Exhausted { attempts: u32, message: String },
    #[error("endpoint rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed endpoint response: {0}")]
    BadResponse(String),
    #[error("no recorded response for cache key {0}")]
    CacheMiss(String),
    #[error("replay store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("replay store line {line} is malformed: {message}")]
    CorruptStore { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Live,
    Replay,
    Synthetic,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderKind::Live => "live",
            ProviderKind::Replay => "replay",
            ProviderKind::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt_text: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Structured origin of the prompt. Never part of the cache key; only
    /// the synthetic backend reads it.
    #[serde(skip)]
    pub origin: Option<RenderedPrompt>,
}

/// Digest of the request fields that determine a response.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(pub String);

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl CompletionRequest {
    pub fn new(prompt_text: impl Into<String>, model_id: impl Into<String>) -> Self {
        CompletionRequest {
            prompt_text: prompt_text.into(),
            model_id: model_id.into(),
            temperature: 1.0,
            max_tokens: 1024,
            seed: None,
            origin: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt_text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest(
                "max_tokens must be positive".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 over the JSON object
    /// `{"prompt_text","model_id","temperature","max_tokens","seed"}`.
    pub fn cache_key(&self) -> CacheKey {
        let canonical = serde_json::json!({
            "prompt_text": self.prompt_text,
            "model_id": self.model_id,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        });
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        CacheKey(hex::encode(digest))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub provider_kind: ProviderKind,
    pub cache_key: CacheKey,
    pub latency_ms: u64,
    pub created_at: DateTime<Utc>,
}

pub trait CompletionProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError>;
}

impl<P: CompletionProvider + ?Sized> CompletionProvider for std::sync::Arc<P> {
    fn kind(&self) -> ProviderKind {
        (**self).kind()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        (**self).complete(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_key_ignores_origin_and_tracks_fields() {
        let a = CompletionRequest::new("hello", "gpt-3.5-turbo");
        let mut b = a.clone();
        b.origin = None;
        assert_eq!(a.cache_key(), b.cache_key());
        let mut c = a.clone();
        c.seed = Some(1);
        assert_ne!(a.cache_key(), c.cache_key());
        let mut d = a.clone();
        d.temperature = 0.0;
        assert_ne!(a.cache_key(), d.cache_key());
        assert_eq!(a.cache_key().0.len(), 64);
    }

    #[test]
    fn request_validation() {
        let mut r = CompletionRequest::new("x", "m");
        assert!(r.validate().is_ok());
        r.temperature = 2.5;
        assert!(r.validate().is_err());
        r.temperature = 1.0;
        r.prompt_text = " ".into();
        assert!(r.validate().is_err());
    }
}
