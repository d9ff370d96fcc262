use std::time::{Duration, Instant};

use chrono::Utc;
use serde::{Deserialize, Serialize};

use super::{
    CompletionProvider, CompletionRequest, CompletionResult, ProviderError, ProviderKind, RateLimiter,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveConfig {
    /// Endpoint root, e.g. `https://api.openai.com/v1` or a local server.
    pub base_url: String,
    pub path: String,
    /// Environment variable holding the bearer token. `None` sends no
    /// authorization header (typical for locally served models).
    pub api_key_env: Option<String>,
    pub requests_per_minute: u32,
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub timeout_secs: u64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        LiveConfig {
            base_url: "https://api.openai.com/v1".into(),
            path: "chat/completions".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            requests_per_minute: 60,
            max_attempts: 5,
            initial_backoff_ms: 500,
            max_backoff_ms: 30_000,
            timeout_secs: 120,
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    #[serde(default)]
    content: Option<String>,
}

/// Chat-completion client: one user message per request, reply taken from
/// the first choice.
pub struct LiveProvider {
    config: LiveConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    limiter: RateLimiter,
}

enum Attempt {
    Retry(String),
    Fatal(ProviderError),
}

impl LiveProvider {
    pub fn new(config: LiveConfig) -> Result<Self, ProviderError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| ProviderError::Config(format!("credential variable {var} is not set")))?,
            ),
            None => None,
        };
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: LiveConfig, api_key: Option<String>) -> Result<Self, ProviderError> {
        if config.max_attempts == 0 {
            return Err(ProviderError::Config("max_attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Config(format!("http client: {e}")))?;
        let limiter = RateLimiter::per_minute(config.requests_per_minute);
        Ok(LiveProvider {
            config,
            api_key,
            client,
            limiter,
        })
    }

    fn endpoint(&self) -> String {
        format!(
            "{}/{}",
            self.config.base_url.trim_end_matches('/'),
            self.config.path.trim_start_matches('/')
        )
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self
            .config
            .initial_backoff_ms
            .saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.config.max_backoff_ms))
    }

    fn attempt(&self, body: &WireRequest<'_>) -> Result<String, Attempt> {
        self.limiter.acquire();
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Attempt::Retry(e.to_string()))?;
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("status {status}: {text}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(ProviderError::Rejected {
                status: status.as_u16(),
                body: text,
            }));
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| Attempt::Fatal(ProviderError::BadResponse(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal(ProviderError::BadResponse("no choices".into())))
    }
}

impl CompletionProvider for LiveProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Live
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ProviderError> {
        request.validate()?;
        let body = WireRequest {
            model: &request.model_id,
            messages: [WireMessage {
                role: "user",
                content: &request.prompt_text,
            }],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
        };
        let start = Instant::now();
        let mut last = String::new();
        for attempt in 0..self.config.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(CompletionResult {
                        text,
                        provider_kind: ProviderKind::Live,
                        cache_key: request.cache_key(),
                        latency_ms: start.elapsed().as_millis() as u64,
                        created_at: Utc::now(),
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => {
                    log::warn!("completion attempt {} failed: {msg}", attempt + 1);
                    last = msg;
                }
            }
        }
        Err(ProviderError::Exhausted {
            attempts: self.config.max_attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_credential_is_a_config_error() {
        let config = LiveConfig {
            api_key_env: Some("RECAUDIT_TEST_SURELY_UNSET_VAR".into()),
            ..LiveConfig::default()
        };
        assert!(matches!(LiveProvider::new(config), Err(ProviderError::Config(_))));
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = LiveProvider::with_key(
            LiveConfig {
                initial_backoff_ms: 100,
                max_backoff_ms: 1000,
                ..LiveConfig::default()
            },
            None,
        )
        .unwrap();
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(400));
        assert_eq!(p.backoff(10), Duration::from_millis(1000));
    }
}
