//! Access to the two model endpoints.
//!
//! Every request goes out with temperature 0 and the role's thinking toggle;
//! every response comes back with leading reasoning blocks removed. Responses
//! can be replayed from a content-addressed cache.

mod cache;
mod thinking;
mod transport;
pub mod wire;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use url::Url;

pub use cache::{cache_key, CachedResponse, ResponseCache};
pub use thinking::{strip_thinking, strip_thinking_with, ThinkingMarkers, UnclosedThinkingBlock};
pub use transport::{completions_url, ChatTransport, HttpTransport, TransportFailure};
pub use wire::{build_request, WireRequest, GREEDY_TEMPERATURE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Coder,
    Planner,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Coder => "coder",
            Role::Planner => "planner",
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    System,
    User,
    Assistant,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::System => "system",
            Speaker::User => "user",
            Speaker::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub speaker: Speaker,
    pub text: String,
}

impl Message {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::System,
            text: text.into(),
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Endpoint settings for one model role.
///
/// There is deliberately no temperature field: decoding is always greedy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleConfig {
    pub role: Role,
    pub base_url: Url,
    pub model_name: String,
    pub thinking_enabled: bool,
    pub max_output_tokens: u32,
    pub request_timeout_s: u64,
    pub max_transport_retries: u32,
    /// Requests allowed in flight against this endpoint at once.
    pub max_concurrency: usize,
    #[serde(default)]
    pub thinking_markers: ThinkingMarkers,
    /// Bearer token. Read from the environment, never written to snapshots.
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl RoleConfig {
    pub fn new(role: Role, base_url: Url, model_name: impl Into<String>) -> Self {
        let max_output_tokens = match role {
            Role::Coder => 2048,
            Role::Planner => 4096,
        };
        Self {
            role,
            base_url,
            model_name: model_name.into(),
            thinking_enabled: false,
            max_output_tokens,
            request_timeout_s: 300,
            max_transport_retries: 3,
            max_concurrency: 4,
            thinking_markers: ThinkingMarkers::default(),
            api_key: None,
        }
    }

    pub fn with_thinking(&self, enabled: bool) -> Self {
        Self {
            thinking_enabled: enabled,
            ..self.clone()
        }
    }
}

/// One completed model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<Message>,
    /// Response as received, before reasoning blocks were removed.
    pub raw_response: String,
    /// Sanitized response; empty when an unclosed reasoning block swallowed it.
    pub response_text: String,
    pub usage: Usage,
    pub latency_ms: u64,
    pub cache_hit: bool,
    pub attempts: u32,
    pub thinking_unclosed: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("endpoint {endpoint} unreachable after {attempts} attempt(s): {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    #[error("malformed response from {endpoint}: {message}")]
    Protocol { endpoint: String, message: String },
    #[error("endpoint {endpoint} returned no text")]
    EmptyResponse { endpoint: String },
    #[error("chat request has no messages")]
    NoMessages,
}

/// Shared client for both roles.
pub struct Gateway {
    transport: Arc<dyn ChatTransport>,
    cache: Option<ResponseCache>,
    backoff: Duration,
    permits: Mutex<HashMap<String, Arc<Semaphore>>>,
}

impl Gateway {
    pub fn new(transport: Arc<dyn ChatTransport>) -> Self {
        Self {
            transport,
            cache: None,
            backoff: Duration::from_millis(500),
            permits: Mutex::new(HashMap::new()),
        }
    }

    pub fn http() -> Self {
        Self::new(Arc::new(HttpTransport::new()))
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    /// Base delay between transport retries; doubles per attempt.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    fn permit_pool(&self, config: &RoleConfig) -> Arc<Semaphore> {
        let mut pools = self.permits.lock().expect("permit map poisoned");
        pools
            .entry(config.base_url.to_string())
            .or_insert_with(|| Arc::new(Semaphore::new(config.max_concurrency.max(1))))
            .clone()
    }

    pub async fn chat_complete(&self, config: &RoleConfig, messages: &[Message]) -> Result<ChatExchange, GatewayError> {
        if messages.is_empty() {
            return Err(GatewayError::NoMessages);
        }
        let endpoint = config.base_url.to_string();
        let key = self.cache.as_ref().map(|_| cache_key(config, messages));

        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Some(hit) = cache.get(key) {
                return Ok(finish(config, messages, hit, true));
            }
        }

        let request = build_request(config, messages);
        let timeout = Duration::from_secs(config.request_timeout_s);
        let pool = self.permit_pool(config);
        let _permit = pool.acquire().await.expect("semaphore never closed");

        let started = Instant::now();
        let mut attempts = 0;
        let body = loop {
            attempts += 1;
            match self
                .transport
                .send(&config.base_url, config.api_key.as_deref(), &request, timeout)
                .await
            {
                Ok(body) => break body,
                Err(TransportFailure::Rejected(message)) => {
                    return Err(GatewayError::Protocol { endpoint, message });
                }
                Err(TransportFailure::Transient(message)) => {
                    if attempts > config.max_transport_retries {
                        return Err(GatewayError::Transport {
                            endpoint,
                            attempts,
                            message,
                        });
                    }
                    tracing::debug!(%endpoint, attempts, %message, "retrying chat request");
                    tokio::time::sleep(self.backoff * 2u32.saturating_pow(attempts - 1)).await;
                }
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;

        let (raw_response, usage) = wire::parse_response(&body).map_err(|message| GatewayError::Protocol {
            endpoint: endpoint.clone(),
            message,
        })?;
        if raw_response.trim().is_empty() {
            return Err(GatewayError::EmptyResponse { endpoint });
        }

        let entry = CachedResponse {
            raw_response,
            usage,
            latency_ms,
            attempts,
        };
        if let (Some(cache), Some(key)) = (&self.cache, &key) {
            if let Err(e) = cache.put(key, &entry) {
                tracing::warn!(error = %e, "failed to write response cache entry");
            }
        }
        Ok(finish(config, messages, entry, false))
    }
}

fn finish(config: &RoleConfig, messages: &[Message], entry: CachedResponse, cache_hit: bool) -> ChatExchange {
    let (response_text, thinking_unclosed) = match strip_thinking_with(&entry.raw_response, &config.thinking_markers) {
        Ok(text) => (text, false),
        Err(unclosed) => (unclosed.kept.trim().to_string(), true),
    };
    ChatExchange {
        messages: messages.to_vec(),
        raw_response: entry.raw_response,
        response_text,
        usage: entry.usage,
        latency_ms: entry.latency_ms,
        cache_hit,
        attempts: entry.attempts,
        thinking_unclosed,
    }
}
