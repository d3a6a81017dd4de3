use std::time::Duration;

use async_trait::async_trait;
use url::Url;

use super::wire::WireRequest;

/// Outcome of one HTTP exchange that did not produce a usable body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    /// Worth retrying: connection refused, timeout, 5xx, 429.
    Transient(String),
    /// Retrying will not help: 4xx other than 429.
    Rejected(String),
}

/// Moves one serialized request to an endpoint and returns the response body.
#[async_trait]
pub trait ChatTransport: Send + Sync {
    async fn send(
        &self,
        base_url: &Url,
        api_key: Option<&str>,
        request: &WireRequest,
        timeout: Duration,
    ) -> Result<String, TransportFailure>;
}

/// `{base_url}/v1/chat/completions`, tolerating a trailing slash on the base.
pub fn completions_url(base_url: &Url) -> String {
    format!("{}/v1/chat/completions", base_url.as_str().trim_end_matches('/'))
}

#[derive(Debug, Clone, Default)]
pub struct HttpTransport {
    client: reqwest::Client,
}

impl HttpTransport {
    pub fn new() -> Self {
        Self::default()
    }
}

#[async_trait]
impl ChatTransport for HttpTransport {
    async fn send(
        &self,
        base_url: &Url,
        api_key: Option<&str>,
        request: &WireRequest,
        timeout: Duration,
    ) -> Result<String, TransportFailure> {
        let mut builder = self
            .client
            .post(completions_url(base_url))
            .timeout(timeout)
            .json(request);
        if let Some(key) = api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .await
            .map_err(|e| TransportFailure::Transient(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .await
            .map_err(|e| TransportFailure::Transient(e.to_string()))?;
        if status.is_success() {
            Ok(body)
        } else if status.is_server_error() || status.as_u16() == 429 {
            Err(TransportFailure::Transient(format!("HTTP {status}: {body}")))
        } else {
            Err(TransportFailure::Rejected(format!("HTTP {status}: {body}")))
        }
    }
}
