//! Client side of the chat-completions wire protocol: endpoint configuration,
//! error classification, retry with exponential backoff, and a scriptable mock
//! provider for offline runs.

mod http;
pub mod mock;
mod retry;

use std::fmt;
use std::time::Duration;

use futures::future::BoxFuture;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::ChatRequest;

pub use http::{parse_envelope, HttpGateway};
pub use retry::{send_with_retry, RetryPolicy};

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "FRAMELENS_API_KEY";

/// Bearer token. Never printed: `Debug` and `Display` are redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .map(|k| Self(k.trim().to_string()))
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

impl fmt::Display for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("***")
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("invalid endpoint config: {0}")]
pub struct EndpointConfigError(pub String);

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub api_key: Option<ApiKey>,
    pub model_id: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_s: f64,
    pub backoff_factor: f64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://router.huggingface.co/v1".into(),
            api_key: None,
            model_id: "Qwen/Qwen2.5-VL-7B-Instruct".into(),
            timeout_s: 120.0,
            max_retries: 3,
            backoff_base_s: 1.0,
            backoff_factor: 2.0,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), EndpointConfigError> {
        let err = |m: &str| Err(EndpointConfigError(m.to_string()));
        if reqwest::Url::parse(&self.base_url).is_err() {
            return err("base_url is not a valid URL");
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return err("timeout_s must be > 0");
        }
        if !(self.backoff_base_s.is_finite() && self.backoff_base_s > 0.0) {
            return err("backoff_base_s must be > 0");
        }
        if !(self.backoff_factor.is_finite() && self.backoff_factor >= 1.0) {
            return err("backoff_factor must be >= 1");
        }
        if self.model_id.trim().is_empty() {
            return err("model_id must not be empty");
        }
        Ok(())
    }

    pub fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            backoff_base: Duration::from_secs_f64(self.backoff_base_s),
            backoff_factor: self.backoff_factor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderErrorKind {
    RateLimited,
    AuthFailed,
    ServerError,
    Timeout,
    MalformedResponse,
    NetworkError,
    /// Any other 4xx: the provider refused the request as sent.
    Rejected,
}

impl ProviderErrorKind {
    pub fn default_retryable(self) -> bool {
        matches!(
            self,
            ProviderErrorKind::RateLimited
                | ProviderErrorKind::ServerError
                | ProviderErrorKind::Timeout
                | ProviderErrorKind::NetworkError
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderErrorKind::RateLimited => "rate_limited",
            ProviderErrorKind::AuthFailed => "auth_failed",
            ProviderErrorKind::ServerError => "server_error",
            ProviderErrorKind::Timeout => "timeout",
            ProviderErrorKind::MalformedResponse => "malformed_response",
            ProviderErrorKind::NetworkError => "network_error",
            ProviderErrorKind::Rejected => "rejected",
        }
    }
}

impl fmt::Display for ProviderErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind}{}: {detail}", http_status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
pub struct ProviderError {
    pub kind: ProviderErrorKind,
    pub retryable: bool,
    pub detail: String,
    pub http_status: Option<u16>,
    /// Provider-requested wait before retrying (from `Retry-After`).
    pub retry_after: Option<Duration>,
}

impl ProviderError {
    pub fn new(kind: ProviderErrorKind, detail: impl Into<String>) -> Self {
        Self {
            kind,
            retryable: kind.default_retryable(),
            detail: detail.into(),
            http_status: None,
            retry_after: None,
        }
    }

    pub fn with_status(mut self, status: u16) -> Self {
        self.http_status = Some(status);
        self
    }

    /// Classifies a non-success HTTP status.
    pub fn from_status(status: u16, detail: impl Into<String>) -> Self {
        let kind = match status {
            429 => ProviderErrorKind::RateLimited,
            401 | 403 => ProviderErrorKind::AuthFailed,
            408 => ProviderErrorKind::Timeout,
            500..=599 => ProviderErrorKind::ServerError,
            _ => ProviderErrorKind::Rejected,
        };
        Self::new(kind, detail).with_status(status)
    }
}

/// Anything that can answer a chat request with the assistant's text.
pub trait ChatBackend: Send + Sync {
    fn send_chat<'a>(&'a self, request: &'a ChatRequest)
        -> BoxFuture<'a, Result<String, ProviderError>>;

    fn model_id(&self) -> &str;
}
