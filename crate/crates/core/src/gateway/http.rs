use std::time::Duration;

use futures::future::BoxFuture;
use reqwest::header::{HeaderMap, RETRY_AFTER};
use serde_json::Value;
use tracing::debug;

use super::{ChatBackend, EndpointConfig, EndpointConfigError, ProviderError, ProviderErrorKind};
use crate::chat::ChatRequest;

/// Chat-completions client over HTTP. Each call owns its request; the
/// underlying connection pool is shared and safe for concurrent use.
#[derive(Debug, Clone)]
pub struct HttpGateway {
    client: reqwest::Client,
    config: EndpointConfig,
}

impl HttpGateway {
    pub fn new(config: EndpointConfig) -> Result<Self, EndpointConfigError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build()
            .map_err(|e| EndpointConfigError(format!("cannot build HTTP client: {e}")))?;
        Ok(Self { client, config })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    async fn post(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let url = self.config.completions_url();
        let mut builder = self
            .client
            .post(&url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(request.to_wire());
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key.expose());
        }
        debug!(%url, model = %request.model, "sending chat request");
        let response = builder.send().await.map_err(classify_transport)?;
        let status = response.status();
        let retry_after = parse_retry_after(response.headers());
        let body = response.text().await.map_err(classify_transport)?;
        if !status.is_success() {
            let mut err = ProviderError::from_status(status.as_u16(), snippet(&body));
            err.retry_after = retry_after;
            return Err(err);
        }
        parse_envelope(&body)
    }
}

impl ChatBackend for HttpGateway {
    fn send_chat<'a>(
        &'a self,
        request: &'a ChatRequest,
    ) -> BoxFuture<'a, Result<String, ProviderError>> {
        Box::pin(self.post(request))
    }

    fn model_id(&self) -> &str {
        &self.config.model_id
    }
}

fn classify_transport(err: reqwest::Error) -> ProviderError {
    let kind = if err.is_timeout() {
        ProviderErrorKind::Timeout
    } else {
        ProviderErrorKind::NetworkError
    };
    // reqwest errors include the URL but never headers.
    ProviderError::new(kind, err.to_string())
}

fn parse_retry_after(headers: &HeaderMap) -> Option<Duration> {
    let raw = headers.get(RETRY_AFTER)?.to_str().ok()?;
    let secs: f64 = raw.trim().parse().ok()?;
    (secs.is_finite() && secs >= 0.0).then(|| Duration::from_secs_f64(secs))
}

fn snippet(body: &str) -> String {
    const MAX: usize = 300;
    let trimmed = body.trim();
    match trimmed.char_indices().nth(MAX) {
        Some((cut, _)) => format!("{}...", &trimmed[..cut]),
        None => trimmed.to_string(),
    }
}

/// Pulls the assistant text out of a chat-completions response envelope.
/// Content given as a list of parts is concatenated from its text parts.
pub fn parse_envelope(body: &str) -> Result<String, ProviderError> {
    let malformed = |why: &str| {
        ProviderError::new(
            ProviderErrorKind::MalformedResponse,
            format!("{why}: {}", snippet(body)),
        )
    };
    let value: Value = serde_json::from_str(body).map_err(|_| malformed("response is not JSON"))?;
    let content = value
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .and_then(|m| m.get("content"))
        .ok_or_else(|| malformed("response has no choices[0].message.content"))?;
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect::<String>()),
        _ => Err(malformed("message content is neither text nor parts")),
    }
}
