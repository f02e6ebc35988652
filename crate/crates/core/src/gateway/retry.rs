use std::time::Duration;

use tracing::warn;

use super::{ChatBackend, ProviderError};
use crate::chat::ChatRequest;

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub backoff_base: Duration,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
            backoff_factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Wait before retry `k` (1-based): `base * factor^(k-1)`.
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = retry.saturating_sub(1) as i32;
        self.backoff_base.mul_f64(self.backoff_factor.powi(exp))
    }

    pub fn max_attempts(&self) -> u32 {
        1 + self.max_retries
    }
}

/// Sends `request`, retrying retryable failures with exponential backoff.
/// A `Retry-After` hint from the provider replaces the computed delay.
pub async fn send_with_retry<B: ChatBackend + ?Sized>(
    backend: &B,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<String, ProviderError> {
    let mut retry = 0;
    loop {
        match backend.send_chat(request).await {
            Ok(text) => return Ok(text),
            Err(err) if err.retryable && retry < policy.max_retries => {
                retry += 1;
                let wait = err.retry_after.unwrap_or_else(|| policy.delay(retry));
                warn!(
                    kind = %err.kind,
                    status = ?err.http_status,
                    retry,
                    wait_ms = wait.as_millis() as u64,
                    "retrying chat request"
                );
                tokio::time::sleep(wait).await;
            }
            Err(err) => return Err(err),
        }
    }
}
