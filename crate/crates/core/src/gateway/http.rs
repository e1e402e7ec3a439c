use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatProvider, ChatRequest, ChatResponse, FinishReason, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    pub multiplier: f64,
    /// Wall-clock budget for one `complete` call across all attempts.
    pub deadline_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
            multiplier: 2.0,
            deadline_ms: 120_000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.max(1.0).powi(attempt.saturating_sub(1) as i32);
        let ms = (self.initial_backoff_ms as f64 * factor).min(self.max_backoff_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

/// Client for endpoints exposing `POST {base_url}/v1/chat/completions`.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    base_url: String,
    api_key: Option<String>,
    policy: RetryPolicy,
}

enum AttemptError {
    Retryable(String),
    Fatal(GatewayError),
    DeadlineHit,
}

impl HttpProvider {
    /// Builds the client. Must not be called from inside an async runtime.
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, policy: RetryPolicy) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| GatewayError::provider(format!("cannot build HTTP client: {e}")))?;
        Ok(HttpProvider {
            client,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            policy,
        })
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }

    fn attempt(&self, req: &ChatRequest, timeout: Duration) -> Result<ChatResponse, AttemptError> {
        let body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let mut builder = self.client.post(self.endpoint()).timeout(timeout).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| {
            if e.is_timeout() {
                AttemptError::DeadlineHit
            } else {
                AttemptError::Retryable(format!("transport error: {e}"))
            }
        })?;
        let status = response.status();
        let text = response.text().map_err(|e| {
            if e.is_timeout() {
                AttemptError::DeadlineHit
            } else {
                AttemptError::Retryable(format!("reading body: {e}"))
            }
        })?;
        if status.as_u16() == 408 || status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Fatal(GatewayError::Provider {
                message: text.chars().take(500).collect(),
                status: Some(status.as_u16()),
                retryable: false,
            }));
        }
        parse_completion(&text).map_err(AttemptError::Fatal)
    }
}

fn parse_completion(text: &str) -> Result<ChatResponse, GatewayError> {
    #[derive(Deserialize)]
    struct Completion {
        #[serde(default)]
        id: Option<String>,
        #[serde(default)]
        model: Option<String>,
        choices: Vec<Choice>,
    }
    #[derive(Deserialize)]
    struct Choice {
        message: Message,
        #[serde(default)]
        finish_reason: Option<String>,
    }
    #[derive(Deserialize)]
    struct Message {
        #[serde(default)]
        content: Option<String>,
    }

    let completion: Completion = serde_json::from_str(text).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let choice = completion
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("stop") | None => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Other,
    };
    let content = match (choice.message.content, finish_reason) {
        (Some(c), _) => c,
        (None, FinishReason::Stop) => return Err(GatewayError::MalformedResponse("stop without content".into())),
        (None, _) => String::new(),
    };
    let mut provider_meta = BTreeMap::new();
    if let Some(id) = completion.id {
        provider_meta.insert("id".into(), id);
    }
    if let Some(model) = completion.model {
        provider_meta.insert("model".into(), model);
    }
    Ok(ChatResponse {
        content,
        finish_reason,
        provider_meta,
    })
}

impl ChatProvider for HttpProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let start = Instant::now();
        let deadline = Duration::from_millis(self.policy.deadline_ms);
        let max_attempts = self.policy.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max_attempts {
            let remaining = deadline.saturating_sub(start.elapsed());
            if remaining.is_zero() {
                return Err(GatewayError::Timeout { attempts: attempt - 1 });
            }
            match self.attempt(req, remaining) {
                Ok(mut response) => {
                    response.provider_meta.insert("attempts".into(), attempt.to_string());
                    return Ok(response);
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::DeadlineHit) => return Err(GatewayError::Timeout { attempts: attempt }),
                Err(AttemptError::Retryable(msg)) => {
                    tracing::debug!(attempt, %msg, "retryable provider failure");
                    last = msg;
                }
            }
            if attempt < max_attempts {
                let wait = self.policy.backoff(attempt);
                let remaining = deadline.saturating_sub(start.elapsed());
                if wait >= remaining {
                    std::thread::sleep(remaining);
                    return Err(GatewayError::Timeout { attempts: attempt });
                }
                std::thread::sleep(wait);
            }
        }
        Err(GatewayError::ExhaustedRetries {
            attempts: max_attempts,
            last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            initial_backoff_ms: 100,
            max_backoff_ms: 350,
            multiplier: 2.0,
            ..RetryPolicy::default()
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(350));
    }

    #[test]
    fn parses_completion_shape() {
        let r = parse_completion(r#"{"id":"x","choices":[{"message":{"role":"assistant","content":"hi"},"finish_reason":"stop"}]}"#).unwrap();
        assert_eq!(r.content, "hi");
        assert_eq!(r.finish_reason, FinishReason::Stop);
        assert_eq!(r.provider_meta["id"], "x");
        assert!(matches!(parse_completion("{}"), Err(GatewayError::MalformedResponse(_))));
        assert!(matches!(parse_completion(r#"{"choices":[]}"#), Err(GatewayError::MalformedResponse(_))));
    }
}
