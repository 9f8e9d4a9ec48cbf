//! Completion backends: the generic HTTP chat endpoint and the retry wrapper.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use super::JudgeKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

impl DecodeParams {
    pub fn greedy(max_output_tokens: u32) -> Self {
        Self { temperature: 0.0, max_output_tokens, stop_sequences: Vec::new() }
    }

    pub fn with_stop(mut self, stop: &str) -> Self {
        self.stop_sequences.push(stop.to_string());
        self
    }
}

/// Why a completion is being requested. Backends that only forward prompts
/// ignore it; the mock backends use it to pick a rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Judge(JudgeKind),
    /// Task-model generation; `sample` is 0 for the primary response and
    /// 1..=K for resamples.
    Generate { sample: usize },
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub model: String,
    pub system: Option<String>,
    pub prompt: String,
    pub decode: DecodeParams,
    pub purpose: Purpose,
    /// Template fields the prompt was rendered from.
    pub fields: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{message}")]
pub struct BackendError {
    pub message: String,
    pub retryable: bool,
}

impl BackendError {
    pub fn transient(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: true }
    }

    pub fn fatal(message: impl Into<String>) -> Self {
        Self { message: message.into(), retryable: false }
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, base_delay_ms: 500 }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self { attempts, base_delay_ms: 0 }
    }

    /// Call `backend` until it succeeds, fails fatally, or attempts run out.
    /// Returns the last error and the number of attempts made.
    pub fn run(
        &self,
        backend: &dyn Backend,
        request: &CompletionRequest,
    ) -> Result<String, (BackendError, u32)> {
        let attempts = self.attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            match backend.complete(request) {
                Ok(text) => return Ok(text),
                Err(e) if !e.retryable || attempt >= attempts => return Err((e, attempt)),
                Err(e) => {
                    let delay = self.base_delay_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::debug!("backend attempt {attempt} failed ({e}); retrying in {delay} ms");
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
    }
}

/// OpenAI-style `POST {base_url}/chat/completions` client.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), token, agent }
    }

    /// Read the bearer token from `token_env`, if set.
    pub fn from_env(base_url: impl Into<String>, token_env: &str, timeout: Duration) -> Self {
        Self::new(base_url, std::env::var(token_env).ok().filter(|t| !t.is_empty()), timeout)
    }

    pub fn request_body(request: &CompletionRequest) -> Value {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(json!({"role": "system", "content": system}));
        }
        messages.push(json!({"role": "user", "content": request.prompt}));
        let mut body = json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.decode.temperature,
            "max_tokens": request.decode.max_output_tokens,
        });
        if !request.decode.stop_sequences.is_empty() {
            body["stop"] = json!(request.decode.stop_sequences);
        }
        body
    }

    pub fn extract_content(body: &Value) -> Result<String, BackendError> {
        body.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| BackendError::fatal("response has no choices[0].message.content"))
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut call = self.agent.post(&url).set("Content-Type", "application/json");
        if let Some(token) = &self.token {
            call = call.set("Authorization", &format!("Bearer {token}"));
        }
        match call.send_json(Self::request_body(request)) {
            Ok(resp) => {
                let body: Value = resp
                    .into_json()
                    .map_err(|e| BackendError::transient(format!("reading response: {e}")))?;
                Self::extract_content(&body)
            }
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let message = format!("HTTP {code}: {}", text.chars().take(200).collect::<String>());
                if code == 429 || code >= 500 {
                    Err(BackendError::transient(message))
                } else {
                    Err(BackendError::fatal(message))
                }
            }
            Err(e) => Err(BackendError::transient(e.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: u32,
        calls: AtomicU32,
        retryable: bool,
    }

    impl Backend for Flaky {
        fn complete(&self, _: &CompletionRequest) -> Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(BackendError { message: "down".into(), retryable: self.retryable })
            } else {
                Ok("ok".into())
            }
        }
    }

    fn request() -> CompletionRequest {
        CompletionRequest {
            model: "m".into(),
            system: Some("sys".into()),
            prompt: "p".into(),
            decode: DecodeParams::greedy(8).with_stop("}"),
            purpose: Purpose::Generate { sample: 0 },
            fields: BTreeMap::new(),
        }
    }

    #[test]
    fn retries_transient_errors() {
        let b = Flaky { failures: 2, calls: AtomicU32::new(0), retryable: true };
        assert_eq!(RetryPolicy::immediate(3).run(&b, &request()).unwrap(), "ok");
        let b = Flaky { failures: 3, calls: AtomicU32::new(0), retryable: true };
        let (_, attempts) = RetryPolicy::immediate(3).run(&b, &request()).unwrap_err();
        assert_eq!(attempts, 3);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let b = Flaky { failures: 1, calls: AtomicU32::new(0), retryable: false };
        let (_, attempts) = RetryPolicy::immediate(3).run(&b, &request()).unwrap_err();
        assert_eq!(attempts, 1);
    }

    #[test]
    fn request_shape() {
        let body = HttpBackend::request_body(&request());
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "p");
        assert_eq!(body["max_tokens"], 8);
        assert_eq!(body["stop"][0], "}");
        let reply = json!({"choices": [{"message": {"role": "assistant", "content": "Yes"}}]});
        assert_eq!(HttpBackend::extract_content(&reply).unwrap(), "Yes");
        assert!(HttpBackend::extract_content(&json!({})).is_err());
    }
}
