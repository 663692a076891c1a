//! Chat-completions HTTP backend.

use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendConfig, BackendError, ChatBackend, ChatRequest, GatewayError};

pub struct RemoteBackend {
    id: String,
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend").field("endpoint", &self.endpoint).finish_non_exhaustive()
    }
}

impl RemoteBackend {
    /// Reads the API key from the environment variable named by
    /// `credential_source`.
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| GatewayError::Config("remote backend requires endpoint_url".into()))?;
        let api_key = std::env::var(&config.credential_source)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                GatewayError::Config(format!(
                    "environment variable {} is not set",
                    config.credential_source
                ))
            })?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { id: format!("remote:{endpoint}"), endpoint, api_key, agent })
    }
}

/// Request body in the de-facto chat-completions shape.
pub fn wire_body(request: &ChatRequest) -> Value {
    let mut body = json!({
        "model": request.model_name,
        "messages": request.messages,
        "temperature": request.temperature,
    });
    if let Some(max) = request.max_output_tokens {
        body["max_tokens"] = json!(max);
    }
    body
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn reply_content(body: &Value) -> Option<&str> {
    body.pointer("/choices/0/message/content")?.as_str()
}

impl ChatBackend for RemoteBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &ChatRequest, _attempt: u32) -> Result<String, BackendError> {
        let result = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(wire_body(request));
        let mut response = match result {
            Ok(r) => r,
            Err(e) => return Err(BackendError::Transient(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().unwrap_or_default();
        match status {
            200..=299 => {}
            408 | 409 | 429 | 500..=599 => {
                return Err(BackendError::Transient(format!("HTTP {status}: {}", snippet(&text))))
            }
            _ => return Err(BackendError::Fatal(format!("HTTP {status}: {}", snippet(&text)))),
        }
        let body: Value = serde_json::from_str(&text)
            .map_err(|e| BackendError::Fatal(format!("response is not JSON: {e}")))?;
        reply_content(&body)
            .map(str::to_string)
            .ok_or_else(|| BackendError::Fatal("response has no choices[0].message.content".into()))
    }
}

fn snippet(text: &str) -> &str {
    match text.char_indices().nth(200) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}
