//! Minimal chat-completion HTTP client, shared by the remote generator,
//! model tools, and the judge.

use std::sync::OnceLock;
use std::time::Duration;

use serde_json::{json, Value};
use thiserror::Error;

use crate::generator::GenParams;

/// Process-wide connection pool. Building a TLS-capable client is expensive
/// (certificate store scan), and one pool serves every endpoint.
pub fn shared_client() -> reqwest::Client {
    static CLIENT: OnceLock<reqwest::Client> = OnceLock::new();
    CLIENT.get_or_init(reqwest::Client::new).clone()
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("request timed out")]
    Timeout,
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {0}")]
    Status(u16),
    #[error("unparseable response: {0}")]
    Unparseable(String),
}

/// Client for one chat-completion-style endpoint.
#[derive(Debug, Clone)]
pub struct ChatClient {
    endpoint: String,
    model: String,
    client: reqwest::Client,
}

impl ChatClient {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            client: shared_client(),
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Sends `prompt` as a single user message and returns the completion
    /// text.
    pub async fn complete(
        &self,
        prompt: &str,
        params: &GenParams,
        timeout: Duration,
    ) -> Result<String, ChatError> {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_new_tokens,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }

        let response = self
            .client
            .post(&self.endpoint)
            .timeout(timeout)
            .json(&body)
            .send()
            .await
            .map_err(|e| {
                if e.is_timeout() {
                    ChatError::Timeout
                } else {
                    ChatError::Transport(e.to_string())
                }
            })?;

        let status = response.status();
        if !status.is_success() {
            return Err(ChatError::Status(status.as_u16()));
        }

        let value: Value = response
            .json()
            .await
            .map_err(|e| ChatError::Unparseable(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                ChatError::Unparseable("missing choices[0].message.content".into())
            })
    }
}
