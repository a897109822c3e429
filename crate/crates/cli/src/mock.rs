//! Mock services for testing and local runs: an echoing chat model, a judge
//! with a canned verdict, and a configurable-latency tool endpoint.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

/// What the mock serves.
#[derive(Debug, Clone)]
pub enum MockKind {
    /// Chat endpoint whose completion is the last user message.
    EchoModel,
    /// Chat endpoint returning a canned judgement.
    ScriptedJudge { body: String },
    /// Opaque tool endpoint that sleeps, then answers.
    SlowTool { delay: Duration, body: String },
}

impl MockKind {
    /// Canned judge text ending in the configured score line.
    pub fn judge_with_score(score: f64) -> Self {
        Self::ScriptedJudge {
            body: format!(
                "The final answer matches the expected result closely.\nSCORE: {score}"
            ),
        }
    }
}

#[derive(Debug, Error)]
pub enum MockError {
    #[error("cannot bind mock server to port {port}: {source}")]
    Bind {
        port: u16,
        source: std::io::Error,
    },
}

/// A running mock. Dropping the handle leaves the task running for the rest
/// of the process; call [`MockServer::shutdown`] to stop it.
pub struct MockServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: JoinHandle<()>,
}

impl MockServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Chat-completion URL (valid for echo_model and scripted_judge).
    pub fn chat_url(&self) -> String {
        format!("http://{}/v1/chat/completions", self.addr)
    }

    /// Plain tool URL (valid for slow_tool).
    pub fn tool_url(&self) -> String {
        format!("http://{}/", self.addr)
    }

    pub async fn shutdown(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.task.await;
    }

    /// Runs until the process is killed; used by the CLI subcommand.
    pub async fn wait(mut self) {
        self.shutdown.take();
        let _ = self.task.await;
    }
}

#[derive(Clone)]
struct MockState {
    kind: Arc<MockKind>,
}

/// Binds and serves a mock of the given kind. Port 0 picks a free port.
pub async fn serve_mock(kind: MockKind, port: u16) -> Result<MockServer, MockError> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
        .await
        .map_err(|source| MockError::Bind { port, source })?;
    let addr = listener.local_addr().map_err(|source| MockError::Bind { port, source })?;

    let state = MockState {
        kind: Arc::new(kind),
    };
    let app = Router::new()
        .route("/", post(tool_handler))
        .route("/{*path}", post(route_by_kind))
        .with_state(state);

    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        let server = axum::serve(listener, app).with_graceful_shutdown(async {
            let _ = rx.await;
        });
        if let Err(e) = server.await {
            tracing::error!(error = %e, "mock server stopped");
        }
    });

    Ok(MockServer {
        addr,
        shutdown: Some(tx),
        task,
    })
}

async fn route_by_kind(state: State<MockState>, body: Json<Value>) -> axum::response::Response {
    use axum::response::IntoResponse;
    match state.kind.as_ref() {
        MockKind::SlowTool { .. } => tool_response(&state.0).await.into_response(),
        _ => chat_response(&state.0, &body.0).await.into_response(),
    }
}

async fn tool_handler(state: State<MockState>) -> String {
    tool_response(&state.0).await
}

async fn tool_response(state: &MockState) -> String {
    match state.kind.as_ref() {
        MockKind::SlowTool { delay, body } => {
            tokio::time::sleep(*delay).await;
            body.clone()
        }
        // chat mocks answer tool-shaped requests with their canned text too
        MockKind::ScriptedJudge { body } => body.clone(),
        MockKind::EchoModel => "echo".into(),
    }
}

async fn chat_response(state: &MockState, body: &Value) -> Json<Value> {
    let content = match state.kind.as_ref() {
        MockKind::EchoModel => last_user_content(body),
        MockKind::ScriptedJudge { body } => body.clone(),
        MockKind::SlowTool { body, delay } => {
            tokio::time::sleep(*delay).await;
            body.clone()
        }
    };
    Json(json!({
        "id": "mock-completion",
        "object": "chat.completion",
        "model": body["model"].as_str().unwrap_or("mock"),
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }]
    }))
}

fn last_user_content(body: &Value) -> String {
    body["messages"]
        .as_array()
        .and_then(|messages| {
            messages
                .iter()
                .rev()
                .find(|m| m["role"] == "user")
                .and_then(|m| m["content"].as_str())
        })
        .unwrap_or_default()
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    #[tokio::test]
    async fn echo_model_returns_the_prompt() {
        let server = serve_mock(MockKind::EchoModel, 0).await.unwrap();
        let client = reqwest::Client::new();
        let response: Value = client
            .post(server.chat_url())
            .json(&json!({"model": "m", "messages": [{"role": "user", "content": "x"}]}))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        assert_eq!(response["choices"][0]["message"]["content"], "x");
        server.shutdown().await;
    }

    #[tokio::test]
    async fn scripted_judge_ends_with_score_line() {
        let server = serve_mock(MockKind::judge_with_score(0.8), 0).await.unwrap();
        let client = reqwest::Client::new();
        let response: Value = client
            .post(server.chat_url())
            .json(&json!({"messages": [{"role": "user", "content": "judge this"}]}))
            .send()
            .await
            .unwrap()
            .json()
            .await
            .unwrap();
        let content = response["choices"][0]["message"]["content"].as_str().unwrap();
        assert!(content.ends_with("SCORE: 0.8"));
        server.shutdown().await;
    }

    #[tokio::test]
    async fn slow_tool_delays_at_least_the_configured_time() {
        let server = serve_mock(
            MockKind::SlowTool {
                delay: Duration::from_millis(200),
                body: "ok".into(),
            },
            0,
        )
        .await
        .unwrap();
        let started = Instant::now();
        let body = reqwest::Client::new()
            .post(server.tool_url())
            .json(&json!({"tool": "x", "arguments": {}}))
            .send()
            .await
            .unwrap()
            .text()
            .await
            .unwrap();
        assert!(started.elapsed() >= Duration::from_millis(200));
        assert_eq!(body, "ok");
        server.shutdown().await;
    }

    #[tokio::test]
    async fn bind_failure_names_the_port() {
        let taken = serve_mock(MockKind::EchoModel, 0).await.unwrap();
        let port = taken.addr().port();
        let err = match serve_mock(MockKind::EchoModel, port).await {
            Err(err) => err,
            Ok(_) => panic!("bind to an occupied port should fail"),
        };
        assert!(err.to_string().contains(&port.to_string()));
        taken.shutdown().await;
    }
}
