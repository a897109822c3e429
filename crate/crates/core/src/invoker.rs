//! Concurrent execution of a round of tool calls — the Invoke phase.
//!
//! Every call in a round is dispatched at once and independently bounded by
//! its spec's timeout, so round wall time tracks the slowest call rather
//! than the sum. Failures are normalized into statuses; a failing call never
//! disturbs its neighbours.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::builtins::{self, CalcError, Corpus};
use crate::parser::ToolCall;
use crate::registry::{validate_arguments, Registry, ToolKind, ToolSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvocationStatus {
    Ok,
    Timeout,
    ToolError,
    TransportError,
    ValidationError,
}

/// Outcome of one call. `payload` is the response body on success and a
/// human-readable reason otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationResult {
    pub call: ToolCall,
    pub status: InvocationStatus,
    pub payload: String,
    pub latency_ms: u64,
}

impl InvocationResult {
    pub fn is_ok(&self) -> bool {
        self.status == InvocationStatus::Ok
    }
}

#[derive(Debug, Error)]
pub enum InvokerSetupError {
    #[error("tool '{tool}': corpus_search endpoint is missing ?path=")]
    MissingCorpusPath { tool: String },
    #[error("tool '{tool}': {source}")]
    Corpus {
        tool: String,
        source: builtins::CorpusError,
    },
}

/// Executes rounds of calls against registry endpoints.
pub struct Invoker {
    registry: Arc<Registry>,
    client: reqwest::Client,
    corpora: HashMap<String, Arc<Corpus>>,
}

impl Invoker {
    /// Builds an invoker, loading the corpus behind every `corpus_search`
    /// tool up front so rounds never touch the filesystem.
    pub fn new(registry: Arc<Registry>) -> Result<Self, InvokerSetupError> {
        let mut corpora = HashMap::new();
        for spec in registry.iter() {
            let Some(rest) = spec.endpoint.strip_prefix("builtin:corpus_search") else {
                continue;
            };
            let path = rest.strip_prefix("?path=").filter(|p| !p.is_empty()).ok_or(
                InvokerSetupError::MissingCorpusPath {
                    tool: spec.name.clone(),
                },
            )?;
            let corpus = Corpus::load(path).map_err(|source| InvokerSetupError::Corpus {
                tool: spec.name.clone(),
                source,
            })?;
            corpora.insert(spec.name.clone(), Arc::new(corpus));
        }
        Ok(Self {
            registry,
            client: crate::http::shared_client(),
            corpora,
        })
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Dispatches all calls concurrently. Results align 1:1 with `calls` in
    /// input order; unknown tools and bad arguments surface as
    /// `ValidationError` results without disturbing the rest of the round.
    pub async fn invoke_round(&self, calls: &[ToolCall]) -> Vec<InvocationResult> {
        futures::future::join_all(calls.iter().map(|call| self.invoke_one(call))).await
    }

    async fn invoke_one(&self, call: &ToolCall) -> InvocationResult {
        let started = Instant::now();
        let Some(spec) = self.registry.get(&call.tool_name) else {
            return InvocationResult {
                call: call.clone(),
                status: InvocationStatus::ValidationError,
                payload: format!("unknown tool '{}'", call.tool_name),
                latency_ms: elapsed_ms(started),
            };
        };
        let args = match validate_arguments(spec, &call.arguments) {
            Ok(args) => args,
            Err(e) => {
                return InvocationResult {
                    call: call.clone(),
                    status: InvocationStatus::ValidationError,
                    payload: e.to_string(),
                    latency_ms: elapsed_ms(started),
                };
            }
        };

        let (status, payload) = self.execute_spec(spec, args, 0).await;
        InvocationResult {
            call: call.clone(),
            status,
            payload,
            latency_ms: elapsed_ms(started),
        }
    }

    /// Runs one spec with its timeout and retry budget.
    fn execute_spec<'a>(
        &'a self,
        spec: &'a ToolSpec,
        args: Map<String, Value>,
        depth: u8,
    ) -> futures::future::BoxFuture<'a, (InvocationStatus, String)> {
        Box::pin(async move {
            let mut attempt = 0;
            loop {
                let work = self.dispatch(spec, args.clone(), depth);
                let outcome = match tokio::time::timeout(
                    Duration::from_millis(spec.timeout_ms),
                    work,
                )
                .await
                {
                    Ok(result) => result,
                    Err(_) => (
                        InvocationStatus::Timeout,
                        format!("timed out after {}ms", spec.timeout_ms),
                    ),
                };
                let retryable = matches!(
                    outcome.0,
                    InvocationStatus::Timeout | InvocationStatus::TransportError
                );
                if retryable && attempt < spec.retries {
                    attempt += 1;
                    tracing::debug!(tool = %spec.name, attempt, "retrying after {:?}", outcome.0);
                    continue;
                }
                return outcome;
            }
        })
    }

    async fn dispatch(
        &self,
        spec: &ToolSpec,
        args: Map<String, Value>,
        depth: u8,
    ) -> (InvocationStatus, String) {
        match spec.kind {
            ToolKind::Program => {
                if spec.endpoint.starts_with("builtin:") {
                    self.execute_builtin(spec, &args).await
                } else {
                    self.execute_http_program(spec, &args).await
                }
            }
            ToolKind::Model => self.execute_model_tool(spec, &args).await,
            ToolKind::Agent => self.execute_agent(spec, args, depth).await,
        }
    }

    /// Deterministic local executors.
    async fn execute_builtin(
        &self,
        spec: &ToolSpec,
        args: &Map<String, Value>,
    ) -> (InvocationStatus, String) {
        let builtin = spec
            .endpoint
            .strip_prefix("builtin:")
            .unwrap_or_default()
            .split('?')
            .next()
            .unwrap_or_default();
        match builtin {
            builtins::CALCULATOR => {
                let expr = str_arg(args, "expr");
                match builtins::evaluate(expr) {
                    Ok(value) => (InvocationStatus::Ok, builtins::format_number(value)),
                    Err(e @ CalcError::DivisionByZero) => {
                        (InvocationStatus::ToolError, e.to_string())
                    }
                    Err(e) => (InvocationStatus::ToolError, e.to_string()),
                }
            }
            builtins::ECHO => (InvocationStatus::Ok, str_arg(args, "text").to_string()),
            builtins::SLEEP => {
                let ms = num_arg(args, "ms").max(0.0) as u64;
                tokio::time::sleep(Duration::from_millis(ms)).await;
                (InvocationStatus::Ok, format!("slept {ms}ms"))
            }
            builtins::CORPUS_SEARCH => {
                let Some(corpus) = self.corpora.get(&spec.name) else {
                    return (
                        InvocationStatus::ToolError,
                        "corpus not loaded for this tool".into(),
                    );
                };
                let query = str_arg(args, "query");
                let k = args
                    .get("k")
                    .and_then(Value::as_f64)
                    .map(|k| k.max(0.0) as usize)
                    .unwrap_or(3);
                let hits = corpus.search(query, k);
                if hits.is_empty() {
                    (InvocationStatus::Ok, "no matching documents".into())
                } else {
                    let lines: Vec<String> = hits
                        .iter()
                        .map(|doc| format!("[{}] {}", doc.id, doc.text))
                        .collect();
                    (InvocationStatus::Ok, lines.join("\n"))
                }
            }
            other => (
                InvocationStatus::ValidationError,
                format!("unknown builtin '{other}'"),
            ),
        }
    }

    /// POSTs `{tool, arguments}` and treats the body as opaque text.
    async fn execute_http_program(
        &self,
        spec: &ToolSpec,
        args: &Map<String, Value>,
    ) -> (InvocationStatus, String) {
        let body = serde_json::json!({"tool": spec.name, "arguments": args});
        let response = match self.client.post(&spec.endpoint).json(&body).send().await {
            Ok(response) => response,
            Err(e) => return (InvocationStatus::TransportError, e.to_string()),
        };
        let status = response.status();
        if !status.is_success() {
            return (
                InvocationStatus::TransportError,
                format!("endpoint returned HTTP {status}"),
            );
        }
        match response.text().await {
            Ok(text) => (InvocationStatus::Ok, text),
            Err(e) => (InvocationStatus::TransportError, e.to_string()),
        }
    }

    /// Sends the `prompt` argument to a chat-completion endpoint and returns
    /// the completion text.
    async fn execute_model_tool(
        &self,
        spec: &ToolSpec,
        args: &Map<String, Value>,
    ) -> (InvocationStatus, String) {
        let prompt = str_arg(args, "prompt");
        let body = serde_json::json!({
            "model": spec.name,
            "messages": [{"role": "user", "content": prompt}],
        });
        let response = match self.client.post(&spec.endpoint).json(&body).send().await {
            Ok(response) => response,
            Err(e) => return (InvocationStatus::TransportError, e.to_string()),
        };
        let status = response.status();
        if !status.is_success() {
            return (
                InvocationStatus::TransportError,
                format!("endpoint returned HTTP {status}"),
            );
        }
        let value: Value = match response.json().await {
            Ok(value) => value,
            Err(_) => return (InvocationStatus::ToolError, "unparseable response".into()),
        };
        match value["choices"][0]["message"]["content"].as_str() {
            Some(content) => (InvocationStatus::Ok, content.to_string()),
            None => (InvocationStatus::ToolError, "unparseable response".into()),
        }
    }

    /// Runs an agent as a fixed pipeline over its member tools, feeding each
    /// payload into the next member's first parameter.
    async fn execute_agent(
        &self,
        spec: &ToolSpec,
        args: Map<String, Value>,
        depth: u8,
    ) -> (InvocationStatus, String) {
        if depth >= 2 {
            return (
                InvocationStatus::ToolError,
                "agent nesting limit of 2 exceeded".into(),
            );
        }
        let mut payload = String::new();
        for (i, member) in spec.agent_members().iter().enumerate() {
            let Some(mspec) = self.registry.get(member) else {
                return (
                    InvocationStatus::ValidationError,
                    format!("agent member '{member}' is not registered"),
                );
            };
            let margs = if i == 0 {
                args.clone()
            } else {
                let mut map = Map::new();
                let first = mspec.params.first().map(|p| p.name.clone()).unwrap_or_default();
                map.insert(first, Value::String(payload.clone()));
                map
            };
            let margs = match validate_arguments(mspec, &margs) {
                Ok(margs) => margs,
                Err(e) => {
                    return (
                        InvocationStatus::ValidationError,
                        format!("agent member '{member}': {e}"),
                    );
                }
            };
            let (status, member_payload) = self.execute_spec(mspec, margs, depth + 1).await;
            if status != InvocationStatus::Ok {
                return (status, format!("agent member '{member}': {member_payload}"));
            }
            payload = member_payload;
        }
        (InvocationStatus::Ok, payload)
    }
}

fn elapsed_ms(started: Instant) -> u64 {
    started.elapsed().as_millis() as u64
}

fn str_arg<'a>(args: &'a Map<String, Value>, name: &str) -> &'a str {
    args.get(name).and_then(Value::as_str).unwrap_or_default()
}

fn num_arg(args: &Map<String, Value>, name: &str) -> f64 {
    args.get(name).and_then(Value::as_f64).unwrap_or_default()
}
