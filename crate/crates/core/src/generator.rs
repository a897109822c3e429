//! Generator abstraction: where model responses come from.
//!
//! The engine only needs `context in, text out`. [`ScriptedGenerator`]
//! replays fixture responses deterministically; [`RemoteGenerator`] fronts a
//! chat-completion-style HTTP endpoint. Both are stateless per request, so
//! episodes can run concurrently against one shared generator.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::{ChatClient, ChatError};

/// Sampling parameters forwarded to the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub temperature: f64,
    pub max_new_tokens: u32,
    /// Per-episode seed derived from the run seed; forwarded to endpoints
    /// that support seeded sampling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_new_tokens: 512,
            seed: None,
        }
    }
}

/// One generation request.
#[derive(Debug, Clone)]
pub struct GenRequest<'a> {
    pub task_id: &'a str,
    /// Zero-based count of prior generations in this episode.
    pub turn: usize,
    /// Rendered conversation so far; exactly the `render_context` output.
    pub context: &'a str,
    pub params: GenParams,
    /// False only for the forced-answer turn after the turn budget is spent.
    pub allow_tools: bool,
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("generator transport failure: {0}")]
    Transport(String),
    #[error("no script for task '{0}'")]
    MissingScript(String),
}

#[async_trait]
pub trait Generator: Send + Sync {
    async fn generate(&self, request: GenRequest<'_>) -> Result<String, GeneratorError>;

    /// True when identical requests always yield identical text.
    fn is_deterministic(&self) -> bool {
        false
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct ScriptFile {
    schema_version: u32,
    #[serde(default)]
    default: Option<Vec<String>>,
    #[serde(default)]
    tasks: HashMap<String, Vec<String>>,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed script {path}: {message}")]
    Parse { path: String, message: String },
    #[error("script {path}: {problem}")]
    Invalid { path: String, problem: String },
}

/// Deterministic fixture playback: response `t` of a task's script answers
/// turn `t`. Exhausted scripts repeat their last step, so a single-step
/// script models a policy that always does the same thing.
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    tasks: HashMap<String, Vec<String>>,
    default: Option<Vec<String>>,
}

impl ScriptedGenerator {
    pub fn new(tasks: HashMap<String, Vec<String>>, default: Option<Vec<String>>) -> Self {
        Self { tasks, default }
    }

    /// Same responses for every task.
    pub fn uniform(steps: Vec<String>) -> Self {
        Self::new(HashMap::new(), Some(steps))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScriptError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: display.clone(),
            source,
        })?;
        let file: ScriptFile = serde_json::from_str(&text).map_err(|e| ScriptError::Parse {
            path: display.clone(),
            message: e.to_string(),
        })?;
        if file.schema_version != 1 {
            return Err(ScriptError::Invalid {
                path: display.clone(),
                problem: format!("unsupported schema_version {}", file.schema_version),
            });
        }
        let mut step_lists: Vec<(&str, &Vec<String>)> = file
            .tasks
            .iter()
            .map(|(task, steps)| (task.as_str(), steps))
            .collect();
        if let Some(default) = &file.default {
            step_lists.push(("<default>", default));
        }
        for (task, steps) in step_lists {
            if steps.is_empty() {
                return Err(ScriptError::Invalid {
                    path: display.clone(),
                    problem: format!("empty step list for '{task}'"),
                });
            }
        }
        Ok(Self::new(file.tasks, file.default))
    }
}

#[async_trait]
impl Generator for ScriptedGenerator {
    async fn generate(&self, request: GenRequest<'_>) -> Result<String, GeneratorError> {
        let steps = self
            .tasks
            .get(request.task_id)
            .or(self.default.as_ref())
            .ok_or_else(|| GeneratorError::MissingScript(request.task_id.to_string()))?;
        let idx = request.turn.min(steps.len() - 1);
        Ok(steps[idx].clone())
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Chat-completion HTTP generator with a small retry budget for transport
/// faults. Repeated failure discards the episode rather than truncating it.
pub struct RemoteGenerator {
    client: ChatClient,
    retries: u32,
    timeout: Duration,
}

impl RemoteGenerator {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            client: ChatClient::new(endpoint, model),
            retries: 2,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn with_retries(mut self, retries: u32) -> Self {
        self.retries = retries;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[async_trait]
impl Generator for RemoteGenerator {
    async fn generate(&self, request: GenRequest<'_>) -> Result<String, GeneratorError> {
        let mut last_error = String::new();
        for attempt in 0..=self.retries {
            match self
                .client
                .complete(request.context, &request.params, self.timeout)
                .await
            {
                Ok(text) => return Ok(text),
                Err(e @ (ChatError::Timeout | ChatError::Transport(_) | ChatError::Status(_))) => {
                    last_error = e.to_string();
                    tracing::warn!(attempt, error = %last_error, "generator request failed");
                }
                Err(e @ ChatError::Unparseable(_)) => {
                    return Err(GeneratorError::Transport(e.to_string()));
                }
            }
        }
        Err(GeneratorError::Transport(last_error))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn request(task_id: &str, turn: usize) -> GenRequest<'_> {
        GenRequest {
            task_id,
            turn,
            context: "",
            params: GenParams::default(),
            allow_tools: true,
        }
    }

    #[tokio::test]
    async fn scripted_playback_by_turn() {
        let generator = ScriptedGenerator::uniform(vec!["first".into(), "second".into()]);
        assert_eq!(generator.generate(request("t", 0)).await.unwrap(), "first");
        assert_eq!(generator.generate(request("t", 1)).await.unwrap(), "second");
        // exhausted scripts repeat the last step
        assert_eq!(generator.generate(request("t", 9)).await.unwrap(), "second");
    }

    #[tokio::test]
    async fn per_task_scripts_win_over_default() {
        let mut tasks = HashMap::new();
        tasks.insert("special".to_string(), vec!["scripted".to_string()]);
        let generator = ScriptedGenerator::new(tasks, Some(vec!["fallback".into()]));
        assert_eq!(
            generator.generate(request("special", 0)).await.unwrap(),
            "scripted"
        );
        assert_eq!(
            generator.generate(request("other", 0)).await.unwrap(),
            "fallback"
        );
    }

    #[tokio::test]
    async fn missing_script_is_an_error() {
        let generator = ScriptedGenerator::new(HashMap::new(), None);
        let err = generator.generate(request("t", 0)).await.unwrap_err();
        assert!(matches!(err, GeneratorError::MissingScript(_)));
    }
}
