//! The closed interaction loop: Generate → Parse → Invoke → Update, run per
//! episode, in groups per prompt, and in bounded-parallel batches.
//!
//! Termination: a response with no call blocks ends the episode with its
//! text as the final answer; two consecutive malformed responses abort it;
//! once `max_turns` invocation rounds are spent, one last generation runs
//! with tool calling disabled so every budget-bound episode still yields a
//! scoreable answer. Two consecutive rounds in which every call fails abort
//! the episode as an unrecoverable tool failure.

use std::sync::Arc;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::{GenParams, GenRequest, Generator, GeneratorError};
use crate::invoker::Invoker;
use crate::parser::{self, CallGrammar, ParseOutcome};
use crate::template::{render_context, ChatTemplate, TemplateError};
use crate::trajectory::{SegmentKind, TerminalReason, Tokenizer, Trajectory, TrajectoryError};

/// One task: prompt plus the expected answer used for scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: String,
    pub prompt: String,
    pub ground_truth: String,
}

#[derive(Debug, Clone)]
pub struct RolloutConfig {
    /// Maximum invocation rounds per episode.
    pub max_turns: usize,
    /// Episodes rolled out per prompt for group-relative scoring.
    pub group_size: usize,
    pub gen_params: GenParams,
    pub grammar: CallGrammar,
    pub template: ChatTemplate,
    /// Bound on groups in flight during a batch.
    pub max_concurrent_groups: usize,
    /// Run seed; every episode derives its own generator seed from it.
    pub seed: u64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            max_turns: 4,
            group_size: 1,
            gen_params: GenParams::default(),
            grammar: CallGrammar::qwen3(),
            template: ChatTemplate::qwen3(),
            max_concurrent_groups: 4,
            seed: 0,
        }
    }
}

/// `group_size` episodes over one prompt. Rewards and advantages stay empty
/// until scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeGroup {
    pub task_id: String,
    pub prompt: String,
    pub episodes: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Episodes dropped because the generator was unavailable.
    pub discarded: usize,
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    GeneratorUnavailable(#[from] GeneratorError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Error)]
pub enum GroupError {
    #[error("all {group_size} episodes of task '{task_id}' failed: {first_error}")]
    AllEpisodesFailed {
        task_id: String,
        group_size: usize,
        first_error: String,
    },
}

/// A task whose whole group failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupFailure {
    pub task_id: String,
    pub error: String,
}

/// Batch output: groups in input order plus failure records.
#[derive(Debug)]
pub struct BatchOutcome {
    pub groups: Vec<EpisodeGroup>,
    pub failures: Vec<GroupFailure>,
}

/// Drives episodes against a generator and an invoker. Shared state is
/// read-only; each episode owns its trajectory.
pub struct RolloutEngine {
    pub generator: Arc<dyn Generator>,
    pub invoker: Arc<Invoker>,
    pub tokenizer: Arc<dyn Tokenizer>,
    pub config: RolloutConfig,
}

impl RolloutEngine {
    /// Runs one episode. Transport-level generator failure discards the
    /// episode entirely — no partial trajectory is ever returned.
    pub async fn run_episode(
        &self,
        task_id: &str,
        prompt: &str,
        episode_index: usize,
    ) -> Result<Trajectory, EpisodeError> {
        let cfg = &self.config;
        let mut params = cfg.gen_params.clone();
        params.seed = Some(episode_seed(cfg.seed, task_id, episode_index));

        let mut traj = Trajectory::new(task_id);
        traj.append_span(SegmentKind::Prompt, prompt, 0, self.tokenizer.as_ref())?;

        let mut turn = 0usize;
        let mut rounds = 0usize;
        let mut malformed_streak = 0u32;
        let mut failed_round_streak = 0u32;

        loop {
            if rounds == cfg.max_turns {
                // budget spent: one forced generation with tool calling
                // disabled, taken verbatim as the answer
                let context = render_context(&traj, &cfg.template)?;
                let answer = self
                    .generator
                    .generate(GenRequest {
                        task_id,
                        turn,
                        context: &context,
                        params: params.clone(),
                        allow_tools: false,
                    })
                    .await?;
                traj.append_span(
                    SegmentKind::ModelText,
                    answer.clone(),
                    turn,
                    self.tokenizer.as_ref(),
                )?;
                traj.finish(TerminalReason::MaxTurnsReached, Some(answer))?;
                break;
            }

            let context = render_context(&traj, &cfg.template)?;
            let response = self
                .generator
                .generate(GenRequest {
                    task_id,
                    turn,
                    context: &context,
                    params: params.clone(),
                    allow_tools: true,
                })
                .await?;
            traj.append_span(
                SegmentKind::ModelText,
                response.clone(),
                turn,
                self.tokenizer.as_ref(),
            )?;

            match parser::parse_response(&response, &cfg.grammar) {
                ParseOutcome::Terminate(answer) => {
                    traj.finish(TerminalReason::AnswerProduced, Some(answer))?;
                    break;
                }
                ParseOutcome::Malformed(reason) => {
                    malformed_streak += 1;
                    if malformed_streak >= 2 {
                        traj.finish(TerminalReason::ParseFailureAbort, None)?;
                        break;
                    }
                    let notice = parser::format_parse_error(&reason, &cfg.grammar);
                    traj.append_span(
                        SegmentKind::Observation,
                        notice,
                        turn,
                        self.tokenizer.as_ref(),
                    )?;
                }
                ParseOutcome::Calls(calls) => {
                    malformed_streak = 0;
                    let results = self.invoker.invoke_round(&calls).await;
                    let all_failed = results.iter().all(|r| !r.is_ok());
                    for result in &results {
                        let observation = parser::format_observation(result, &cfg.grammar);
                        traj.append_span(
                            SegmentKind::Observation,
                            observation,
                            turn,
                            self.tokenizer.as_ref(),
                        )?;
                    }
                    rounds += 1;
                    if all_failed {
                        failed_round_streak += 1;
                        if failed_round_streak >= 2 {
                            traj.finish(TerminalReason::ToolFailureAbort, None)?;
                            break;
                        }
                    } else {
                        failed_round_streak = 0;
                    }
                }
            }
            turn += 1;
        }

        Ok(traj)
    }

    /// Rolls out `group_size` mutually independent episodes over one prompt.
    /// Fails only when every episode fails.
    pub async fn run_group(
        &self,
        task_id: &str,
        prompt: &str,
    ) -> Result<EpisodeGroup, GroupError> {
        let outcomes = futures::future::join_all(
            (0..self.config.group_size).map(|i| self.run_episode(task_id, prompt, i)),
        )
        .await;

        let mut episodes = Vec::new();
        let mut first_error = None;
        let mut discarded = 0usize;
        for outcome in outcomes {
            match outcome {
                Ok(traj) => episodes.push(traj),
                Err(e) => {
                    discarded += 1;
                    tracing::warn!(task_id, error = %e, "episode discarded");
                    if first_error.is_none() {
                        first_error = Some(e.to_string());
                    }
                }
            }
        }

        if episodes.is_empty() {
            return Err(GroupError::AllEpisodesFailed {
                task_id: task_id.to_string(),
                group_size: self.config.group_size,
                first_error: first_error.unwrap_or_else(|| "no episodes".into()),
            });
        }
        Ok(EpisodeGroup {
            task_id: task_id.to_string(),
            prompt: prompt.to_string(),
            episodes,
            rewards: Vec::new(),
            advantages: Vec::new(),
            discarded,
        })
    }

    /// Runs a group per task with at most `max_concurrent_groups` in flight.
    /// Successful groups come back in input order; failures never abort the
    /// batch.
    pub async fn run_batch(&self, tasks: &[TaskRecord]) -> BatchOutcome {
        let concurrency = self.config.max_concurrent_groups.max(1);
        let ordered: Vec<(String, Result<EpisodeGroup, GroupError>)> =
            futures::stream::iter(tasks.iter().map(|task| async move {
                (
                    task.task_id.clone(),
                    self.run_group(&task.task_id, &task.prompt).await,
                )
            }))
            .buffered(concurrency)
            .collect()
            .await;

        let mut groups = Vec::new();
        let mut failures = Vec::new();
        for (task_id, outcome) in ordered {
            match outcome {
                Ok(group) => groups.push(group),
                Err(e) => failures.push(GroupFailure {
                    task_id,
                    error: e.to_string(),
                }),
            }
        }
        BatchOutcome { groups, failures }
    }
}

/// Stable per-episode seed: FNV-1a over the task id, mixed with the run seed
/// and episode index. Hand-rolled so the derivation never shifts under a
/// hasher change.
pub fn episode_seed(base: u64, task_id: &str, episode_index: usize) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET ^ base;
    for byte in task_id.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(PRIME);
    }
    hash ^= episode_index as u64;
    hash.wrapping_mul(PRIME)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;
    use crate::trajectory::WhitespaceTokenizer;
    use serde_json::json;

    fn registry() -> Arc<Registry> {
        let doc = json!({
            "schema_version": 1,
            "tools": [
                {"name": "calculator", "kind": "program", "endpoint": "builtin:calculator",
                 "timeout_ms": 1000,
                 "params": [{"name": "expr", "type": "string", "required": true}]}
            ]
        })
        .to_string();
        Arc::new(Registry::from_json_str(&doc, None).unwrap())
    }

    fn engine(steps: Vec<&str>, max_turns: usize, group_size: usize) -> RolloutEngine {
        RolloutEngine {
            generator: Arc::new(crate::generator::ScriptedGenerator::uniform(
                steps.into_iter().map(String::from).collect(),
            )),
            invoker: Arc::new(Invoker::new(registry()).unwrap()),
            tokenizer: Arc::new(WhitespaceTokenizer),
            config: RolloutConfig {
                max_turns,
                group_size,
                ..RolloutConfig::default()
            },
        }
    }

    const CALC_CALL: &str =
        "<tool_call>{\"name\": \"calculator\", \"arguments\": {\"expr\": \"2+2\"}}</tool_call>";

    #[tokio::test]
    async fn call_then_answer_replay() {
        let engine = engine(vec![CALC_CALL, "the answer is 4"], 4, 1);
        let traj = engine.run_episode("t1", "what is 2+2?", 0).await.unwrap();

        let kinds: Vec<SegmentKind> = traj.spans.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![
                SegmentKind::Prompt,
                SegmentKind::ModelText,
                SegmentKind::Observation,
                SegmentKind::ModelText,
            ]
        );
        assert_eq!(traj.terminal, Some(TerminalReason::AnswerProduced));
        assert_eq!(traj.final_answer.as_deref(), Some("the answer is 4"));
        assert!(traj.spans[2].text.contains('4'));
    }

    #[tokio::test]
    async fn turn_budget_forces_an_answer() {
        // a policy that always calls: exactly 3 rounds, then a forced answer
        let engine = engine(vec![CALC_CALL], 3, 1);
        let traj = engine.run_episode("t1", "loop forever", 0).await.unwrap();

        let observations = traj
            .spans
            .iter()
            .filter(|s| s.kind == SegmentKind::Observation)
            .count();
        assert_eq!(observations, 3);
        assert_eq!(traj.terminal, Some(TerminalReason::MaxTurnsReached));
        assert!(traj.final_answer.is_some());
    }

    #[tokio::test]
    async fn two_malformed_responses_abort() {
        let engine = engine(vec!["<tool_call>{broken"], 4, 1);
        let traj = engine.run_episode("t1", "q", 0).await.unwrap();

        assert_eq!(traj.terminal, Some(TerminalReason::ParseFailureAbort));
        assert!(traj.final_answer.is_none());
        // one corrective observation was offered before aborting
        let kinds: Vec<SegmentKind> = traj.spans.iter().map(|s| s.kind).collect();
        assert_eq!(
            kinds,
            vec![
                SegmentKind::Prompt,
                SegmentKind::ModelText,
                SegmentKind::Observation,
                SegmentKind::ModelText,
            ]
        );
    }

    #[tokio::test]
    async fn two_fully_failed_rounds_abort() {
        let bad_call =
            "<tool_call>{\"name\": \"calculator\", \"arguments\": {\"expr\": \"1/0\"}}</tool_call>";
        let engine = engine(vec![bad_call], 8, 1);
        let traj = engine.run_episode("t1", "q", 0).await.unwrap();
        assert_eq!(traj.terminal, Some(TerminalReason::ToolFailureAbort));
        let observations = traj
            .spans
            .iter()
            .filter(|s| s.kind == SegmentKind::Observation)
            .count();
        assert_eq!(observations, 2);
    }

    #[tokio::test]
    async fn deterministic_group_is_identical() {
        let engine = engine(vec![CALC_CALL, "done"], 4, 4);
        let group = engine.run_group("t1", "q").await.unwrap();
        assert_eq!(group.episodes.len(), 4);
        assert!(group.rewards.is_empty() && group.advantages.is_empty());
        for episode in &group.episodes[1..] {
            assert_eq!(episode, &group.episodes[0]);
        }
    }

    #[tokio::test]
    async fn singleton_group() {
        let engine = engine(vec!["just an answer"], 4, 1);
        let group = engine.run_group("t1", "q").await.unwrap();
        assert_eq!(group.episodes.len(), 1);
        assert_eq!(
            group.episodes[0].terminal,
            Some(TerminalReason::AnswerProduced)
        );
    }

    #[tokio::test]
    async fn batch_preserves_input_order_and_isolates_failures() {
        // tasks without scripts fail; the generator only knows "a" and "c"
        let mut tasks = std::collections::HashMap::new();
        tasks.insert("a".to_string(), vec!["answer a".to_string()]);
        tasks.insert("c".to_string(), vec!["answer c".to_string()]);
        let engine = RolloutEngine {
            generator: Arc::new(crate::generator::ScriptedGenerator::new(tasks, None)),
            invoker: Arc::new(Invoker::new(registry()).unwrap()),
            tokenizer: Arc::new(WhitespaceTokenizer),
            config: RolloutConfig {
                max_concurrent_groups: 2,
                ..RolloutConfig::default()
            },
        };
        let batch = engine
            .run_batch(&[
                TaskRecord {
                    task_id: "a".into(),
                    prompt: "qa".into(),
                    ground_truth: String::new(),
                },
                TaskRecord {
                    task_id: "b".into(),
                    prompt: "qb".into(),
                    ground_truth: String::new(),
                },
                TaskRecord {
                    task_id: "c".into(),
                    prompt: "qc".into(),
                    ground_truth: String::new(),
                },
            ])
            .await;

        let ids: Vec<&str> = batch.groups.iter().map(|g| g.task_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c"]);
        assert_eq!(batch.failures.len(), 1);
        assert_eq!(batch.failures[0].task_id, "b");
    }

    #[test]
    fn episode_seed_is_stable_and_distinct() {
        assert_eq!(episode_seed(7, "task", 0), episode_seed(7, "task", 0));
        assert_ne!(episode_seed(7, "task", 0), episode_seed(7, "task", 1));
        assert_ne!(episode_seed(7, "task", 0), episode_seed(8, "task", 0));
        assert_ne!(episode_seed(7, "a", 0), episode_seed(7, "b", 0));
    }
}
