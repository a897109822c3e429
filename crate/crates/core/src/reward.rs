//! Trajectory-level reward scoring and group-relative advantages.
//!
//! Three mechanisms, usable independently or combined:
//! - rule rewards: a weighted sum of per-dimension scores (format validity,
//!   task completion, efficiency);
//! - judge rewards: a separate model scores the rendered trajectory against
//!   a criterion prompt and reports a `SCORE:` line;
//! - verify rewards: the final answer is executed through a verifier tool
//!   and compared against the expected result.
//!
//! The combined total is the weighted mean of whichever components are
//! enabled and present; disabled components are absent, never zero-filled.

use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::generator::GenParams;
use crate::http::ChatClient;
use crate::invoker::{InvocationStatus, Invoker};
use crate::parser::{parse_response, CallGrammar, ParseOutcome, ToolCall};
use crate::rollout::EpisodeGroup;
use crate::template::{render_context, ChatTemplate, TemplateError};
use crate::trajectory::{SegmentKind, Trajectory};

/// Bound on concurrent judge and verifier requests per group.
const SCORING_FANOUT: usize = 16;

/// Epsilon floor in the advantage denominator.
const ADVANTAGE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleDimension {
    /// 1 iff every model span containing a call block parsed cleanly.
    FormatValidity,
    /// 1 iff the normalized final answer equals the normalized ground truth.
    TaskCompletion,
    /// `max(0, 1 - rounds / max_turns)`.
    Efficiency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub name: String,
    pub weight: f64,
    pub dimension: RuleDimension,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RuleSetError {
    #[error("duplicate rule name '{0}'")]
    DuplicateName(String),
    #[error("rule '{0}' has a non-finite weight")]
    NonFiniteWeight(String),
}

impl RuleSet {
    pub fn validate(&self) -> Result<(), RuleSetError> {
        let mut seen = std::collections::BTreeSet::new();
        for rule in &self.rules {
            if !seen.insert(rule.name.as_str()) {
                return Err(RuleSetError::DuplicateName(rule.name.clone()));
            }
            if !rule.weight.is_finite() {
                return Err(RuleSetError::NonFiniteWeight(rule.name.clone()));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// Unweighted score of one rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleScore {
    pub name: String,
    pub score: f64,
}

/// Counts invocation rounds: turns whose model span parsed to calls and was
/// answered by at least one observation. The forced answer after the budget
/// is never followed by observations, so it never counts.
pub fn invocation_rounds(traj: &Trajectory, grammar: &CallGrammar) -> usize {
    let mut rounds = 0;
    for (i, span) in traj.spans.iter().enumerate() {
        if span.kind != SegmentKind::ModelText {
            continue;
        }
        let answered = traj
            .spans
            .get(i + 1)
            .is_some_and(|next| next.kind == SegmentKind::Observation);
        if answered && matches!(parse_response(&span.text, grammar), ParseOutcome::Calls(_)) {
            rounds += 1;
        }
    }
    rounds
}

/// QA-style normalization for exact match: lowercase, strip punctuation,
/// collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Evaluates every rule on a terminal trajectory and returns the per-rule
/// scores alongside the weighted sum.
pub fn compute_rule_score(
    traj: &Trajectory,
    ground_truth: &str,
    rules: &RuleSet,
    grammar: &CallGrammar,
    max_turns: usize,
) -> (Vec<RuleScore>, f64) {
    let format_ok = traj
        .spans
        .iter()
        .filter(|s| s.kind == SegmentKind::ModelText && s.text.contains(&grammar.open_tag))
        .all(|s| matches!(parse_response(&s.text, grammar), ParseOutcome::Calls(_)));

    let completed = traj
        .final_answer
        .as_deref()
        .is_some_and(|answer| normalize_answer(answer) == normalize_answer(ground_truth));

    let rounds = invocation_rounds(traj, grammar);
    let efficiency = if max_turns == 0 {
        0.0
    } else {
        (1.0 - rounds as f64 / max_turns as f64).max(0.0)
    };

    let mut scores = Vec::with_capacity(rules.rules.len());
    let mut total = 0.0;
    for rule in &rules.rules {
        let score = match rule.dimension {
            RuleDimension::FormatValidity => f64::from(format_ok),
            RuleDimension::TaskCompletion => f64::from(completed),
            RuleDimension::Efficiency => efficiency,
        };
        total += rule.weight * score;
        scores.push(RuleScore {
            name: rule.name.clone(),
            score,
        });
    }
    (scores, total)
}

/// Judge endpoint plus the criterion prompt template. The template must
/// contain `{trajectory}` and `{ground_truth}` placeholders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JudgeConfig {
    pub endpoint: String,
    #[serde(default = "default_judge_model")]
    pub model: String,
    pub template: String,
    #[serde(default = "default_judge_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_judge_model() -> String {
    "judge".into()
}

fn default_judge_timeout_ms() -> u64 {
    30_000
}

/// Standard criterion asking for correctness against the ground truth.
pub const DEFAULT_JUDGE_TEMPLATE: &str = "You are grading an agent's work.\n\
Interaction:\n{trajectory}\n\nExpected result: {ground_truth}\n\n\
Judge whether the agent's final answer matches the expected result and how \
well it used its tools.";

const SCORE_INSTRUCTION: &str =
    "End your reply with a final line of the form `SCORE: <number between 0 and 1>`.";

/// Fills the judge template with the rendered trajectory and ground truth,
/// then appends the SCORE-line instruction.
pub fn build_judge_prompt(
    traj: &Trajectory,
    ground_truth: &str,
    judge: &JudgeConfig,
    template: &ChatTemplate,
) -> Result<String, TemplateError> {
    if !judge.template.contains("{trajectory}") {
        return Err(TemplateError::MissingPlaceholder("{trajectory}"));
    }
    if !judge.template.contains("{ground_truth}") {
        return Err(TemplateError::MissingPlaceholder("{ground_truth}"));
    }
    let rendered = render_context(traj, template)?;
    let filled = judge
        .template
        .replace("{trajectory}", &rendered)
        .replace("{ground_truth}", ground_truth);
    Ok(format!("{filled}\n\n{SCORE_INSTRUCTION}"))
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("no SCORE line found in judge output")]
pub struct ScoreNotFound;

/// Pulls the score from judge output: the last line matching
/// `SCORE: <number>` wins, clamped to `[0, 1]`.
pub fn extract_judge_score(judge_output: &str) -> Result<f64, ScoreNotFound> {
    static SCORE_LINE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = SCORE_LINE.get_or_init(|| {
        regex::Regex::new(r"(?m)^\s*SCORE:\s*(-?\d+(?:\.\d+)?)\s*$").expect("valid regex")
    });
    re.captures_iter(judge_output)
        .last()
        .and_then(|cap| cap[1].parse::<f64>().ok())
        .map(|score| score.clamp(0.0, 1.0))
        .ok_or(ScoreNotFound)
}

/// How verifier output is compared to the expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Comparator {
    ExactMatch,
    NumericTolerance { epsilon: f64 },
}

impl Comparator {
    pub fn accepts(&self, actual: &str, expected: &str) -> bool {
        match self {
            Comparator::ExactMatch => actual.trim() == expected.trim(),
            Comparator::NumericTolerance { epsilon } => {
                match (actual.trim().parse::<f64>(), expected.trim().parse::<f64>()) {
                    (Ok(a), Ok(e)) => (a - e).abs() <= *epsilon,
                    _ => false,
                }
            }
        }
    }
}

/// Verification request for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySpec {
    /// Registry name of the verifier tool.
    pub tool: String,
    pub expected: String,
    pub comparator: Comparator,
}

/// Raw verifier payload plus the 0/1 verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub verified_results: String,
    pub score: f64,
}

/// Runs each episode's final answer through its verifier tool, all episodes
/// concurrently. Verifier errors score 0 with the error recorded.
pub async fn verify_outputs(
    episodes: &[Trajectory],
    specs: &[VerifySpec],
    invoker: &Invoker,
) -> Vec<VerifyOutcome> {
    assert_eq!(
        episodes.len(),
        specs.len(),
        "verify specs must align 1:1 with episodes"
    );
    futures::stream::iter(episodes.iter().zip(specs).map(|(traj, spec)| async move {
        let Some(answer) = traj.final_answer.as_deref() else {
            return VerifyOutcome {
                verified_results: "no final answer to verify".into(),
                score: 0.0,
            };
        };
        let Some(tool_spec) = invoker.registry().get(&spec.tool) else {
            return VerifyOutcome {
                verified_results: format!("verifier tool '{}' is not registered", spec.tool),
                score: 0.0,
            };
        };
        let mut arguments = Map::new();
        let first_param = tool_spec
            .params
            .first()
            .map(|p| p.name.clone())
            .unwrap_or_default();
        arguments.insert(first_param, Value::String(answer.to_string()));
        let call = ToolCall {
            tool_name: spec.tool.clone(),
            arguments,
            raw_text: String::new(),
        };

        let result = invoker.invoke_round(std::slice::from_ref(&call)).await.remove(0);
        if result.status != InvocationStatus::Ok {
            return VerifyOutcome {
                verified_results: format!("verifier {:?}: {}", result.status, result.payload),
                score: 0.0,
            };
        }
        let accepted = spec.comparator.accepts(&result.payload, &spec.expected);
        VerifyOutcome {
            verified_results: result.payload,
            score: f64::from(accepted),
        }
    }))
    .buffered(SCORING_FANOUT)
    .collect()
    .await
}

/// Group-relative advantages: `(r_i - mean) / (std + eps)` with population
/// standard deviation. Zero-variance and singleton groups yield all zeros.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return vec![0.0; rewards.len()];
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let variance = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = variance.sqrt();
    if std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / (std + ADVANTAGE_EPS)).collect()
}

/// Per-episode reward breakdown, serialized into the episode record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReport {
    pub rule_scores: Vec<RuleScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rule: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<f64>,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verified_results: Option<String>,
}

/// Relative weights of enabled components in the combined total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineWeights {
    pub rule: f64,
    pub judge: f64,
    pub verify: f64,
}

impl Default for CombineWeights {
    fn default() -> Self {
        Self {
            rule: 1.0,
            judge: 1.0,
            verify: 1.0,
        }
    }
}

/// Verification policy applied to each task: which tool verifies and how
/// output is compared. The expectation is the task's ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyPolicy {
    pub tool: String,
    pub comparator: Comparator,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RewardConfig {
    #[serde(default)]
    pub rules: RuleSet,
    #[serde(default)]
    pub judge: Option<JudgeConfig>,
    #[serde(default)]
    pub verify: Option<VerifyPolicy>,
    #[serde(default)]
    pub combine: CombineWeights,
}

/// Scored group: per-episode reports plus judge bookkeeping for the batch
/// report.
#[derive(Debug)]
pub struct ScoredGroup {
    pub reports: Vec<RewardReport>,
    /// Episodes whose judge reply had no SCORE line (or whose judge call
    /// failed).
    pub judge_missing: usize,
}

/// Scores complete episode groups. Rule scoring is pure; judge and verify
/// calls fan out concurrently per group.
pub struct Scorer {
    pub config: RewardConfig,
    pub grammar: CallGrammar,
    pub template: ChatTemplate,
    pub max_turns: usize,
    pub invoker: Arc<Invoker>,
}

impl Scorer {
    /// Fills `group.rewards` and `group.advantages` and returns the
    /// per-episode reports in episode order.
    pub async fn score_group(
        &self,
        group: &mut EpisodeGroup,
        ground_truth: &str,
    ) -> Result<ScoredGroup, TemplateError> {
        let n = group.episodes.len();
        let mut judge_missing = 0usize;

        let rule_results: Vec<Option<(Vec<RuleScore>, f64)>> = group
            .episodes
            .iter()
            .map(|traj| {
                if self.config.rules.is_empty() {
                    None
                } else {
                    Some(compute_rule_score(
                        traj,
                        ground_truth,
                        &self.config.rules,
                        &self.grammar,
                        self.max_turns,
                    ))
                }
            })
            .collect();

        let judge_results: Vec<Option<f64>> = match &self.config.judge {
            None => vec![None; n],
            Some(judge) => {
                let client = ChatClient::new(&judge.endpoint, &judge.model);
                let timeout = Duration::from_millis(judge.timeout_ms);
                let mut prompts = Vec::with_capacity(n);
                for traj in &group.episodes {
                    prompts.push(build_judge_prompt(traj, ground_truth, judge, &self.template)?);
                }
                futures::stream::iter(prompts.iter().map(|prompt| {
                    let client = &client;
                    async move {
                        match client.complete(prompt, &GenParams::default(), timeout).await {
                            Ok(reply) => extract_judge_score(&reply).ok(),
                            Err(e) => {
                                tracing::warn!(error = %e, "judge call failed");
                                None
                            }
                        }
                    }
                }))
                .buffered(SCORING_FANOUT)
                .collect()
                .await
            }
        };

        let verify_results: Vec<Option<VerifyOutcome>> = match &self.config.verify {
            None => vec![None; n],
            Some(policy) => {
                let specs: Vec<VerifySpec> = (0..n)
                    .map(|_| VerifySpec {
                        tool: policy.tool.clone(),
                        expected: ground_truth.to_string(),
                        comparator: policy.comparator.clone(),
                    })
                    .collect();
                verify_outputs(&group.episodes, &specs, &self.invoker)
                    .await
                    .into_iter()
                    .map(Some)
                    .collect()
            }
        };

        let mut reports = Vec::with_capacity(n);
        for ((rule, judge), verify) in rule_results
            .into_iter()
            .zip(judge_results)
            .zip(verify_results)
        {
            if self.config.judge.is_some() && judge.is_none() {
                judge_missing += 1;
            }
            let (rule_scores, rule_total) = match rule {
                Some((scores, total)) => (scores, Some(total)),
                None => (Vec::new(), None),
            };
            let (verified_results, verify_score) = match verify {
                Some(outcome) => (Some(outcome.verified_results), Some(outcome.score)),
                None => (None, None),
            };

            let weights = &self.config.combine;
            let mut weighted = 0.0;
            let mut weight_sum = 0.0;
            for (score, weight) in [
                (rule_total, weights.rule),
                (judge, weights.judge),
                (verify_score, weights.verify),
            ] {
                if let Some(score) = score {
                    weighted += weight * score;
                    weight_sum += weight;
                }
            }
            let total = if weight_sum == 0.0 {
                0.0
            } else {
                weighted / weight_sum
            };

            reports.push(RewardReport {
                rule_scores,
                rule: rule_total,
                judge,
                verify: verify_score,
                total,
                verified_results,
            });
        }

        group.rewards = reports.iter().map(|r| r.total).collect();
        group.advantages = group_advantages(&group.rewards);
        Ok(ScoredGroup {
            reports,
            judge_missing,
        })
    }
}
