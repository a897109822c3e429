//! End-to-end run: load inputs, roll out groups, score, and write the
//! episode file and manifest.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use toolforge_core::generator::{GenParams, Generator, RemoteGenerator, ScriptedGenerator};
use toolforge_core::invoker::Invoker;
use toolforge_core::registry::load_registry;
use toolforge_core::reward::{invocation_rounds, Scorer};
use toolforge_core::rollout::{RolloutConfig, RolloutEngine};
use toolforge_core::trajectory::WhitespaceTokenizer;

use crate::config::{load_config, ConfigError, ResolvedConfig};
use crate::records::{
    load_tasks, write_episodes, write_manifest, EpisodeRecord, RecordError, RunCounts,
    RunManifest, RunMetrics, EPISODES_FILE, MANIFEST_FILE,
};

#[derive(Debug, Clone)]
pub enum GeneratorChoice {
    Script(PathBuf),
    Endpoint {
        url: String,
        /// Overrides the config's `generation.model` when set.
        model: Option<String>,
    },
}

/// Flag-level overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub group_size: Option<usize>,
    pub max_turns: Option<usize>,
    pub max_concurrent_groups: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub tools: PathBuf,
    pub tasks: PathBuf,
    pub config: PathBuf,
    pub generator: GeneratorChoice,
    pub out: PathBuf,
    pub overrides: Overrides,
}

#[derive(Debug, Error)]
pub enum RunError {
    /// Anything wrong with inputs or configuration: exit code 2.
    #[error("{0}")]
    Config(String),
    /// Every group failed: exit code 3.
    #[error("all {tasks} task groups failed; first error: {first_error}")]
    TotalFailure { tasks: usize, first_error: String },
    /// Output I/O failure: exit code 1.
    #[error("cannot write output: {0}")]
    Output(String),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl From<RecordError> for RunError {
    fn from(e: RecordError) -> Self {
        RunError::Config(e.to_string())
    }
}

/// Printed summary of a finished run.
#[derive(Debug)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
}

pub async fn execute_run(options: &RunOptions) -> Result<RunReport, RunError> {
    let config = load_config(&options.config)?;
    let registry =
        Arc::new(load_registry(&options.tools).map_err(|e| RunError::Config(e.to_string()))?);
    let tasks = load_tasks(&options.tasks)?;
    if tasks.is_empty() {
        return Err(RunError::Config(format!(
            "task file {} contains no tasks",
            options.tasks.display()
        )));
    }
    if let Some(policy) = &config.reward.verify {
        if registry.get(&policy.tool).is_none() {
            return Err(RunError::Config(format!(
                "reward.verify.tool '{}' is not in the tool registry",
                policy.tool
            )));
        }
    }

    let (generator, deterministic): (Arc<dyn Generator>, bool) = match &options.generator {
        GeneratorChoice::Script(path) => {
            let scripted =
                ScriptedGenerator::from_file(path).map_err(|e| RunError::Config(e.to_string()))?;
            (Arc::new(scripted), true)
        }
        GeneratorChoice::Endpoint { url, model } => {
            let model = model.clone().unwrap_or_else(|| config.generation.model.clone());
            let remote = RemoteGenerator::new(url, model).with_retries(config.generation.retries);
            (Arc::new(remote), false)
        }
    };

    let invoker =
        Arc::new(Invoker::new(registry.clone()).map_err(|e| RunError::Config(e.to_string()))?);
    let seed = options.overrides.seed.unwrap_or(0);
    let rollout_config = RolloutConfig {
        max_turns: options.overrides.max_turns.unwrap_or(config.rollout.max_turns),
        group_size: options.overrides.group_size.unwrap_or(config.rollout.group_size),
        gen_params: GenParams {
            temperature: config.generation.temperature,
            max_new_tokens: config.generation.max_new_tokens,
            seed: None,
        },
        grammar: config.grammar.clone(),
        template: config.template.clone(),
        max_concurrent_groups: options
            .overrides
            .max_concurrent_groups
            .unwrap_or(config.rollout.max_concurrent_groups),
        seed,
    };
    if rollout_config.max_turns == 0 || rollout_config.group_size == 0 {
        return Err(RunError::Config(
            "--max-turns and --group-size must be >= 1".into(),
        ));
    }

    let engine = RolloutEngine {
        generator,
        invoker: invoker.clone(),
        tokenizer: Arc::new(WhitespaceTokenizer),
        config: rollout_config.clone(),
    };
    let scorer = Scorer {
        config: config.reward.clone(),
        grammar: config.grammar.clone(),
        template: config.template.clone(),
        max_turns: rollout_config.max_turns,
        invoker,
    };

    std::fs::create_dir_all(&options.out)
        .map_err(|e| RunError::Output(format!("{}: {e}", options.out.display())))?;

    let started = Instant::now();
    let mut batch = engine.run_batch(&tasks).await;
    if batch.groups.is_empty() {
        return Err(RunError::TotalFailure {
            tasks: tasks.len(),
            first_error: batch
                .failures
                .first()
                .map(|f| f.error.clone())
                .unwrap_or_else(|| "no groups".into()),
        });
    }

    let ground_truths: std::collections::HashMap<&str, &str> = tasks
        .iter()
        .map(|t| (t.task_id.as_str(), t.ground_truth.as_str()))
        .collect();

    let mut records = Vec::new();
    let mut counts = RunCounts {
        tasks: tasks.len(),
        groups: batch.groups.len(),
        group_failures: batch.failures.len(),
        ..RunCounts::default()
    };
    let mut turns_total = 0usize;
    for group in &mut batch.groups {
        let ground_truth = ground_truths.get(group.task_id.as_str()).copied().unwrap_or("");
        let scored = scorer
            .score_group(group, ground_truth)
            .await
            .map_err(|e| RunError::Config(format!("judge template: {e}")))?;
        counts.judge_scores_missing += scored.judge_missing;
        counts.episodes_discarded += group.discarded;
        for (i, (trajectory, report)) in group
            .episodes
            .iter()
            .zip(scored.reports)
            .enumerate()
        {
            turns_total += invocation_rounds(trajectory, &config.grammar);
            records.push(EpisodeRecord {
                trajectory: trajectory.clone(),
                episode_index: i,
                reward: report,
                advantage: group.advantages[i],
            });
        }
    }
    counts.episodes = records.len();
    let wall_time_ms = started.elapsed().as_millis() as u64;

    let mean_reward = if records.is_empty() {
        None
    } else {
        Some(records.iter().map(|r| r.reward.total).sum::<f64>() / records.len() as f64)
    };
    let mean_turns = if records.is_empty() {
        None
    } else {
        Some(turns_total as f64 / records.len() as f64)
    };
    let episodes_per_minute = if wall_time_ms == 0 {
        0.0
    } else {
        records.len() as f64 * 60_000.0 / wall_time_ms as f64
    };

    let manifest = RunManifest {
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        deterministic_generator: deterministic,
        config: manifest_config_snapshot(&config, &rollout_config),
        counts,
        metrics: RunMetrics {
            mean_reward,
            mean_turns,
            wall_time_ms,
            episodes_per_minute,
        },
        failures: batch.failures,
    };

    write_episodes(&options.out.join(EPISODES_FILE), &records)
        .map_err(|e| RunError::Output(e.to_string()))?;
    write_manifest(&options.out.join(MANIFEST_FILE), &manifest)
        .map_err(|e| RunError::Output(e.to_string()))?;

    Ok(RunReport {
        out_dir: options.out.clone(),
        manifest,
    })
}

fn manifest_config_snapshot(
    config: &ResolvedConfig,
    rollout: &RolloutConfig,
) -> serde_json::Value {
    serde_json::json!({
        "grammar": config.grammar.id,
        "template": config.template.id,
        "generation": config.generation,
        "rollout": {
            "max_turns": rollout.max_turns,
            "group_size": rollout.group_size,
            "max_concurrent_groups": rollout.max_concurrent_groups,
        },
        "reward": config.reward,
    })
}
