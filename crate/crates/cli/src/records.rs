//! File formats of a run: task input, episode output, and the manifest.
//!
//! - task file: one JSON record per line with `task_id`, `prompt`,
//!   `ground_truth`;
//! - episode file (`episodes.jsonl`): one record per episode embedding the
//!   trajectory, its reward report, and its group-relative advantage;
//! - manifest (`manifest.json`): config snapshot, seed, counts, and
//!   aggregate metrics, every number recomputable from the raw records.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use toolforge_core::reward::RewardReport;
use toolforge_core::rollout::{GroupFailure, TaskRecord};
use toolforge_core::trajectory::Trajectory;

pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: line {line}: duplicate task_id '{task_id}'")]
    DuplicateTask {
        path: String,
        line: usize,
        task_id: String,
    },
}

/// Loads a line-delimited task file, rejecting duplicate ids.
pub fn load_tasks(path: &Path) -> Result<Vec<TaskRecord>, RecordError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| RecordError::Io {
        path: display.clone(),
        source,
    })?;

    let mut tasks = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskRecord = serde_json::from_str(line).map_err(|e| RecordError::Parse {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if !seen.insert(task.task_id.clone()) {
            return Err(RecordError::DuplicateTask {
                path: display.clone(),
                line: i + 1,
                task_id: task.task_id,
            });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

/// One episode as written to `episodes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    #[serde(flatten)]
    pub trajectory: Trajectory,
    pub episode_index: usize,
    pub reward: RewardReport,
    pub advantage: f64,
}

/// Serializes records one per line. Field order is fixed by the structs, so
/// identical runs produce byte-identical files.
pub fn write_episodes(path: &Path, records: &[EpisodeRecord]) -> Result<(), RecordError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("episode records serialize"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| RecordError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_episodes(path: &Path) -> Result<Vec<EpisodeRecord>, RecordError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| RecordError::Io {
        path: display.clone(),
        source,
    })?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(line).map_err(|e| RecordError::Parse {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(records)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub tasks: usize,
    pub groups: usize,
    pub group_failures: usize,
    pub episodes: usize,
    pub episodes_discarded: usize,
    pub judge_scores_missing: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mean_reward: Option<f64>,
    /// Mean invocation rounds per episode.
    pub mean_turns: Option<f64>,
    pub wall_time_ms: u64,
    pub episodes_per_minute: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine_version: String,
    pub seed: u64,
    /// False for remote generators, which sample server-side.
    pub deterministic_generator: bool,
    /// Snapshot of the resolved config the run used.
    pub config: serde_json::Value,
    pub counts: RunCounts,
    pub metrics: RunMetrics,
    #[serde(default)]
    pub failures: Vec<GroupFailure>,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), RecordError> {
    let body = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(path, body).map_err(|source| RecordError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, RecordError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| RecordError::Io {
        path: display.clone(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| RecordError::Parse {
        path: display,
        line: 0,
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use toolforge_core::reward::RuleScore;
    use toolforge_core::trajectory::{SegmentKind, TerminalReason, WhitespaceTokenizer};

    #[test]
    fn task_file_round_trip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        std::fs::write(
            &path,
            "{\"task_id\":\"a\",\"prompt\":\"p\",\"ground_truth\":\"g\"}\n\n\
             {\"task_id\":\"b\",\"prompt\":\"p2\",\"ground_truth\":\"g2\"}\n",
        )
        .unwrap();
        let tasks = load_tasks(&path).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[0].task_id, "a");

        std::fs::write(
            &path,
            "{\"task_id\":\"a\",\"prompt\":\"p\",\"ground_truth\":\"g\"}\n\
             {\"task_id\":\"a\",\"prompt\":\"p\",\"ground_truth\":\"g\"}\n",
        )
        .unwrap();
        let err = load_tasks(&path).unwrap_err();
        assert!(matches!(err, RecordError::DuplicateTask { line: 2, .. }));
    }

    #[test]
    fn episode_records_round_trip_byte_stable() {
        let tok = WhitespaceTokenizer;
        let mut traj = Trajectory::new("t1");
        traj.append_span(SegmentKind::Prompt, "q", 0, &tok).unwrap();
        traj.append_span(SegmentKind::ModelText, "a", 0, &tok).unwrap();
        traj.finish(TerminalReason::AnswerProduced, Some("a".into()))
            .unwrap();
        let record = EpisodeRecord {
            trajectory: traj,
            episode_index: 0,
            reward: RewardReport {
                rule_scores: vec![RuleScore {
                    name: "completion".into(),
                    score: 1.0,
                }],
                rule: Some(1.0),
                judge: None,
                verify: None,
                total: 1.0,
                verified_results: None,
            },
            advantage: 0.0,
        };

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(EPISODES_FILE);
        write_episodes(&path, std::slice::from_ref(&record)).unwrap();
        let first = std::fs::read(&path).unwrap();
        write_episodes(&path, std::slice::from_ref(&record)).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());

        let loaded = read_episodes(&path).unwrap();
        assert_eq!(loaded, vec![record]);
    }
}
