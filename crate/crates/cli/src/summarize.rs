//! Recomputes run aggregates from the raw episode records.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use toolforge_core::parser::CallGrammar;
use toolforge_core::reward::invocation_rounds;

use crate::records::{read_episodes, read_manifest, EPISODES_FILE, MANIFEST_FILE};

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error("run directory {0} contains no episode records")]
    EmptyRun(String),
    #[error("{0}")]
    Records(#[from] crate::records::RecordError),
}

/// Aggregates recomputed from `episodes.jsonl`, independent of the numbers
/// the run itself reported.
#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub episodes: usize,
    pub tasks: usize,
    pub mean_reward: f64,
    pub mean_turns: f64,
    pub mean_advantage: f64,
    pub terminal_counts: BTreeMap<String, usize>,
    /// Throughput from the manifest's wall time, when a manifest is present.
    pub episodes_per_minute: Option<f64>,
}

pub fn summarize(run_dir: &Path) -> Result<RunSummary, SummarizeError> {
    let episodes_path = run_dir.join(EPISODES_FILE);
    if !episodes_path.exists() {
        return Err(SummarizeError::EmptyRun(run_dir.display().to_string()));
    }
    let records = read_episodes(&episodes_path)?;
    if records.is_empty() {
        return Err(SummarizeError::EmptyRun(run_dir.display().to_string()));
    }

    // use the run's grammar for round counting when the manifest names one
    let manifest = read_manifest(&run_dir.join(MANIFEST_FILE)).ok();
    let grammar = manifest
        .as_ref()
        .and_then(|m| m.config["grammar"].as_str())
        .and_then(CallGrammar::from_id)
        .unwrap_or_default();

    let n = records.len() as f64;
    let mean_reward = records.iter().map(|r| r.reward.total).sum::<f64>() / n;
    let mean_turns = records
        .iter()
        .map(|r| invocation_rounds(&r.trajectory, &grammar))
        .sum::<usize>() as f64
        / n;
    let mean_advantage = records.iter().map(|r| r.advantage).sum::<f64>() / n;

    let mut terminal_counts = BTreeMap::new();
    let mut tasks = std::collections::BTreeSet::new();
    for record in &records {
        let reason = record
            .trajectory
            .terminal
            .map(|t| format!("{t:?}"))
            .unwrap_or_else(|| "unknown".into());
        *terminal_counts.entry(reason).or_insert(0) += 1;
        tasks.insert(record.trajectory.task_id.clone());
    }

    let episodes_per_minute = manifest.map(|m| m.metrics.episodes_per_minute);

    Ok(RunSummary {
        episodes: records.len(),
        tasks: tasks.len(),
        mean_reward,
        mean_turns,
        mean_advantage,
        terminal_counts,
        episodes_per_minute,
    })
}

impl RunSummary {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("episodes:        {}\n", self.episodes));
        out.push_str(&format!("tasks:           {}\n", self.tasks));
        out.push_str(&format!("mean reward:     {:.4}\n", self.mean_reward));
        out.push_str(&format!("mean turns:      {:.2}\n", self.mean_turns));
        out.push_str(&format!("mean advantage:  {:+.4}\n", self.mean_advantage));
        if let Some(throughput) = self.episodes_per_minute {
            out.push_str(&format!("episodes/minute: {throughput:.1}\n"));
        }
        out.push_str("terminals:\n");
        for (reason, count) in &self.terminal_counts {
            out.push_str(&format!("  {reason}: {count}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dir_is_an_empty_run() {
        let dir = tempfile::tempdir().unwrap();
        let err = summarize(dir.path()).unwrap_err();
        assert!(matches!(err, SummarizeError::EmptyRun(_)));
    }
}
