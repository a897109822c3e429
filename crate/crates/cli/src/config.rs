//! Engine config file: parser grammar, chat template, generation and
//! rollout settings, and the reward block.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "parser": {"grammar": "qwen3"},
//!   "template": "qwen3",
//!   "generation": {"temperature": 0.7, "max_new_tokens": 512, "model": "default"},
//!   "rollout": {"max_turns": 4, "group_size": 4, "max_concurrent_groups": 4},
//!   "reward": {
//!     "rules": [
//!       {"name": "format", "weight": 0.25, "dimension": "format_validity"},
//!       {"name": "completion", "weight": 0.5, "dimension": "task_completion"},
//!       {"name": "efficiency", "weight": 0.25, "dimension": "efficiency"}
//!     ],
//!     "judge": {"enabled": false, "endpoint": "", "template_path": ""},
//!     "verify": {"enabled": false, "tool": "", "comparator": {"kind": "exact_match"}},
//!     "combine": {"rule": 1.0, "judge": 1.0, "verify": 1.0}
//!   }
//! }
//! ```
//!
//! `template` takes a preset id or an inline template object. Relative
//! `template_path` entries resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use toolforge_core::parser::CallGrammar;
use toolforge_core::reward::{
    CombineWeights, Comparator, JudgeConfig, RewardConfig, RuleSet, VerifyPolicy,
    DEFAULT_JUDGE_TEMPLATE,
};
use toolforge_core::template::ChatTemplate;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path}: field `{field}`: {message}")]
    Parse {
        path: String,
        field: String,
        message: String,
    },
    #[error("config {path}: {problem}")]
    Invalid { path: String, problem: String },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct FileConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub parser: ParserSection,
    #[serde(default)]
    pub template: TemplateChoice,
    #[serde(default)]
    pub generation: GenerationSection,
    #[serde(default)]
    pub rollout: RolloutSection,
    #[serde(default)]
    pub reward: RewardSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct ParserSection {
    pub grammar: String,
}

impl Default for ParserSection {
    fn default() -> Self {
        Self {
            grammar: "qwen3".into(),
        }
    }
}

/// Either a preset id or a full inline template.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum TemplateChoice {
    Preset(String),
    Inline(ChatTemplate),
}

impl Default for TemplateChoice {
    fn default() -> Self {
        Self::Preset("qwen3".into())
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default)]
pub struct GenerationSection {
    pub temperature: f64,
    pub max_new_tokens: u32,
    /// Model name forwarded to remote generators.
    pub model: String,
    /// Remote-generator retry budget for transport failures; once it is
    /// spent, the episode is discarded.
    pub retries: u32,
}

impl Default for GenerationSection {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_new_tokens: 512,
            model: "default".into(),
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default)]
pub struct RolloutSection {
    pub max_turns: usize,
    pub group_size: usize,
    pub max_concurrent_groups: usize,
}

impl Default for RolloutSection {
    fn default() -> Self {
        Self {
            max_turns: 4,
            group_size: 1,
            max_concurrent_groups: 4,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default)]
pub struct RewardSection {
    pub rules: RuleSet,
    pub judge: Option<JudgeSection>,
    pub verify: Option<VerifySection>,
    pub combine: CombineWeights,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct JudgeSection {
    #[serde(default)]
    pub enabled: bool,
    pub endpoint: String,
    #[serde(default = "default_judge_model")]
    pub model: String,
    /// Criterion template file; the built-in correctness criterion when
    /// absent.
    #[serde(default)]
    pub template_path: Option<PathBuf>,
    #[serde(default = "default_judge_timeout")]
    pub timeout_ms: u64,
}

fn default_judge_model() -> String {
    "judge".into()
}

fn default_judge_timeout() -> u64 {
    30_000
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct VerifySection {
    #[serde(default)]
    pub enabled: bool,
    pub tool: String,
    pub comparator: Comparator,
}

/// Config after preset resolution and validation — what the engine consumes
/// and what the manifest snapshots.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub grammar: CallGrammar,
    pub template: ChatTemplate,
    pub generation: GenerationSection,
    pub rollout: RolloutSection,
    pub reward: RewardConfig,
}

pub fn load_config(path: &Path) -> Result<ResolvedConfig, ConfigError> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: display.clone(),
        source,
    })?;

    let mut de = serde_json::Deserializer::from_str(&text);
    let file: FileConfig =
        serde_path_to_error::deserialize(&mut de).map_err(|e| ConfigError::Parse {
            path: display.clone(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;

    resolve(file, path.parent().unwrap_or(Path::new(".")), &display)
}

fn resolve(
    file: FileConfig,
    base_dir: &Path,
    display: &str,
) -> Result<ResolvedConfig, ConfigError> {
    let invalid = |problem: String| ConfigError::Invalid {
        path: display.to_string(),
        problem,
    };

    if file.schema_version != SCHEMA_VERSION {
        return Err(invalid(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            file.schema_version
        )));
    }

    let grammar = CallGrammar::from_id(&file.parser.grammar)
        .ok_or_else(|| invalid(format!("field `parser.grammar`: unknown grammar '{}'", file.parser.grammar)))?;

    let template = match file.template {
        TemplateChoice::Preset(id) => ChatTemplate::from_id(&id)
            .ok_or_else(|| invalid(format!("field `template`: unknown template '{id}'")))?,
        TemplateChoice::Inline(template) => template,
    };

    if file.rollout.max_turns == 0 {
        return Err(invalid("field `rollout.max_turns` must be >= 1".into()));
    }
    if file.rollout.group_size == 0 {
        return Err(invalid("field `rollout.group_size` must be >= 1".into()));
    }
    if file.rollout.max_concurrent_groups == 0 {
        return Err(invalid(
            "field `rollout.max_concurrent_groups` must be >= 1".into(),
        ));
    }

    file.reward
        .rules
        .validate()
        .map_err(|e| invalid(format!("field `reward.rules`: {e}")))?;

    let judge = match file.reward.judge {
        Some(section) if section.enabled => {
            if section.endpoint.is_empty() {
                return Err(invalid("field `reward.judge.endpoint` must be set".into()));
            }
            let template_text = match &section.template_path {
                None => DEFAULT_JUDGE_TEMPLATE.to_string(),
                Some(rel) => {
                    let full = if rel.is_relative() {
                        base_dir.join(rel)
                    } else {
                        rel.clone()
                    };
                    std::fs::read_to_string(&full).map_err(|source| ConfigError::Io {
                        path: full.display().to_string(),
                        source,
                    })?
                }
            };
            if !template_text.contains("{trajectory}") || !template_text.contains("{ground_truth}")
            {
                return Err(invalid(
                    "field `reward.judge.template_path`: template must contain {trajectory} and {ground_truth}"
                        .into(),
                ));
            }
            Some(JudgeConfig {
                endpoint: section.endpoint,
                model: section.model,
                template: template_text,
                timeout_ms: section.timeout_ms,
            })
        }
        _ => None,
    };

    let verify = match file.reward.verify {
        Some(section) if section.enabled => {
            if section.tool.is_empty() {
                return Err(invalid("field `reward.verify.tool` must be set".into()));
            }
            if let Comparator::NumericTolerance { epsilon } = section.comparator {
                if epsilon < 0.0 {
                    return Err(invalid(
                        "field `reward.verify.comparator.epsilon` must be >= 0".into(),
                    ));
                }
            }
            Some(VerifyPolicy {
                tool: section.tool,
                comparator: section.comparator,
            })
        }
        _ => None,
    };

    if file.reward.rules.is_empty() && judge.is_none() && verify.is_none() {
        return Err(invalid(
            "field `reward`: at least one scoring component (rules, judge, verify) must be enabled"
                .into(),
        ));
    }

    Ok(ResolvedConfig {
        grammar,
        template,
        generation: file.generation,
        rollout: file.rollout,
        reward: RewardConfig {
            rules: file.reward.rules,
            judge,
            verify,
            combine: file.reward.combine,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("config.json");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    fn minimal() -> String {
        serde_json::json!({
            "schema_version": 1,
            "reward": {
                "rules": [{"name": "completion", "weight": 1.0, "dimension": "task_completion"}]
            }
        })
        .to_string()
    }

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load_config(&write_config(dir.path(), &minimal())).unwrap();
        assert_eq!(cfg.grammar.id, "qwen3");
        assert_eq!(cfg.template.id, "qwen3");
        assert_eq!(cfg.rollout.max_turns, 4);
        assert!(cfg.reward.judge.is_none());
    }

    #[test]
    fn parse_errors_name_file_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let body = serde_json::json!({
            "schema_version": 1,
            "reward": {"rules": [{"name": "x", "weight": "not a number", "dimension": "efficiency"}]}
        })
        .to_string();
        let err = load_config(&write_config(dir.path(), &body)).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("config.json"), "{message}");
        assert!(message.contains("reward.rules[0].weight"), "{message}");
    }

    #[test]
    fn reward_must_have_a_component() {
        let dir = tempfile::tempdir().unwrap();
        let body = serde_json::json!({"schema_version": 1}).to_string();
        let err = load_config(&write_config(dir.path(), &body)).unwrap_err();
        assert!(err.to_string().contains("at least one scoring component"));
    }

    #[test]
    fn judge_template_loads_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("criterion.txt"),
            "Judge this: {trajectory} against {ground_truth}",
        )
        .unwrap();
        let body = serde_json::json!({
            "schema_version": 1,
            "reward": {
                "judge": {"enabled": true, "endpoint": "http://localhost:9/v1/chat/completions",
                          "template_path": "criterion.txt"}
            }
        })
        .to_string();
        let cfg = load_config(&write_config(dir.path(), &body)).unwrap();
        assert!(cfg.reward.judge.unwrap().template.starts_with("Judge this:"));
    }

    #[test]
    fn inline_template_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let body = serde_json::json!({
            "schema_version": 1,
            "template": {
                "id": "custom",
                "system_prompt": "",
                "system_open": "",
                "user_open": "U:", "assistant_open": "A:", "block_close": "\n",
                "tool_response_open": "[obs]", "tool_response_close": "[/obs]"
            },
            "reward": {
                "rules": [{"name": "completion", "weight": 1.0, "dimension": "task_completion"}]
            }
        })
        .to_string();
        let cfg = load_config(&write_config(dir.path(), &body)).unwrap();
        assert_eq!(cfg.template.id, "custom");
        assert_eq!(cfg.template.user_open, "U:");
    }
}
