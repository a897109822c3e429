//! MCP-style tool registry: load, validate, and resolve tool specs.
//!
//! Tools are declared in a JSON config document (see `tools.json` under the
//! CLI fixtures for a worked example):
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "tools": [
//!     {
//!       "name": "search",
//!       "kind": "program",
//!       "endpoint": "builtin:corpus_search?path=corpus.tsv",
//!       "timeout_ms": 2000,
//!       "params": [
//!         {"name": "query", "type": "string", "required": true},
//!         {"name": "k", "type": "number", "default": 3}
//!       ]
//!     }
//!   ]
//! }
//! ```
//!
//! Endpoints are either HTTP URLs, `builtin:<name>` identifiers, or — for
//! `agent` tools — a comma-separated list of member tool names executed as a
//! fixed pipeline. Relative corpus paths are resolved against the config
//! file's directory at load time.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::builtins;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Number,
    Boolean,
    Array,
}

impl ParamType {
    fn matches(&self, value: &Value) -> bool {
        matches!(
            (self, value),
            (ParamType::String, Value::String(_))
                | (ParamType::Number, Value::Number(_))
                | (ParamType::Boolean, Value::Bool(_))
                | (ParamType::Array, Value::Array(_))
        )
    }

    fn name(&self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
            ParamType::Array => "array",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub value_type: ParamType,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
}

/// The three tool forms: plain programs, model-backed services, and agents
/// composed from other registry entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    Program,
    Model,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub kind: ToolKind,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    pub endpoint: String,
    pub timeout_ms: u64,
    #[serde(default)]
    pub description: String,
    /// Extra attempts on timeout or transport failure. Zero by default: a
    /// failed call becomes an error observation the policy can react to.
    #[serde(default)]
    pub retries: u32,
}

impl ToolSpec {
    /// Member tool names for `agent` endpoints.
    pub fn agent_members(&self) -> Vec<&str> {
        self.endpoint
            .split(',')
            .map(str::trim)
            .filter(|m| !m.is_empty())
            .collect()
    }
}

/// Immutable name → spec map, shared read-only across episode workers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Registry {
    tools: BTreeMap<String, ToolSpec>,
}

#[derive(Debug, Deserialize, Serialize)]
struct ConfigDoc {
    schema_version: u32,
    tools: Vec<ToolSpec>,
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read tool config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed tool config {path}: {message}")]
    ConfigParse { path: String, message: String },
    #[error("unsupported tool config schema_version {found} (expected {SCHEMA_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("duplicate tool name '{0}'")]
    DuplicateTool(String),
    #[error("invalid tool spec '{tool}': {reason}")]
    InvalidSpec { tool: String, reason: String },
}

/// Argument validation failures, surfaced per call as validation errors.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArgError {
    #[error("missing required parameter '{0}'")]
    MissingParam(String),
    #[error("parameter '{param}' expected {expected}, got {got}")]
    TypeMismatch {
        param: String,
        expected: &'static str,
        got: &'static str,
    },
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
}

fn json_type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Loads and validates a tool config file.
pub fn load_registry(path: impl AsRef<Path>) -> Result<Registry, RegistryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Registry::from_json_str(&text, path.parent()).map_err(|err| match err {
        RegistryError::ConfigParse { message, .. } => RegistryError::ConfigParse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

impl Registry {
    /// Parses a config document. Relative corpus paths in builtin endpoints
    /// resolve against `base_dir` when given.
    pub fn from_json_str(text: &str, base_dir: Option<&Path>) -> Result<Self, RegistryError> {
        let doc: ConfigDoc =
            serde_json::from_str(text).map_err(|e| RegistryError::ConfigParse {
                path: "<inline>".into(),
                message: e.to_string(),
            })?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(RegistryError::UnsupportedVersion {
                found: doc.schema_version,
            });
        }

        let mut tools = BTreeMap::new();
        for mut spec in doc.tools {
            validate_spec(&spec)?;
            if let Some(dir) = base_dir {
                resolve_corpus_path(&mut spec, dir);
            }
            if tools.insert(spec.name.clone(), spec.clone()).is_some() {
                return Err(RegistryError::DuplicateTool(spec.name));
            }
        }

        let registry = Registry { tools };
        registry.validate_agents()?;
        Ok(registry)
    }

    /// Serializes to the same config document format `from_json_str` reads.
    pub fn to_json_string(&self) -> String {
        let doc = ConfigDoc {
            schema_version: SCHEMA_VERSION,
            tools: self.tools.values().cloned().collect(),
        };
        serde_json::to_string_pretty(&doc).expect("registry serialization cannot fail")
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name)
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.values()
    }

    /// Agent pipelines must reference registered tools and nest at most two
    /// agent levels; every non-leading member needs a parameter to receive
    /// the previous payload.
    fn validate_agents(&self) -> Result<(), RegistryError> {
        for spec in self.tools.values() {
            if spec.kind != ToolKind::Agent {
                continue;
            }
            self.check_agent(spec, 1)?;
        }
        Ok(())
    }

    fn check_agent(&self, spec: &ToolSpec, depth: u8) -> Result<(), RegistryError> {
        let members = spec.agent_members();
        if members.is_empty() {
            return Err(RegistryError::InvalidSpec {
                tool: spec.name.clone(),
                reason: "agent endpoint must list at least one member tool".into(),
            });
        }
        for (i, member) in members.iter().enumerate() {
            let mspec = self.tools.get(*member).ok_or_else(|| RegistryError::InvalidSpec {
                tool: spec.name.clone(),
                reason: format!("agent member '{member}' is not registered"),
            })?;
            if i > 0 && mspec.params.is_empty() {
                return Err(RegistryError::InvalidSpec {
                    tool: spec.name.clone(),
                    reason: format!(
                        "agent member '{member}' has no parameter to receive the previous payload"
                    ),
                });
            }
            if mspec.kind == ToolKind::Agent {
                if depth >= 2 {
                    return Err(RegistryError::InvalidSpec {
                        tool: spec.name.clone(),
                        reason: format!(
                            "agent member '{member}' exceeds the nesting limit of 2"
                        ),
                    });
                }
                self.check_agent(mspec, depth + 1)?;
            }
        }
        Ok(())
    }
}

fn validate_spec(spec: &ToolSpec) -> Result<(), RegistryError> {
    let invalid = |reason: String| RegistryError::InvalidSpec {
        tool: spec.name.clone(),
        reason,
    };
    if spec.name.is_empty() {
        return Err(invalid("tool name must be nonempty".into()));
    }
    if spec.endpoint.is_empty() {
        return Err(invalid("endpoint must be nonempty".into()));
    }
    if spec.timeout_ms == 0 {
        return Err(invalid("timeout_ms must be positive".into()));
    }

    let mut seen = std::collections::BTreeSet::new();
    for param in &spec.params {
        if !seen.insert(param.name.as_str()) {
            return Err(invalid(format!("duplicate parameter '{}'", param.name)));
        }
        if param.required && param.default.is_some() {
            return Err(invalid(format!(
                "required parameter '{}' must not carry a default",
                param.name
            )));
        }
        if let Some(default) = &param.default {
            if !param.value_type.matches(default) {
                return Err(invalid(format!(
                    "default for '{}' is not a {}",
                    param.name,
                    param.value_type.name()
                )));
            }
        }
    }

    match spec.kind {
        ToolKind::Program => {
            if let Some(builtin) = spec.endpoint.strip_prefix("builtin:") {
                let id = builtin.split('?').next().unwrap_or(builtin);
                if !builtins::is_known(id) {
                    return Err(invalid(format!("unknown builtin '{id}'")));
                }
            } else if !is_http_url(&spec.endpoint) {
                return Err(invalid(
                    "program endpoint must be an HTTP URL or builtin:<name>".into(),
                ));
            }
        }
        ToolKind::Model => {
            if !is_http_url(&spec.endpoint) {
                return Err(invalid("model endpoint must be an HTTP URL".into()));
            }
            let has_prompt = spec
                .params
                .iter()
                .any(|p| p.name == "prompt" && p.value_type == ParamType::String && p.required);
            if !has_prompt {
                return Err(invalid(
                    "model tools must declare a required string parameter 'prompt'".into(),
                ));
            }
        }
        ToolKind::Agent => {} // member resolution happens after the whole file is read
    }
    Ok(())
}

fn is_http_url(endpoint: &str) -> bool {
    endpoint.starts_with("http://") || endpoint.starts_with("https://")
}

/// Rewrites a relative `builtin:corpus_search?path=...` to an absolute path.
fn resolve_corpus_path(spec: &mut ToolSpec, base_dir: &Path) {
    let Some(rest) = spec.endpoint.strip_prefix("builtin:corpus_search?path=") else {
        return;
    };
    let p = Path::new(rest);
    if p.is_relative() {
        spec.endpoint = format!(
            "builtin:corpus_search?path={}",
            base_dir.join(p).display()
        );
    }
}

/// Checks `args` against `spec`: required params present, defaults filled,
/// types matched, unknown names rejected. Returns the normalized map.
pub fn validate_arguments(
    spec: &ToolSpec,
    args: &Map<String, Value>,
) -> Result<Map<String, Value>, ArgError> {
    for key in args.keys() {
        if !spec.params.iter().any(|p| &p.name == key) {
            return Err(ArgError::UnknownParam(key.clone()));
        }
    }

    let mut normalized = Map::new();
    for param in &spec.params {
        match args.get(&param.name) {
            Some(value) => {
                if !param.value_type.matches(value) {
                    return Err(ArgError::TypeMismatch {
                        param: param.name.clone(),
                        expected: param.value_type.name(),
                        got: json_type_name(value),
                    });
                }
                normalized.insert(param.name.clone(), value.clone());
            }
            None if param.required => return Err(ArgError::MissingParam(param.name.clone())),
            None => {
                if let Some(default) = &param.default {
                    normalized.insert(param.name.clone(), default.clone());
                }
            }
        }
    }
    Ok(normalized)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn search_config() -> String {
        json!({
            "schema_version": 1,
            "tools": [{
                "name": "search",
                "kind": "program",
                "endpoint": "http://localhost:9000/search",
                "timeout_ms": 1000,
                "params": [
                    {"name": "query", "type": "string", "required": true},
                    {"name": "limit", "type": "number", "default": 5}
                ]
            }]
        })
        .to_string()
    }

    #[test]
    fn minimal_valid_config_loads() {
        let registry = Registry::from_json_str(&search_config(), None).unwrap();
        assert_eq!(registry.len(), 1);
        assert!(registry.get("search").is_some());
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let doc = json!({
            "schema_version": 1,
            "tools": [
                {"name": "search", "kind": "program", "endpoint": "builtin:echo", "timeout_ms": 1,
                 "params": [{"name": "text", "type": "string", "required": true}]},
                {"name": "search", "kind": "program", "endpoint": "builtin:echo", "timeout_ms": 1,
                 "params": [{"name": "text", "type": "string", "required": true}]}
            ]
        })
        .to_string();
        let err = Registry::from_json_str(&doc, None).unwrap_err();
        assert!(matches!(err, RegistryError::DuplicateTool(name) if name == "search"));
    }

    #[test]
    fn required_param_with_default_is_invalid() {
        let doc = json!({
            "schema_version": 1,
            "tools": [{
                "name": "search", "kind": "program", "endpoint": "builtin:echo", "timeout_ms": 1,
                "params": [{"name": "query", "type": "string", "required": true, "default": "x"}]
            }]
        })
        .to_string();
        let err = Registry::from_json_str(&doc, None).unwrap_err();
        assert!(matches!(err, RegistryError::InvalidSpec { .. }));
    }

    #[test]
    fn unknown_schema_version_is_rejected() {
        let doc = json!({"schema_version": 99, "tools": []}).to_string();
        let err = Registry::from_json_str(&doc, None).unwrap_err();
        assert!(matches!(err, RegistryError::UnsupportedVersion { found: 99 }));
    }

    #[test]
    fn serialize_then_load_is_identity() {
        let registry = Registry::from_json_str(&search_config(), None).unwrap();
        let reloaded = Registry::from_json_str(&registry.to_json_string(), None).unwrap();
        assert_eq!(registry, reloaded);
    }

    #[test]
    fn agent_members_must_exist() {
        let doc = json!({
            "schema_version": 1,
            "tools": [{
                "name": "research", "kind": "agent", "endpoint": "search,missing", "timeout_ms": 1000
            }]
        })
        .to_string();
        let err = Registry::from_json_str(&doc, None).unwrap_err();
        assert!(matches!(err, RegistryError::InvalidSpec { .. }));
    }

    #[test]
    fn agent_nesting_is_capped_at_two() {
        let doc = json!({
            "schema_version": 1,
            "tools": [
                {"name": "calc", "kind": "program", "endpoint": "builtin:calculator", "timeout_ms": 1000,
                 "params": [{"name": "expr", "type": "string", "required": true}]},
                {"name": "inner", "kind": "agent", "endpoint": "calc", "timeout_ms": 1000},
                {"name": "middle", "kind": "agent", "endpoint": "inner", "timeout_ms": 1000},
                {"name": "outer", "kind": "agent", "endpoint": "middle", "timeout_ms": 1000}
            ]
        })
        .to_string();
        let err = Registry::from_json_str(&doc, None).unwrap_err();
        assert!(matches!(err, RegistryError::InvalidSpec { .. }));
    }

    fn search_spec() -> ToolSpec {
        let registry = Registry::from_json_str(&search_config(), None).unwrap();
        registry.get("search").unwrap().clone()
    }

    #[test]
    fn validate_passes_exact_args_through() {
        let args = json!({"query": "paris"}).as_object().unwrap().clone();
        let normalized = validate_arguments(&search_spec(), &args).unwrap();
        assert_eq!(normalized.get("query"), Some(&json!("paris")));
    }

    #[test]
    fn validate_reports_missing_required() {
        let err = validate_arguments(&search_spec(), &Map::new()).unwrap_err();
        assert_eq!(err, ArgError::MissingParam("query".into()));
    }

    #[test]
    fn validate_fills_defaults() {
        let args = json!({"query": "x"}).as_object().unwrap().clone();
        let normalized = validate_arguments(&search_spec(), &args).unwrap();
        assert_eq!(normalized.get("limit"), Some(&json!(5)));
    }

    #[test]
    fn validate_rejects_unknown_and_mistyped() {
        let unknown = json!({"query": "x", "frobnicate": 1})
            .as_object()
            .unwrap()
            .clone();
        assert_eq!(
            validate_arguments(&search_spec(), &unknown).unwrap_err(),
            ArgError::UnknownParam("frobnicate".into())
        );
        let mistyped = json!({"query": 42}).as_object().unwrap().clone();
        assert!(matches!(
            validate_arguments(&search_spec(), &mistyped).unwrap_err(),
            ArgError::TypeMismatch { .. }
        ));
    }

    #[test]
    fn validate_is_idempotent() {
        let args = json!({"query": "x"}).as_object().unwrap().clone();
        let once = validate_arguments(&search_spec(), &args).unwrap();
        let twice = validate_arguments(&search_spec(), &once).unwrap();
        assert_eq!(once, twice);
    }
}
