//! Multi-turn tool-call rollout engine for LLM-agent reinforcement learning.
//!
//! The engine drives a generate–parse–invoke–update loop against pluggable
//! generators and tools, records episodes as interleaved token spans with
//! per-token loss masks, and scores them with rule, judge, and verification
//! rewards plus group-relative advantages.
//!
//! Module map:
//! - [`trajectory`]: episode state as token spans; loss masks.
//! - [`template`]: chat-template rendering of trajectories into contexts.
//! - [`registry`]: MCP-style tool config loading and argument validation.
//! - [`parser`]: call-block extraction and observation formatting.
//! - [`invoker`]: concurrent tool execution with per-call timeouts.
//! - [`builtins`]: calculator, corpus search, echo, sleep.
//! - [`generator`]: scripted and remote chat-completion generators.
//! - [`rollout`]: the episode loop, groups, and bounded-parallel batches.
//! - [`reward`]: rule/judge/verify scoring and group advantages.

pub mod builtins;
pub mod generator;
pub mod http;
pub mod invoker;
pub mod parser;
pub mod registry;
pub mod reward;
pub mod rollout;
pub mod template;
pub mod trajectory;

pub use generator::{GenParams, GenRequest, Generator, GeneratorError, RemoteGenerator, ScriptedGenerator};
pub use invoker::{InvocationResult, InvocationStatus, Invoker};
pub use parser::{CallGrammar, ParseOutcome, ToolCall};
pub use registry::{load_registry, validate_arguments, ParamSpec, ParamType, Registry, ToolKind, ToolSpec};
pub use reward::{
    Comparator, RewardConfig, RewardReport, Rule, RuleDimension, RuleSet, Scorer, VerifySpec,
};
pub use rollout::{
    BatchOutcome, EpisodeGroup, GroupFailure, RolloutConfig, RolloutEngine, TaskRecord,
};
pub use template::{render_context, ChatTemplate, TemplateError};
pub use trajectory::{
    LossMask, SegmentKind, Span, TerminalReason, Tokenizer, Trajectory, WhitespaceTokenizer,
};
