//! Batch rollout harness around `toolforge-core`: config loading, run
//! orchestration, mock services, and run summaries.

pub mod config;
pub mod mock;
pub mod pipeline;
pub mod records;
pub mod summarize;

pub use config::{load_config, ConfigError, ResolvedConfig};
pub use mock::{serve_mock, MockKind, MockServer};
pub use pipeline::{execute_run, GeneratorChoice, Overrides, RunError, RunOptions, RunReport};
pub use records::{load_tasks, EpisodeRecord, RunManifest};
pub use summarize::{summarize, RunSummary, SummarizeError};
