//! Interleaved token-span representation of an episode.
//!
//! A [`Trajectory`] records a multi-turn interaction as an ordered list of
//! spans: the initial prompt, each model generation, and each tool
//! observation. The per-token [`LossMask`] derived from it marks exactly the
//! model-generated positions, so downstream trainers can exclude prompt and
//! observation tokens from the loss.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Who produced a span of the trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    /// The initial task input. Always the first span.
    Prompt,
    /// Text sampled from the generator. The only spans that carry loss.
    ModelText,
    /// A tool result (or error notice) fed back into the context.
    Observation,
}

/// One contiguous stretch of text with a single producer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub kind: SegmentKind,
    pub text: String,
    /// Token count of `text` under the engine's tokenization rule.
    pub token_count: usize,
    /// Interaction turn this span belongs to; nondecreasing across the list.
    #[serde(rename = "turn")]
    pub turn_index: usize,
}

/// Why an episode ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalReason {
    AnswerProduced,
    MaxTurnsReached,
    ToolFailureAbort,
    ParseFailureAbort,
}

/// A complete or in-progress episode.
///
/// `terminal` is `None` while the episode is still being driven; every
/// serialized episode record carries a concrete reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub task_id: String,
    pub spans: Vec<Span>,
    pub terminal: Option<TerminalReason>,
    pub final_answer: Option<String>,
}

/// Counts tokens for span bookkeeping.
///
/// The engine deliberately does not ship a subword vocabulary: every
/// invariant here only needs a stable, re-checkable count, and downstream
/// trainers re-tokenize with the model's own tokenizer anyway.
pub trait Tokenizer: Send + Sync {
    fn token_count(&self, text: &str) -> usize;
}

/// Default rule: whitespace-delimited units.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn token_count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

/// Per-token binary flags over the flattened trajectory: 1 on `ModelText`
/// positions, 0 on `Prompt` and `Observation` positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossMask {
    pub flags: Vec<bool>,
}

impl LossMask {
    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Number of positions that participate in the loss.
    pub fn ones(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("span order violation: {0}")]
    OrderViolation(String),
    #[error("terminal reason answer_produced requires a final answer")]
    MissingFinalAnswer,
}

impl Trajectory {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            spans: Vec::new(),
            terminal: None,
            final_answer: None,
        }
    }

    /// Appends one span, computing its token count under `tokenizer`.
    ///
    /// Ordering rules: the first span must be a `Prompt` and no later span
    /// may be one; turns never decrease; a `ModelText` opens a new turn once
    /// the previous turn has produced output; an `Observation` may only
    /// follow a `ModelText` (or sibling `Observation`) of the same turn.
    pub fn append_span(
        &mut self,
        kind: SegmentKind,
        text: impl Into<String>,
        turn: usize,
        tokenizer: &dyn Tokenizer,
    ) -> Result<(), TrajectoryError> {
        let text = text.into();
        match (self.spans.last(), kind) {
            (None, SegmentKind::Prompt) => {}
            (None, other) => {
                return Err(TrajectoryError::OrderViolation(format!(
                    "first span must be prompt, got {other:?}"
                )));
            }
            (Some(_), SegmentKind::Prompt) => {
                return Err(TrajectoryError::OrderViolation(
                    "prompt span only allowed at the start".into(),
                ));
            }
            (Some(last), SegmentKind::ModelText) => {
                let min_turn = match last.kind {
                    SegmentKind::Prompt => last.turn_index,
                    // one model span per turn: generation opens a new turn
                    SegmentKind::ModelText | SegmentKind::Observation => last.turn_index + 1,
                };
                if turn < min_turn {
                    return Err(TrajectoryError::OrderViolation(format!(
                        "model_text turn {turn} precedes expected turn {min_turn}"
                    )));
                }
            }
            (Some(last), SegmentKind::Observation) => {
                let anchored = matches!(
                    last.kind,
                    SegmentKind::ModelText | SegmentKind::Observation
                ) && last.turn_index == turn;
                if !anchored {
                    return Err(TrajectoryError::OrderViolation(format!(
                        "observation at turn {turn} has no model_text in the same turn"
                    )));
                }
            }
        }

        let token_count = tokenizer.token_count(&text);
        self.spans.push(Span {
            kind,
            text,
            token_count,
            turn_index: turn,
        });
        Ok(())
    }

    /// Marks the episode finished.
    pub fn finish(
        &mut self,
        reason: TerminalReason,
        final_answer: Option<String>,
    ) -> Result<(), TrajectoryError> {
        if reason == TerminalReason::AnswerProduced && final_answer.is_none() {
            return Err(TrajectoryError::MissingFinalAnswer);
        }
        self.terminal = Some(reason);
        self.final_answer = final_answer;
        Ok(())
    }

    /// Derives the per-token loss mask: 1 exactly on `ModelText` positions.
    pub fn loss_mask(&self) -> LossMask {
        let total: usize = self.spans.iter().map(|s| s.token_count).sum();
        let mut flags = Vec::with_capacity(total);
        for span in &self.spans {
            let on = span.kind == SegmentKind::ModelText;
            flags.extend(std::iter::repeat_n(on, span.token_count));
        }
        LossMask { flags }
    }

    /// Total token count across all spans.
    pub fn total_tokens(&self) -> usize {
        self.spans.iter().map(|s| s.token_count).sum()
    }

    /// Turn index of the last span, if any.
    pub fn last_turn(&self) -> Option<usize> {
        self.spans.last().map(|s| s.turn_index)
    }
}
