//! Chat-template rendering of trajectories into generator input.
//!
//! Each span renders as a self-contained chunk appended to the output, so
//! the rendering of a trajectory is always a byte prefix of the rendering of
//! any extension of it. Observations are wrapped in the template's
//! tool-response delimiters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{SegmentKind, Trajectory};

/// Delimiters and scaffolding used to turn a trajectory into a chat context.
///
/// Templates are data: the engine ships a Qwen3-style preset and accepts
/// custom ones from config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTemplate {
    pub id: String,
    /// Rendered once before the prompt; skipped when empty.
    #[serde(default)]
    pub system_prompt: String,
    #[serde(default)]
    pub system_open: String,
    pub user_open: String,
    pub assistant_open: String,
    /// Closes system, user, and assistant blocks alike.
    pub block_close: String,
    pub tool_response_open: String,
    pub tool_response_close: String,
}

impl ChatTemplate {
    /// Qwen3-style template: `<|im_start|>role ... <|im_end|>` blocks with
    /// observations wrapped in `<tool_response>` tags inside a user block.
    pub fn qwen3() -> Self {
        Self {
            id: "qwen3".into(),
            system_prompt: "You are a helpful assistant. You may call tools; \
                            tool results arrive wrapped in <tool_response> tags."
                .into(),
            system_open: "<|im_start|>system\n".into(),
            user_open: "<|im_start|>user\n".into(),
            assistant_open: "<|im_start|>assistant\n".into(),
            block_close: "<|im_end|>\n".into(),
            tool_response_open: "<tool_response>\n".into(),
            tool_response_close: "\n</tool_response>".into(),
        }
    }

    /// Resolves a preset by id.
    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "qwen3" => Some(Self::qwen3()),
            _ => None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template '{template}' lacks required delimiter '{delimiter}'")]
    MissingDelimiter {
        template: String,
        delimiter: &'static str,
    },
    #[error("template is missing placeholder '{0}'")]
    MissingPlaceholder(&'static str),
}

/// Renders the full conversation so far: prompt, model turns, and
/// observations inside the template's tool-response delimiters. The output
/// is exactly what the generator receives next.
pub fn render_context(traj: &Trajectory, template: &ChatTemplate) -> Result<String, TemplateError> {
    let mut out = String::new();
    for span in &traj.spans {
        match span.kind {
            SegmentKind::Prompt => {
                if !template.system_prompt.is_empty() {
                    out.push_str(&template.system_open);
                    out.push_str(&template.system_prompt);
                    out.push_str(&template.block_close);
                }
                out.push_str(&template.user_open);
                out.push_str(&span.text);
                out.push_str(&template.block_close);
            }
            SegmentKind::ModelText => {
                out.push_str(&template.assistant_open);
                out.push_str(&span.text);
                out.push_str(&template.block_close);
            }
            SegmentKind::Observation => {
                if template.tool_response_open.is_empty() {
                    return Err(TemplateError::MissingDelimiter {
                        template: template.id.clone(),
                        delimiter: "tool_response_open",
                    });
                }
                if template.tool_response_close.is_empty() {
                    return Err(TemplateError::MissingDelimiter {
                        template: template.id.clone(),
                        delimiter: "tool_response_close",
                    });
                }
                out.push_str(&template.user_open);
                out.push_str(&template.tool_response_open);
                out.push_str(&span.text);
                out.push_str(&template.tool_response_close);
                out.push_str(&template.block_close);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::WhitespaceTokenizer;

    const TOK: WhitespaceTokenizer = WhitespaceTokenizer;

    fn three_span_traj() -> Trajectory {
        let mut traj = Trajectory::new("t0");
        traj.append_span(SegmentKind::Prompt, "How tall is the Eiffel Tower?", 0, &TOK)
            .unwrap();
        traj.append_span(SegmentKind::ModelText, "let me search", 0, &TOK)
            .unwrap();
        traj.append_span(SegmentKind::Observation, "330 metres", 0, &TOK)
            .unwrap();
        traj
    }

    #[test]
    fn prompt_only_rendering() {
        let mut traj = Trajectory::new("t0");
        traj.append_span(SegmentKind::Prompt, "hello", 0, &TOK)
            .unwrap();
        let t = ChatTemplate::qwen3();
        let out = render_context(&traj, &t).unwrap();
        assert_eq!(
            out,
            format!(
                "{}{}{}{}hello{}",
                t.system_open, t.system_prompt, t.block_close, t.user_open, t.block_close
            )
        );
    }

    #[test]
    fn observation_is_wrapped_in_tool_response_delimiters() {
        let out = render_context(&three_span_traj(), &ChatTemplate::qwen3()).unwrap();
        assert!(out.contains("<tool_response>\n330 metres\n</tool_response>"));
        // golden rendering of the full fixture
        let t = ChatTemplate::qwen3();
        let expected = format!(
            "{sys_o}{sys}{close}{user_o}How tall is the Eiffel Tower?{close}\
             {asst_o}let me search{close}\
             {user_o}{tr_o}330 metres{tr_c}{close}",
            sys_o = t.system_open,
            sys = t.system_prompt,
            close = t.block_close,
            user_o = t.user_open,
            asst_o = t.assistant_open,
            tr_o = t.tool_response_open,
            tr_c = t.tool_response_close,
        );
        assert_eq!(out, expected);
    }

    #[test]
    fn rendering_is_prefix_of_extended_rendering() {
        let template = ChatTemplate::qwen3();
        let mut traj = three_span_traj();
        let before = render_context(&traj, &template).unwrap();
        traj.append_span(SegmentKind::ModelText, "the answer is 330 metres", 1, &TOK)
            .unwrap();
        let after = render_context(&traj, &template).unwrap();
        assert!(after.starts_with(&before));
    }

    #[test]
    fn missing_tool_delimiter_is_an_error() {
        let mut template = ChatTemplate::qwen3();
        template.tool_response_close = String::new();
        let err = render_context(&three_span_traj(), &template).unwrap_err();
        assert_eq!(
            err,
            TemplateError::MissingDelimiter {
                template: "qwen3".into(),
                delimiter: "tool_response_close",
            }
        );
        // a trajectory without observations does not need the delimiter
        let mut prompt_only = Trajectory::new("t1");
        prompt_only
            .append_span(SegmentKind::Prompt, "q", 0, &TOK)
            .unwrap();
        assert!(render_context(&prompt_only, &template).is_ok());
    }
}
