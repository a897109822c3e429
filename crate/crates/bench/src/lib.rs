//! Data builders shared by the benchmarks.

use toolforge_core::trajectory::{SegmentKind, Trajectory, WhitespaceTokenizer};

/// Builds a call-heavy trajectory with `turns` invocation rounds.
pub fn synthetic_trajectory(turns: usize) -> Trajectory {
    let tok = WhitespaceTokenizer;
    let mut traj = Trajectory::new("bench");
    traj.append_span(
        SegmentKind::Prompt,
        "benchmark prompt with a handful of tokens to mask",
        0,
        &tok,
    )
    .expect("prompt appends");
    for turn in 0..turns {
        traj.append_span(
            SegmentKind::ModelText,
            format!(
                "<tool_call>{{\"name\": \"search\", \"arguments\": {{\"query\": \"q{turn}\"}}}}</tool_call>"
            ),
            turn,
            &tok,
        )
        .expect("model span appends");
        traj.append_span(
            SegmentKind::Observation,
            format!("observation {turn} carrying a few dozen tokens of retrieved text to stretch the mask"),
            turn,
            &tok,
        )
        .expect("observation appends");
    }
    traj
}

/// A response containing `blocks` call blocks separated by filler prose.
pub fn synthetic_response(blocks: usize) -> String {
    let mut out = String::from("Let me look a few things up. ");
    for i in 0..blocks {
        out.push_str(&format!(
            "<tool_call>{{\"name\": \"search\", \"arguments\": {{\"query\": \"topic {i}\", \"k\": 3}}}}</tool_call> and also "
        ));
    }
    out.push_str("that should cover it.");
    out
}
