//! Per-step records of a generation and their line-delimited export.
//!
//! Each trace line is one JSON object:
//!
//! ```text
//! {"step":1,"members":[{"name":"openchat","top":"ste","confidence":0.419},
//!   {"name":"solar","top":"The","confidence":0.95}],
//!  "fused":[["The",0.6655],["ste",0.2145]],"chosen":"The","ensembled":true}
//! ```
//!
//! Surfaces are rendered as lossy UTF-8. Step wall time (`wall_ms`) is only
//! written on request so that repeated runs produce identical files.

use std::fmt::Write as _;
use std::time::Duration;

use serde::Serialize;

use crate::vocab::TokenSurface;

/// Top token of one member at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct MemberStep {
    pub member: String,
    pub top: TokenSurface,
    /// Maximum probability of the member's distribution.
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    /// Members that were stepped, in member order.
    pub members: Vec<MemberStep>,
    pub fused_top_k: Vec<(TokenSurface, f64)>,
    pub chosen: TokenSurface,
    pub chosen_column: usize,
    pub ensembled: bool,
    pub wall_time: Duration,
}

impl StepRecord {
    /// `ste (0.419) / The (0.950) / The`
    pub fn render(&self) -> String {
        let mut line = String::new();
        for m in &self.members {
            let _ = write!(line, "{} ({:.3}) / ", m.top.display(), m.confidence);
        }
        line.push_str(&self.chosen.display());
        line
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// A stop surface was selected; it is not part of the output text.
    Eos,
    /// `max_tokens` reached.
    Length,
    /// A member failed; the result is partial.
    Aborted,
}

#[derive(Clone, Debug)]
pub struct GenerationResult {
    /// Lossy UTF-8 view of `bytes`.
    pub text: String,
    /// Concatenated surfaces of the chosen non-stop tokens.
    pub bytes: Vec<u8>,
    pub trace: Vec<StepRecord>,
    pub stop: StopReason,
    /// Steps executed, including a final stop-token step.
    pub tokens_generated: usize,
    pub ensembled_fraction: f64,
    /// Step-loop wall time over `tokens_generated`.
    pub ms_per_token: f64,
    pub loop_time: Duration,
    /// Non-fatal findings, e.g. incremental re-tokenization diverging from
    /// whole-text tokenization.
    pub warnings: Vec<String>,
}

impl GenerationResult {
    pub(crate) fn assemble(
        bytes: Vec<u8>,
        trace: Vec<StepRecord>,
        stop: StopReason,
        loop_time: Duration,
        warnings: Vec<String>,
    ) -> Self {
        let tokens = trace.len();
        let ensembled = trace.iter().filter(|r| r.ensembled).count();
        let (fraction, ms) = if tokens == 0 {
            (0.0, 0.0)
        } else {
            (
                ensembled as f64 / tokens as f64,
                loop_time.as_secs_f64() * 1000.0 / tokens as f64,
            )
        };
        GenerationResult {
            text: String::from_utf8_lossy(&bytes).into_owned(),
            bytes,
            trace,
            stop,
            tokens_generated: tokens,
            ensembled_fraction: fraction,
            ms_per_token: ms,
            loop_time,
            warnings,
        }
    }

    pub fn ensembled_steps(&self) -> usize {
        self.trace.iter().filter(|r| r.ensembled).count()
    }

    /// One JSON object per step, newline-terminated.
    pub fn trace_jsonl(&self, with_timing: bool) -> String {
        trace_jsonl(&self.trace, with_timing)
    }

    /// Human-readable table, one step per line.
    pub fn render_steps(&self) -> String {
        self.trace
            .iter()
            .map(|r| format!("{:>4}  {}\n", r.step, r.render()))
            .collect()
    }
}

#[derive(Serialize)]
struct MemberLine<'a> {
    name: &'a str,
    top: String,
    confidence: f64,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    step: usize,
    members: Vec<MemberLine<'a>>,
    fused: Vec<(String, f64)>,
    chosen: String,
    ensembled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms: Option<f64>,
}

pub fn trace_jsonl(trace: &[StepRecord], with_timing: bool) -> String {
    let mut out = String::new();
    for r in trace {
        let line = TraceLine {
            step: r.step,
            members: r
                .members
                .iter()
                .map(|m| MemberLine {
                    name: &m.member,
                    top: m.top.display(),
                    confidence: m.confidence,
                })
                .collect(),
            fused: r.fused_top_k.iter().map(|(s, p)| (s.display(), *p)).collect(),
            chosen: r.chosen.display(),
            ensembled: r.ensembled,
            wall_ms: with_timing.then_some(r.wall_time.as_secs_f64() * 1000.0),
        };
        out.push_str(&serde_json::to_string(&line).expect("trace lines serialize"));
        out.push('\n');
    }
    out
}
