//! The causal report: nearest passing neighbours, closer failing ones and
//! trace differences, rendered as text or versioned JSON.
//!
//! # JSON schema `causal-report/1`
//!
//! ```text
//! {
//!   "schema": "causal-report/1",
//!   "engine_version": string,
//!   "stop_reason": "target-reached" | "candidates-exhausted" | "budget-expired",
//!   "executed_count": uint,
//!   "original": ExecutionRecord,
//!   "nearest_passing": [ { "record": ExecutionRecord,
//!                          "trace_diff": TraceDiff | null,
//!                          "highlights": [ArgHighlight] } ],
//!   "closer_failing": [ExecutionRecord],
//!   "config": SearchConfig,
//!   "timing": { "executions": uint, "original_ms": uint, "candidates_ms": uint }
//! }
//! ExecutionRecord = { "spec": {"test_id", "args", "oracle_id"},
//!                     "outcome": {"kind": "pass"|"fail"|"crash"|"timeout", "message"?},
//!                     "trace": {"events": [CallEvent], "dropped_prefix"?} | null,
//!                     "distance_to_original": real, "wall_time_ms": uint,
//!                     "provenance": {"source": "original"|"fuzzed"|"suite-reuse", ...},
//!                     "generation": uint, "diagnostics"?: [string] }
//! ArgHighlight  = { "arg_index": uint, "change": {"kind": "text", "edits": [CharEdit]}
//!                                          | {"kind": "value", "failing": v, "passing": v} }
//! CharEdit      = {"op": "substitute", "pos", "from", "to"} | {"op": "insert", "pos", "ch"}
//!               | {"op": "delete", "pos", "ch"}
//! TraceDiff     = { "hunks": [ {"kind": "common", "len"} | {"kind": "only-in-failing", "events"}
//!                            | {"kind": "only-in-passing", "events"}
//!                            | {"kind": "payload", "failing", "passing", "fields"} ],
//!                   "first_divergence_index": uint | null }
//! ```

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::executor::{SearchResult, StopReason};
use crate::model::{ExecutionRecord, InputValue, SearchConfig};
use crate::similarity::{apply_edits, edit_script, CharEdit};
use crate::trace::{diff_traces, first_divergence, Hunk, TraceDiff};

pub const REPORT_SCHEMA: &str = "causal-report/1";
pub const NO_PASSING_LINE: &str = "No passing perturbation found within budget.";
/// Closer-failing entries listed by the text renderer unless verbose.
const CLOSER_FAILING_PREVIEW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArgChange {
    Text { edits: Vec<CharEdit> },
    Value { failing: InputValue, passing: InputValue },
}

/// How one argument of a passing neighbour differs from the original.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArgHighlight {
    pub arg_index: usize,
    pub change: ArgChange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassingEntry {
    pub record: ExecutionRecord,
    pub trace_diff: Option<TraceDiff>,
    pub highlights: Vec<ArgHighlight>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub executions: usize,
    pub original_ms: u64,
    pub candidates_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalReport {
    pub schema: String,
    pub engine_version: String,
    pub stop_reason: StopReason,
    pub executed_count: usize,
    pub original: ExecutionRecord,
    pub nearest_passing: Vec<PassingEntry>,
    pub closer_failing: Vec<ExecutionRecord>,
    pub config: SearchConfig,
    pub timing: TimingSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
}

/// Per-argument differences; text arguments get an optimal edit script.
pub fn highlight_args(failing: &[InputValue], passing: &[InputValue]) -> Vec<ArgHighlight> {
    failing
        .iter()
        .zip(passing)
        .enumerate()
        .filter(|(_, (f, p))| f != p)
        .map(|(arg_index, (f, p))| {
            let change = match (f, p) {
                (InputValue::Text(a), InputValue::Text(b)) => ArgChange::Text { edits: edit_script(a, b) },
                _ => ArgChange::Value { failing: f.clone(), passing: p.clone() },
            };
            ArgHighlight { arg_index, change }
        })
        .collect()
}

/// Applies highlights to the failing arguments, yielding the passing ones.
pub fn apply_highlights(failing: &[InputValue], highlights: &[ArgHighlight]) -> Vec<InputValue> {
    let mut out = failing.to_vec();
    for h in highlights {
        out[h.arg_index] = match (&failing[h.arg_index], &h.change) {
            (InputValue::Text(s), ArgChange::Text { edits }) => InputValue::Text(apply_edits(s, edits)),
            (_, ArgChange::Value { passing, .. }) => passing.clone(),
            (other, ArgChange::Text { .. }) => other.clone(),
        };
    }
    out
}

pub fn build_report(result: &SearchResult, config: &SearchConfig) -> CausalReport {
    let original = &result.original;
    let nearest_passing = result
        .passing
        .iter()
        .take(config.report_k)
        .map(|record| {
            let trace_diff = match (&original.trace, &record.trace) {
                (Some(f), Some(p)) => Some(diff_traces(f, p)),
                _ => None,
            };
            PassingEntry {
                highlights: highlight_args(&original.spec.args, &record.spec.args),
                record: record.clone(),
                trace_diff,
            }
        })
        .collect();
    CausalReport {
        schema: REPORT_SCHEMA.to_owned(),
        engine_version: env!("CARGO_PKG_VERSION").to_owned(),
        stop_reason: result.stop_reason,
        executed_count: result.executed_count,
        original: original.clone(),
        nearest_passing,
        closer_failing: result.closer_failing.clone(),
        config: config.clone(),
        timing: TimingSummary {
            executions: result.executed_count + 1,
            original_ms: original.wall_time_ms,
            candidates_ms: result.total_execution_ms,
        },
    }
}

/// Renders a text string with its edits marked: `0[x]fade`, deletions as `fad{e}`.
pub fn mark_text(failing: &str, edits: &[CharEdit]) -> String {
    let chars: Vec<char> = failing.chars().collect();
    // (character, marked) pairs of the rendered output.
    let mut pieces: Vec<(String, bool)> = Vec::new();
    let mut k = 0;
    for (pos, &ch) in chars.iter().enumerate() {
        while let Some(CharEdit::Insert { pos: p, ch: c }) = edits.get(k) {
            if *p != pos {
                break;
            }
            pieces.push((c.to_string(), true));
            k += 1;
        }
        match edits.get(k) {
            Some(CharEdit::Substitute { pos: p, to, .. }) if *p == pos => {
                pieces.push((to.to_string(), true));
                k += 1;
            }
            Some(CharEdit::Delete { pos: p, ch: c }) if *p == pos => {
                pieces.push((format!("{{{c}}}"), false));
                k += 1;
            }
            _ => pieces.push((ch.to_string(), false)),
        }
    }
    for edit in &edits[k..] {
        if let CharEdit::Insert { ch, .. } = edit {
            pieces.push((ch.to_string(), true));
        }
    }
    let mut out = String::new();
    let mut open = false;
    for (text, marked) in pieces {
        if marked && !open {
            out.push('[');
            open = true;
        } else if !marked && open {
            out.push(']');
            open = false;
        }
        out.push_str(&text);
    }
    if open {
        out.push(']');
    }
    out
}

fn args_line(args: &[InputValue]) -> String {
    args.iter().map(InputValue::canonical_json).collect::<Vec<_>>().join(", ")
}

fn marked_args_line(entry: &PassingEntry, original: &[InputValue]) -> String {
    let parts: Vec<String> = original
        .iter()
        .enumerate()
        .map(|(i, arg)| match entry.highlights.iter().find(|h| h.arg_index == i) {
            Some(ArgHighlight { change: ArgChange::Text { edits }, .. }) => {
                let InputValue::Text(s) = arg else { unreachable!("text edits on a text argument") };
                format!("\"{}\"", mark_text(s, edits))
            }
            Some(ArgHighlight { change: ArgChange::Value { passing, .. }, .. }) => format!("[{passing}]"),
            None => arg.canonical_json(),
        })
        .collect();
    parts.join(", ")
}

fn outcome_suffix(record: &ExecutionRecord) -> String {
    match record.outcome.message() {
        Some(m) if !m.is_empty() => format!(" ({}: {m})", record.outcome.label()),
        _ => format!(" ({})", record.outcome.label()),
    }
}

fn describe_hunk(hunk: &Hunk) -> String {
    let names = |events: &[crate::trace::CallEvent]| {
        events.iter().map(|e| e.method.as_str()).collect::<Vec<_>>().join(", ")
    };
    match hunk {
        Hunk::Common { len } => format!("common: {len} event(s)"),
        Hunk::OnlyInFailing { events } => format!("only in failing: {}", names(events)),
        Hunk::OnlyInPassing { events } => format!("only in passing: {}", names(events)),
        Hunk::Payload { failing, fields, .. } => {
            let detail: Vec<String> = fields
                .iter()
                .map(|f| {
                    format!(
                        "{}: {} -> {}",
                        f.field,
                        f.failing.as_deref().unwrap_or("-"),
                        f.passing.as_deref().unwrap_or("-")
                    )
                })
                .collect();
            format!("payload in {}: {}", failing.method, detail.join("; "))
        }
    }
}

fn render_text(report: &CausalReport, verbose: bool) -> String {
    let mut out = String::new();
    let o = &report.original;
    let _ = writeln!(out, "Causal test report ({REPORT_SCHEMA}, engine {})", report.engine_version);
    let _ = writeln!(
        out,
        "Stop reason: {}; executed {} candidate(s)",
        report.stop_reason.label(),
        report.executed_count
    );
    let _ = writeln!(out, "Oracle: {}", o.spec.oracle_id);
    let _ = writeln!(out);
    let _ = writeln!(out, "Failing: {}{}", args_line(&o.spec.args), outcome_suffix(o));

    if report.nearest_passing.is_empty() {
        let _ = writeln!(out, "{NO_PASSING_LINE}");
    }
    for entry in &report.nearest_passing {
        let r = &entry.record;
        let _ = writeln!(
            out,
            "Passing: {}  diff: {}  distance {:.4}",
            args_line(&r.spec.args),
            marked_args_line(entry, &o.spec.args),
            r.distance_to_original
        );
    }

    if !report.closer_failing.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Closer failing ({}):", report.closer_failing.len());
        let shown = if verbose { report.closer_failing.len() } else { CLOSER_FAILING_PREVIEW };
        for r in report.closer_failing.iter().take(shown) {
            let _ = writeln!(
                out,
                "  {:<7} {}  distance {:.4}",
                r.outcome.label(),
                args_line(&r.spec.args),
                r.distance_to_original
            );
        }
        if report.closer_failing.len() > shown {
            let _ = writeln!(out, "  ... {} more (use --verbose)", report.closer_failing.len() - shown);
        }
    }

    if !report.nearest_passing.is_empty() {
        let _ = writeln!(out);
        let _ = writeln!(out, "Trace differences:");
    }
    for (i, entry) in report.nearest_passing.iter().enumerate() {
        let label = args_line(&entry.record.spec.args);
        let Some(diff) = &entry.trace_diff else {
            let _ = writeln!(out, "  #{} {label}: no trace available", i + 1);
            continue;
        };
        let s = diff.summary();
        match first_divergence(diff) {
            None => {
                let _ = writeln!(out, "  #{} {label}: traces identical ({} events)", i + 1, s.common_events);
            }
            Some((index, hunk)) => {
                let _ = writeln!(
                    out,
                    "  #{} {label}: first divergence at event {index} ({}); {} common, {} payload, {} only-in-failing, {} only-in-passing",
                    i + 1,
                    describe_hunk(hunk),
                    s.common_events,
                    s.payload_hunks,
                    s.only_in_failing,
                    s.only_in_passing
                );
            }
        }
        if verbose {
            for hunk in &diff.hunks {
                let _ = writeln!(out, "      {}", describe_hunk(hunk));
            }
        }
    }
    out
}

/// Byte-deterministic rendering.
pub fn render(report: &CausalReport, format: Format, verbose: bool) -> Vec<u8> {
    match format {
        Format::Text => render_text(report, verbose).into_bytes(),
        Format::Json => {
            let mut bytes = serde_json::to_vec_pretty(report).expect("reports serialize");
            bytes.push(b'\n');
            bytes
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Outcome, Provenance, TestSpec};
    use crate::trace::{CallEvent, Trace};

    fn record(s: &str, outcome: Outcome, distance: f64, trace: Option<Trace>) -> ExecutionRecord {
        ExecutionRecord {
            spec: TestSpec::new("t", "hex-parse", vec![InputValue::text(s)]),
            outcome,
            trace,
            distance_to_original: distance,
            wall_time_ms: 1,
            provenance: Provenance::Original,
            generation: 0,
            diagnostics: vec![],
        }
    }

    fn fail() -> Outcome {
        Outcome::Fail { message: "not a valid number".into() }
    }

    fn result(passing: Vec<ExecutionRecord>, closer: Vec<ExecutionRecord>) -> SearchResult {
        let t = Trace::new(vec![CallEvent::new("createNumber", "test", 0), CallEvent::new("parseDecimal", "createInteger", 1)]);
        SearchResult {
            original: record("0Xfade", fail(), 0.0, Some(t)),
            executed_count: passing.len() + closer.len(),
            passing,
            closer_failing: closer,
            stop_reason: StopReason::TargetReached,
            dispatch_log: vec![],
            total_execution_ms: 7,
        }
    }

    fn passing_trace() -> Trace {
        Trace::new(vec![CallEvent::new("createNumber", "test", 0), CallEvent::new("decodeHex", "createInteger", 1)])
    }

    #[test]
    fn hex_highlight_at_index_one() {
        let r = result(vec![record("0xfade", Outcome::Pass, 1.0 / 6.0, Some(passing_trace()))], vec![]);
        let report = build_report(&r, &SearchConfig::default());
        let top = &report.nearest_passing[0];
        assert_eq!(
            top.highlights,
            vec![ArgHighlight {
                arg_index: 0,
                change: ArgChange::Text { edits: vec![CharEdit::Substitute { pos: 1, from: 'X', to: 'x' }] }
            }]
        );
        assert_eq!(apply_highlights(&report.original.spec.args, &top.highlights), top.record.spec.args);
        let diff = top.trace_diff.as_ref().unwrap();
        assert_eq!(diff.first_divergence_index, Some(1));

        let text = String::from_utf8(render(&report, Format::Text, false)).unwrap();
        assert!(text.contains("Failing: \"0Xfade\""), "{text}");
        assert!(text.contains("Passing: \"0xfade\"  diff: \"0[x]fade\""), "{text}");
    }

    #[test]
    fn empty_passing_is_explicit() {
        let mut r = result(vec![], vec![]);
        r.stop_reason = StopReason::CandidatesExhausted;
        let report = build_report(&r, &SearchConfig::default());
        assert!(report.nearest_passing.is_empty());
        let text = String::from_utf8(render(&report, Format::Text, false)).unwrap();
        assert!(text.lines().any(|l| l == NO_PASSING_LINE), "{text}");
        assert!(text.contains("candidates-exhausted"));
    }

    #[test]
    fn truncates_to_report_k() {
        let passing: Vec<_> = (0..5).map(|i| record(&format!("0xfad{i}"), Outcome::Pass, 0.2 + i as f64 / 100.0, None)).collect();
        let config = SearchConfig { target_passing: 5, report_k: 3, ..Default::default() };
        let report = build_report(&result(passing.clone(), vec![]), &config);
        assert_eq!(report.nearest_passing.len(), 3);
        let got: Vec<_> = report.nearest_passing.iter().map(|e| e.record.clone()).collect();
        assert_eq!(got, passing[..3].to_vec());
        assert!(report.nearest_passing.iter().all(|e| e.trace_diff.is_none()));
    }

    #[test]
    fn json_round_trip_and_determinism() {
        let r = result(
            vec![record("0xfade", Outcome::Pass, 1.0 / 6.0, Some(passing_trace()))],
            vec![record("0Xfad", Outcome::Crash { message: "boom".into() }, 0.1, None)],
        );
        let report = build_report(&r, &SearchConfig::default());
        let bytes = render(&report, Format::Json, false);
        let back: CausalReport = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(back, report);
        assert_eq!(render(&back, Format::Json, false), bytes);
        let v: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(v["schema"], REPORT_SCHEMA);
        assert_eq!(render(&report, Format::Text, true), render(&back, Format::Text, true));
    }

    #[test]
    fn closer_failing_is_labelled_and_previewed() {
        let closer: Vec<_> = (0..12).map(|i| record(&format!("x{i}"), Outcome::Timeout, 0.01, None)).collect();
        let r = result(vec![record("0xfade", Outcome::Pass, 1.0 / 6.0, None)], closer);
        let report = build_report(&r, &SearchConfig::default());
        let text = String::from_utf8(render(&report, Format::Text, false)).unwrap();
        assert!(text.contains("  timeout "), "{text}");
        assert!(text.contains("... 2 more"), "{text}");
        let verbose = String::from_utf8(render(&report, Format::Text, true)).unwrap();
        assert!(!verbose.contains("more (use --verbose)"));
    }

    #[test]
    fn mark_text_variants() {
        let mark = |a: &str, b: &str| mark_text(a, &edit_script(a, b));
        assert_eq!(mark("0Xfade", "0xfade"), "0[x]fade");
        assert_eq!(mark("fade", "fad"), "fad{e}");
        assert_eq!(mark("0Xfade", "-0xfade"), "[-]0[x]fade");
        assert_eq!(mark("fad", "fade"), "fad[e]");
        assert_eq!(mark("abc", "abc"), "abc");
    }

    #[test]
    fn non_text_highlights_carry_both_values() {
        let h = highlight_args(&[InputValue::Integer(1), InputValue::text("a")], &[InputValue::Integer(2), InputValue::text("a")]);
        assert_eq!(h, vec![ArgHighlight { arg_index: 0, change: ArgChange::Value { failing: InputValue::Integer(1), passing: InputValue::Integer(2) } }]);
    }
}
