//! Execution traces and aligned differences between two runs.

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Maximum events kept per run; older events are dropped from the front.
pub const TRACE_EVENT_CAP: usize = 100_000;

/// One method call observed during a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallEvent {
    pub method: String,
    #[serde(default)]
    pub call_site: String,
    #[serde(default, rename = "args")]
    pub args_rendered: Vec<String>,
    #[serde(default, rename = "return")]
    pub return_rendered: Option<String>,
    #[serde(default)]
    pub depth: u32,
}

impl CallEvent {
    pub fn new(method: impl Into<String>, call_site: impl Into<String>, depth: u32) -> Self {
        CallEvent {
            method: method.into(),
            call_site: call_site.into(),
            args_rendered: Vec::new(),
            return_rendered: None,
            depth,
        }
    }

    pub fn with_args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args_rendered = args.into_iter().map(Into::into).collect();
        self
    }

    pub fn returning(mut self, value: impl Into<String>) -> Self {
        self.return_rendered = Some(value.into());
        self
    }

    fn key(&self) -> (&str, &str, u32) {
        (&self.method, &self.call_site, self.depth)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub events: Vec<CallEvent>,
    /// Events dropped from the front because the run exceeded the cap.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub dropped_prefix: u64,
}

fn is_zero(n: &u64) -> bool {
    *n == 0
}

impl Trace {
    pub fn new(events: Vec<CallEvent>) -> Self {
        Trace { events, dropped_prefix: 0 }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Builds a trace from wire objects, returning it with any warnings.
///
/// Objects without a string `method` are dropped. An event nested more than
/// one level deeper than its predecessor is clamped to `previous + 1`.
pub fn parse_trace_events(raw: &[Value]) -> (Trace, Vec<String>) {
    let mut warnings = Vec::new();
    let mut events = Vec::with_capacity(raw.len().min(TRACE_EVENT_CAP));
    let mut clamped = 0usize;
    for (i, obj) in raw.iter().enumerate() {
        let Some(method) = obj.get("method").and_then(Value::as_str).filter(|m| !m.is_empty()) else {
            warnings.push(format!("trace event {i} dropped: missing method"));
            continue;
        };
        let call_site = obj.get("call_site").and_then(Value::as_str).unwrap_or("").to_owned();
        let args_rendered = match obj.get("args") {
            Some(Value::Array(items)) => items.iter().map(render).collect(),
            _ => Vec::new(),
        };
        let return_rendered = match obj.get("return") {
            None | Some(Value::Null) => None,
            Some(v) => Some(render(v)),
        };
        let mut depth = obj
            .get("depth")
            .and_then(Value::as_u64)
            .map_or(0, |d| u32::try_from(d).unwrap_or(u32::MAX));
        if let Some(prev) = events.last().map(|e: &CallEvent| e.depth) {
            if depth > prev.saturating_add(1) {
                depth = prev + 1;
                clamped += 1;
            }
        }
        events.push(CallEvent { method: method.to_owned(), call_site, args_rendered, return_rendered, depth });
    }
    if clamped > 0 {
        warnings.push(format!("{clamped} trace event depth(s) clamped to call discipline"));
    }
    let mut trace = Trace::new(events);
    if trace.events.len() > TRACE_EVENT_CAP {
        let excess = trace.events.len() - TRACE_EVENT_CAP;
        trace.events.drain(..excess);
        trace.dropped_prefix = excess as u64;
        warnings.push(format!("trace truncated: {excess} oldest events dropped"));
    }
    (trace, warnings)
}

/// A field that differs between two aligned events.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDiff {
    /// `args[i]` or `return`.
    pub field: String,
    pub failing: Option<String>,
    pub passing: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Hunk {
    Common { len: usize },
    OnlyInFailing { events: Vec<CallEvent> },
    OnlyInPassing { events: Vec<CallEvent> },
    Payload { failing: CallEvent, passing: CallEvent, fields: Vec<FieldDiff> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceDiff {
    pub hunks: Vec<Hunk>,
    /// Failing-trace position where the first non-common hunk starts.
    pub first_divergence_index: Option<usize>,
}

/// Aggregate hunk counts for summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DiffSummary {
    pub common_events: usize,
    pub payload_hunks: usize,
    pub only_in_failing: usize,
    pub only_in_passing: usize,
}

impl TraceDiff {
    pub fn is_identical(&self) -> bool {
        self.first_divergence_index.is_none()
    }

    pub fn summary(&self) -> DiffSummary {
        let mut s = DiffSummary::default();
        for hunk in &self.hunks {
            match hunk {
                Hunk::Common { len } => s.common_events += len,
                Hunk::Payload { .. } => s.payload_hunks += 1,
                Hunk::OnlyInFailing { events } => s.only_in_failing += events.len(),
                Hunk::OnlyInPassing { events } => s.only_in_passing += events.len(),
            }
        }
        s
    }

    /// Replays the hunks over the failing trace to rebuild the passing one.
    /// Returns `None` if the hunks do not fit `failing`.
    pub fn reconstruct_passing(&self, failing: &[CallEvent]) -> Option<Vec<CallEvent>> {
        let mut out = Vec::new();
        let mut i = 0;
        for hunk in &self.hunks {
            match hunk {
                Hunk::Common { len } => {
                    out.extend_from_slice(failing.get(i..i + len)?);
                    i += len;
                }
                Hunk::OnlyInFailing { events } => {
                    if failing.get(i..i + events.len())? != events.as_slice() {
                        return None;
                    }
                    i += events.len();
                }
                Hunk::OnlyInPassing { events } => out.extend_from_slice(events),
                Hunk::Payload { failing: f, passing: p, .. } => {
                    if failing.get(i)? != f {
                        return None;
                    }
                    out.push(p.clone());
                    i += 1;
                }
            }
        }
        (i == failing.len()).then_some(out)
    }

    /// Replays the hunks over the passing trace to rebuild the failing one.
    pub fn reconstruct_failing(&self, passing: &[CallEvent]) -> Option<Vec<CallEvent>> {
        let mut out = Vec::new();
        let mut j = 0;
        for hunk in &self.hunks {
            match hunk {
                Hunk::Common { len } => {
                    out.extend_from_slice(passing.get(j..j + len)?);
                    j += len;
                }
                Hunk::OnlyInFailing { events } => out.extend_from_slice(events),
                Hunk::OnlyInPassing { events } => {
                    if passing.get(j..j + events.len())? != events.as_slice() {
                        return None;
                    }
                    j += events.len();
                }
                Hunk::Payload { failing: f, passing: p, .. } => {
                    if passing.get(j)? != p {
                        return None;
                    }
                    out.push(f.clone());
                    j += 1;
                }
            }
        }
        (j == passing.len()).then_some(out)
    }
}

/// Alignment step between two sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Step {
    Match(usize, usize),
    OnlyA(usize),
    OnlyB(usize),
}

/// Middles larger than this many DP cells are aligned with Myers instead.
const DP_CELL_LIMIT: usize = 4_000_000;
/// Beyond this edit distance Myers gives up and the middle becomes one
/// replace region.
const MYERS_MAX_D: usize = 4_000;

/// LCS alignment by equality of `eq`, trimming the common prefix and suffix.
pub(crate) fn align<T>(a: &[T], b: &[T], eq: impl Fn(&T, &T) -> bool) -> Vec<Step> {
    let mut prefix = 0;
    while prefix < a.len() && prefix < b.len() && eq(&a[prefix], &b[prefix]) {
        prefix += 1;
    }
    let mut suffix = 0;
    while suffix < a.len() - prefix
        && suffix < b.len() - prefix
        && eq(&a[a.len() - 1 - suffix], &b[b.len() - 1 - suffix])
    {
        suffix += 1;
    }
    let am = &a[prefix..a.len() - suffix];
    let bm = &b[prefix..b.len() - suffix];

    let mut steps: Vec<Step> = (0..prefix).map(|i| Step::Match(i, i)).collect();
    let middle = if am.len().saturating_mul(bm.len()) <= DP_CELL_LIMIT {
        align_dp(am, bm, &eq)
    } else {
        align_myers(am, bm, &eq, MYERS_MAX_D).unwrap_or_else(|| {
            (0..am.len()).map(Step::OnlyA).chain((0..bm.len()).map(Step::OnlyB)).collect()
        })
    };
    steps.extend(middle.into_iter().map(|s| match s {
        Step::Match(i, j) => Step::Match(i + prefix, j + prefix),
        Step::OnlyA(i) => Step::OnlyA(i + prefix),
        Step::OnlyB(j) => Step::OnlyB(j + prefix),
    }));
    let (ta, tb) = (a.len() - suffix, b.len() - suffix);
    steps.extend((0..suffix).map(|k| Step::Match(ta + k, tb + k)));
    steps
}

/// Textbook LCS table with backtracking.
pub(crate) fn align_dp<T>(a: &[T], b: &[T], eq: &impl Fn(&T, &T) -> bool) -> Vec<Step> {
    let (n, m) = (a.len(), b.len());
    let width = m + 1;
    let mut table = vec![0u32; (n + 1) * width];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            table[i * width + j] = if eq(&a[i], &b[j]) {
                table[(i + 1) * width + j + 1] + 1
            } else {
                table[(i + 1) * width + j].max(table[i * width + j + 1])
            };
        }
    }
    let mut steps = Vec::with_capacity(n + m);
    let (mut i, mut j) = (0, 0);
    while i < n && j < m {
        if eq(&a[i], &b[j]) && table[i * width + j] == table[(i + 1) * width + j + 1] + 1 {
            steps.push(Step::Match(i, j));
            i += 1;
            j += 1;
        } else if table[(i + 1) * width + j] >= table[i * width + j + 1] {
            steps.push(Step::OnlyA(i));
            i += 1;
        } else {
            steps.push(Step::OnlyB(j));
            j += 1;
        }
    }
    steps.extend((i..n).map(Step::OnlyA));
    steps.extend((j..m).map(Step::OnlyB));
    steps
}

/// Myers' O((N+M)D) greedy diff; `None` if the edit distance exceeds `max_d`.
pub(crate) fn align_myers<T>(
    a: &[T],
    b: &[T],
    eq: &impl Fn(&T, &T) -> bool,
    max_d: usize,
) -> Option<Vec<Step>> {
    let (n, m) = (a.len() as isize, b.len() as isize);
    let offset = (n + m) as usize + 1;
    let mut v = vec![0isize; 2 * offset + 1];
    let mut history: Vec<Vec<isize>> = Vec::new();
    let max_steps = (n + m) as usize;
    let mut final_d = None;
    'outer: for d in 0..=max_steps.min(max_d) as isize {
        history.push(v.clone());
        let mut k = -d;
        while k <= d {
            let idx = (k + offset as isize) as usize;
            let mut x = if k == -d || (k != d && v[idx - 1] < v[idx + 1]) {
                v[idx + 1]
            } else {
                v[idx - 1] + 1
            };
            let mut y = x - k;
            while x < n && y < m && eq(&a[x as usize], &b[y as usize]) {
                x += 1;
                y += 1;
            }
            v[idx] = x;
            if x >= n && y >= m {
                final_d = Some(d);
                break 'outer;
            }
            k += 2;
        }
    }
    let final_d = final_d?;

    // Walk the snapshots backwards to recover the path.
    let mut steps = Vec::new();
    let (mut x, mut y) = (n, m);
    for d in (1..=final_d).rev() {
        let v = &history[d as usize];
        let k = x - y;
        let at = |k: isize| v[(k + offset as isize) as usize];
        let down = k == -d || (k != d && at(k - 1) < at(k + 1));
        let prev_k = if down { k + 1 } else { k - 1 };
        let prev_x = at(prev_k);
        let prev_y = prev_x - prev_k;
        while x > prev_x && y > prev_y {
            steps.push(Step::Match((x - 1) as usize, (y - 1) as usize));
            x -= 1;
            y -= 1;
        }
        if down {
            steps.push(Step::OnlyB(prev_y as usize));
        } else {
            steps.push(Step::OnlyA(prev_x as usize));
        }
        x = prev_x;
        y = prev_y;
    }
    while x > 0 && y > 0 {
        steps.push(Step::Match((x - 1) as usize, (y - 1) as usize));
        x -= 1;
        y -= 1;
    }
    steps.reverse();
    Some(steps)
}

fn payload_fields(f: &CallEvent, p: &CallEvent) -> Vec<FieldDiff> {
    let mut fields = Vec::new();
    let len = f.args_rendered.len().max(p.args_rendered.len());
    for i in 0..len {
        let (a, b) = (f.args_rendered.get(i), p.args_rendered.get(i));
        if a != b {
            fields.push(FieldDiff { field: format!("args[{i}]"), failing: a.cloned(), passing: b.cloned() });
        }
    }
    if f.return_rendered != p.return_rendered {
        fields.push(FieldDiff {
            field: "return".into(),
            failing: f.return_rendered.clone(),
            passing: p.return_rendered.clone(),
        });
    }
    fields
}

/// Aligns two traces on `(method, call_site, depth)`.
///
/// Aligned pairs with equal payloads merge into `Common` runs; pairs whose
/// rendered arguments or return value differ become `Payload` hunks. Within
/// each gap between aligned pairs, failing-only events precede passing-only
/// ones.
pub fn diff_traces(failing: &Trace, passing: &Trace) -> TraceDiff {
    let (fa, pb) = (&failing.events, &passing.events);
    let steps = align(fa, pb, |x, y| x.key() == y.key());

    let mut hunks: Vec<Hunk> = Vec::new();
    let mut only_f: Vec<CallEvent> = Vec::new();
    let mut only_p: Vec<CallEvent> = Vec::new();
    let flush = |hunks: &mut Vec<Hunk>, only_f: &mut Vec<CallEvent>, only_p: &mut Vec<CallEvent>| {
        if !only_f.is_empty() {
            hunks.push(Hunk::OnlyInFailing { events: std::mem::take(only_f) });
        }
        if !only_p.is_empty() {
            hunks.push(Hunk::OnlyInPassing { events: std::mem::take(only_p) });
        }
    };
    for step in steps {
        match step {
            Step::OnlyA(i) => only_f.push(fa[i].clone()),
            Step::OnlyB(j) => only_p.push(pb[j].clone()),
            Step::Match(i, j) => {
                flush(&mut hunks, &mut only_f, &mut only_p);
                if fa[i] == pb[j] {
                    if let Some(Hunk::Common { len }) = hunks.last_mut() {
                        *len += 1;
                    } else {
                        hunks.push(Hunk::Common { len: 1 });
                    }
                } else {
                    hunks.push(Hunk::Payload {
                        failing: fa[i].clone(),
                        passing: pb[j].clone(),
                        fields: payload_fields(&fa[i], &pb[j]),
                    });
                }
            }
        }
    }
    flush(&mut hunks, &mut only_f, &mut only_p);
    if hunks.is_empty() {
        hunks.push(Hunk::Common { len: 0 });
    }

    let mut position = 0;
    let mut first_divergence_index = None;
    for hunk in &hunks {
        match hunk {
            Hunk::Common { len } => position += len,
            _ => {
                first_divergence_index = Some(position);
                break;
            }
        }
    }
    TraceDiff { hunks, first_divergence_index }
}

/// The first non-common hunk and its failing-trace position.
pub fn first_divergence(diff: &TraceDiff) -> Option<(usize, &Hunk)> {
    let index = diff.first_divergence_index?;
    let hunk = diff.hunks.iter().find(|h| !matches!(h, Hunk::Common { .. }))?;
    Some((index, hunk))
}
