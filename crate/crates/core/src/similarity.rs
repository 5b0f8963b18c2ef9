//! Input distance metrics and nearest-first ranking of candidates.
//!
//! Every metric is normalized to `[0, 1]` so per-argument distances of
//! different types can be combined in one weighted mean.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::candidates::Candidate;
use crate::error::{Error, Result};
use crate::model::{InputValue, TestSpec};

/// Normalized distance; 0 means identical, 1 maximally different.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Distance(f64);

impl Distance {
    pub const ZERO: Distance = Distance(0.0);
    pub const MAX: Distance = Distance(1.0);

    /// Clamps into `[0, 1]`. NaN is a programming error.
    pub fn new(value: f64) -> Self {
        assert!(!value.is_nan(), "distance must not be NaN");
        Distance(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Total order; valid because NaN is excluded at construction.
    pub fn total_cmp(&self, other: &Distance) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Display for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}", self.0)
    }
}

/// Levenshtein distance over Unicode scalar values, two-row DP.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_chars(&a, &b)
}

fn levenshtein_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein normalized by the longer length.
pub fn string_distance(a: &str, b: &str) -> Distance {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let longest = a.len().max(b.len());
    if longest == 0 {
        return Distance::ZERO;
    }
    Distance::new(levenshtein_chars(&a, &b) as f64 / longest as f64)
}

/// `|a - b| / (|a| + |b| + 1)`.
pub fn numeric_distance(a: f64, b: f64) -> Distance {
    assert!(!a.is_nan() && !b.is_nan(), "numeric_distance on NaN");
    if a == b {
        return Distance::ZERO;
    }
    let scale = a.abs().max(b.abs());
    let raw = if scale > 1e300 {
        // a - b may overflow; divide through by the larger magnitude.
        ((a / scale) - (b / scale)).abs() / ((a / scale).abs() + (b / scale).abs() + 1.0 / scale)
    } else {
        (a - b).abs() / (a.abs() + b.abs() + 1.0)
    };
    Distance::new(raw.min(LARGEST_BELOW_ONE))
}

/// Integer variant of [`numeric_distance`]; exact difference via i128 so
/// neighbours near `i64::MAX` still get a non-zero distance.
pub fn integer_distance(a: i64, b: i64) -> Distance {
    if a == b {
        return Distance::ZERO;
    }
    let diff = (i128::from(a) - i128::from(b)).unsigned_abs() as f64;
    let denom = (a as f64).abs() + (b as f64).abs() + 1.0;
    Distance::new((diff / denom).min(LARGEST_BELOW_ONE))
}

const LARGEST_BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Element-wise distances over the common prefix plus 1 per unmatched
/// trailing element, divided by the longer length.
pub fn sequence_distance(a: &[InputValue], b: &[InputValue]) -> Distance {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return Distance::ZERO;
    }
    let common: f64 = a.iter().zip(b).map(|(x, y)| value_distance(x, y).value()).sum();
    let unmatched = (a.len() as isize - b.len() as isize).unsigned_abs() as f64;
    Distance::new((common + unmatched) / longest as f64)
}

/// Fields aligned by name; a field present on one side only costs 1.
pub fn record_distance(a: &[(String, InputValue)], b: &[(String, InputValue)]) -> Distance {
    let mut total = 0.0;
    let mut union = 0usize;
    for (name, va) in a {
        union += 1;
        total += match b.iter().find(|(n, _)| n == name) {
            Some((_, vb)) => value_distance(va, vb).value(),
            None => 1.0,
        };
    }
    for (name, _) in b {
        if !a.iter().any(|(n, _)| n == name) {
            union += 1;
            total += 1.0;
        }
    }
    if union == 0 {
        return Distance::ZERO;
    }
    Distance::new(total / union as f64)
}

/// Dispatches on the variant tag; mismatched tags are maximally distant.
pub fn value_distance(a: &InputValue, b: &InputValue) -> Distance {
    use InputValue::*;
    match (a, b) {
        (Text(x), Text(y)) => string_distance(x, y),
        (Integer(x), Integer(y)) => integer_distance(*x, *y),
        (Real(x), Real(y)) => numeric_distance(*x, *y),
        (Boolean(x), Boolean(y)) => {
            if x == y {
                Distance::ZERO
            } else {
                Distance::MAX
            }
        }
        (Sequence(x), Sequence(y)) => sequence_distance(x, y),
        (Record(x), Record(y)) => record_distance(x, y),
        _ => Distance::MAX,
    }
}

/// Weighted mean of per-argument distances; uniform weights by default.
pub fn test_distance(a: &TestSpec, b: &TestSpec, weights: Option<&[f64]>) -> Result<Distance> {
    if a.oracle_id != b.oracle_id {
        return Err(Error::Incomparable(format!(
            "oracle \"{}\" vs \"{}\"",
            a.oracle_id, b.oracle_id
        )));
    }
    if a.args.len() != b.args.len() {
        return Err(Error::Incomparable(format!(
            "arity {} vs {}",
            a.args.len(),
            b.args.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != a.args.len() {
            return Err(Error::InvalidConfig(format!(
                "weights has length {} but the test has {} arguments",
                w.len(),
                a.args.len()
            )));
        }
    }
    let per_arg = a.args.iter().zip(&b.args).map(|(x, y)| value_distance(x, y).value());
    let Some(w) = weights else {
        return Ok(Distance::new(per_arg.sum::<f64>() / a.args.len() as f64));
    };
    let weight_sum: f64 = w.iter().sum();
    if weight_sum <= 0.0 {
        return Err(Error::InvalidConfig("weights must have a positive sum".into()));
    }
    Ok(Distance::new(per_arg.zip(w).map(|(d, wi)| wi / weight_sum * d).sum()))
}

/// A candidate with its distance to the original memoized.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate {
    pub candidate: Candidate,
    pub distance: Distance,
}

/// Buffers the stream and orders it nearest-first, stable on generation index.
pub fn rank_candidates<I>(
    stream: I,
    original: &TestSpec,
    weights: Option<&[f64]>,
) -> Result<Vec<RankedCandidate>>
where
    I: IntoIterator<Item = Candidate>,
{
    let mut ranked = stream
        .into_iter()
        .map(|candidate| {
            let distance = test_distance(original, &candidate.spec, weights)?;
            Ok(RankedCandidate { candidate, distance })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.candidate.generation.cmp(&b.candidate.generation))
    });
    Ok(ranked)
}

/// One step of a character-level edit script, positions in the source string.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum CharEdit {
    Substitute { pos: usize, from: char, to: char },
    Insert { pos: usize, ch: char },
    Delete { pos: usize, ch: char },
}

/// An optimal (minimum-length) edit script turning `from` into `to`.
///
/// Positions refer to character indices of `from`; inserts at the same
/// position apply in listed order.
pub fn edit_script(from: &str, to: &str) -> Vec<CharEdit> {
    let a: Vec<char> = from.chars().collect();
    let b: Vec<char> = to.chars().collect();
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            dp[i][j] = sub.min(dp[i - 1][j] + 1).min(dp[i][j - 1] + 1);
        }
    }

    let mut edits = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]) {
            if a[i - 1] != b[j - 1] {
                edits.push(CharEdit::Substitute { pos: i - 1, from: a[i - 1], to: b[j - 1] });
            }
            i -= 1;
            j -= 1;
        } else if i > 0 && dp[i][j] == dp[i - 1][j] + 1 {
            edits.push(CharEdit::Delete { pos: i - 1, ch: a[i - 1] });
            i -= 1;
        } else {
            edits.push(CharEdit::Insert { pos: i, ch: b[j - 1] });
            j -= 1;
        }
    }
    edits.reverse();
    edits
}

/// Applies an edit script produced by [`edit_script`].
pub fn apply_edits(from: &str, edits: &[CharEdit]) -> String {
    let a: Vec<char> = from.chars().collect();
    let mut out = String::new();
    let mut k = 0;
    for (pos, ch) in a.iter().enumerate() {
        while let Some(CharEdit::Insert { pos: p, ch: c }) = edits.get(k) {
            if *p != pos {
                break;
            }
            out.push(*c);
            k += 1;
        }
        match edits.get(k) {
            Some(CharEdit::Substitute { pos: p, to, .. }) if *p == pos => {
                out.push(*to);
                k += 1;
            }
            Some(CharEdit::Delete { pos: p, .. }) if *p == pos => k += 1,
            _ => out.push(*ch),
        }
    }
    for edit in &edits[k..] {
        if let CharEdit::Insert { ch, .. } = edit {
            out.push(*ch);
        }
    }
    out
}
