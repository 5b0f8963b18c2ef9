//! Perturbed test inputs: mutation fuzzing and test-suite reuse.
//!
//! Mutators are grouped into two families. Structural mutators edit the
//! shape of a value (characters, elements, fields); semantic mutators move a
//! value to a neighbouring or boundary value of its type (case, sign, zero,
//! numeric extremes). Generation is round based: every single-argument
//! perturbation of the original is yielded before any candidate that
//! perturbs twice.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InputValue, Provenance, SearchConfig, TestSpec, ValueTag};

/// A perturbed test awaiting ranking and execution.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub spec: TestSpec,
    pub provenance: Provenance,
    /// Seed the producing mutator ran with.
    pub lineage_seed: u64,
    /// 1-based position in the candidate stream.
    pub generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MutatorFamily {
    Structural,
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mutator {
    CaseFlip,
    UpperAll,
    LowerAll,
    Substitute,
    Insert,
    Delete,
    Transpose,
    DropPrefix,
    DropSuffix,
    Duplicate,
    IntPlusOne,
    IntMinusOne,
    IntNegate,
    IntZero,
    IntDouble,
    IntHalve,
    IntBoundary,
    RealPlusOne,
    RealMinusOne,
    RealNextUp,
    RealNextDown,
    RealNegate,
    RealZero,
    RealDouble,
    RealHalve,
    RealBoundary,
    BoolFlip,
    SeqElement,
    SeqRemove,
    SeqSwap,
    SeqTruncate,
    RecordField,
}

impl Mutator {
    /// Catalog order; also the order mutators are applied in.
    pub const ALL: [Mutator; 32] = [
        Mutator::CaseFlip,
        Mutator::UpperAll,
        Mutator::LowerAll,
        Mutator::Substitute,
        Mutator::Insert,
        Mutator::Delete,
        Mutator::Transpose,
        Mutator::DropPrefix,
        Mutator::DropSuffix,
        Mutator::Duplicate,
        Mutator::IntPlusOne,
        Mutator::IntMinusOne,
        Mutator::IntNegate,
        Mutator::IntZero,
        Mutator::IntDouble,
        Mutator::IntHalve,
        Mutator::IntBoundary,
        Mutator::RealPlusOne,
        Mutator::RealMinusOne,
        Mutator::RealNextUp,
        Mutator::RealNextDown,
        Mutator::RealNegate,
        Mutator::RealZero,
        Mutator::RealDouble,
        Mutator::RealHalve,
        Mutator::RealBoundary,
        Mutator::BoolFlip,
        Mutator::SeqElement,
        Mutator::SeqRemove,
        Mutator::SeqSwap,
        Mutator::SeqTruncate,
        Mutator::RecordField,
    ];

    pub fn name(self) -> &'static str {
        use Mutator::*;
        match self {
            CaseFlip => "text.case-flip",
            UpperAll => "text.upper-all",
            LowerAll => "text.lower-all",
            Substitute => "text.substitute",
            Insert => "text.insert",
            Delete => "text.delete",
            Transpose => "text.transpose",
            DropPrefix => "text.drop-prefix",
            DropSuffix => "text.drop-suffix",
            Duplicate => "text.duplicate",
            IntPlusOne => "integer.plus-one",
            IntMinusOne => "integer.minus-one",
            IntNegate => "integer.negate",
            IntZero => "integer.zero",
            IntDouble => "integer.double",
            IntHalve => "integer.halve",
            IntBoundary => "integer.boundary",
            RealPlusOne => "real.plus-one",
            RealMinusOne => "real.minus-one",
            RealNextUp => "real.next-up",
            RealNextDown => "real.next-down",
            RealNegate => "real.negate",
            RealZero => "real.zero",
            RealDouble => "real.double",
            RealHalve => "real.halve",
            RealBoundary => "real.boundary",
            BoolFlip => "boolean.flip",
            SeqElement => "sequence.element",
            SeqRemove => "sequence.remove",
            SeqSwap => "sequence.swap",
            SeqTruncate => "sequence.truncate",
            RecordField => "record.field",
        }
    }

    pub fn from_name(name: &str) -> Option<Mutator> {
        Mutator::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn tag(self) -> ValueTag {
        use Mutator::*;
        match self {
            CaseFlip | UpperAll | LowerAll | Substitute | Insert | Delete | Transpose
            | DropPrefix | DropSuffix | Duplicate => ValueTag::Text,
            IntPlusOne | IntMinusOne | IntNegate | IntZero | IntDouble | IntHalve
            | IntBoundary => ValueTag::Integer,
            RealPlusOne | RealMinusOne | RealNextUp | RealNextDown | RealNegate | RealZero
            | RealDouble | RealHalve | RealBoundary => ValueTag::Real,
            BoolFlip => ValueTag::Boolean,
            SeqElement | SeqRemove | SeqSwap | SeqTruncate => ValueTag::Sequence,
            RecordField => ValueTag::Record,
        }
    }

    pub fn family(self) -> MutatorFamily {
        use Mutator::*;
        match self {
            CaseFlip | UpperAll | LowerAll | IntPlusOne | IntMinusOne | IntNegate | IntZero
            | IntBoundary | RealPlusOne | RealMinusOne | RealNextUp | RealNextDown
            | RealNegate | RealZero | RealBoundary | BoolFlip => MutatorFamily::Semantic,
            _ => MutatorFamily::Structural,
        }
    }
}

/// Ordered mutators with enablement flags.
#[derive(Debug, Clone, PartialEq)]
pub struct MutatorCatalog {
    entries: Vec<(Mutator, bool)>,
}

impl Default for MutatorCatalog {
    fn default() -> Self {
        MutatorCatalog {
            entries: Mutator::ALL.iter().map(|&m| (m, true)).collect(),
        }
    }
}

impl MutatorCatalog {
    pub fn set_enabled(&mut self, name: &str, enabled: bool) -> Result<()> {
        let m = Mutator::from_name(name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mutator \"{name}\"")))?;
        for entry in &mut self.entries {
            if entry.0 == m {
                entry.1 = enabled;
            }
        }
        Ok(())
    }

    pub fn is_enabled(&self, m: Mutator) -> bool {
        self.entries.iter().any(|&(x, on)| x == m && on)
    }

    /// Enabled mutators for one tag, in catalog order.
    pub fn enabled_for(&self, tag: ValueTag) -> impl Iterator<Item = Mutator> + '_ {
        self.entries
            .iter()
            .filter(move |(m, on)| *on && m.tag() == tag)
            .map(|(m, _)| *m)
    }

    /// Every tag used by `args` (nested included) needs an enabled mutator.
    pub fn check_covers(&self, args: &[InputValue]) -> Result<()> {
        let mut tags = HashSet::new();
        args.iter().for_each(|a| a.collect_tags(&mut tags));
        let mut tags: Vec<_> = tags.into_iter().collect();
        tags.sort();
        for tag in tags {
            if self.enabled_for(tag).next().is_none() {
                return Err(Error::InvalidConfig(format!(
                    "no mutator enabled for {tag} arguments"
                )));
            }
        }
        Ok(())
    }
}

/// Mixes a seed with a stream index into an independent seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

type Mutations = Box<dyn Iterator<Item = (String, InputValue)> + Send>;

/// Printable ASCII plus the string's own non-ASCII characters, shuffled by seed.
fn substitution_alphabet(chars: &[char], seed: u64) -> Arc<[char]> {
    let mut alphabet: Vec<char> = (0x20u8..=0x7e).map(char::from).collect();
    for &c in chars {
        if !alphabet.contains(&c) {
            alphabet.push(c);
        }
    }
    alphabet.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    alphabet.into()
}

fn only_char(mut it: impl Iterator<Item = char>) -> Option<char> {
    let first = it.next()?;
    it.next().is_none().then_some(first)
}

fn flip_case(c: char) -> Option<char> {
    let flipped = if c.is_lowercase() {
        only_char(c.to_uppercase())
    } else if c.is_uppercase() {
        only_char(c.to_lowercase())
    } else {
        None
    };
    flipped.filter(|&f| f != c)
}

fn text_mutations(m: Mutator, s: &str, seed: u64) -> Box<dyn Iterator<Item = String> + Send> {
    let chars: Arc<[char]> = s.chars().collect::<Vec<_>>().into();
    let n = chars.len();
    let collect = |v: Vec<char>| v.into_iter().collect::<String>();
    match m {
        Mutator::CaseFlip => Box::new((0..n).filter_map(move |i| {
            flip_case(chars[i]).map(|c| {
                let mut v = chars.to_vec();
                v[i] = c;
                collect(v)
            })
        })),
        Mutator::UpperAll => Box::new(std::iter::once(s.to_uppercase())),
        Mutator::LowerAll => Box::new(std::iter::once(s.to_lowercase())),
        Mutator::Substitute => {
            let alphabet = substitution_alphabet(&chars, seed);
            Box::new((0..n).flat_map(move |i| {
                let chars = chars.clone();
                let alphabet = alphabet.clone();
                (0..alphabet.len()).filter_map(move |k| {
                    (alphabet[k] != chars[i]).then(|| {
                        let mut v = chars.to_vec();
                        v[i] = alphabet[k];
                        collect(v)
                    })
                })
            }))
        }
        Mutator::Insert => {
            let alphabet = substitution_alphabet(&chars, seed);
            Box::new((0..=n).flat_map(move |i| {
                let chars = chars.clone();
                let alphabet = alphabet.clone();
                (0..alphabet.len()).map(move |k| {
                    let mut v = chars.to_vec();
                    v.insert(i, alphabet[k]);
                    collect(v)
                })
            }))
        }
        Mutator::Delete => Box::new((0..n).map(move |i| {
            let mut v = chars.to_vec();
            v.remove(i);
            collect(v)
        })),
        Mutator::Transpose => Box::new((0..n.saturating_sub(1)).filter_map(move |i| {
            (chars[i] != chars[i + 1]).then(|| {
                let mut v = chars.to_vec();
                v.swap(i, i + 1);
                collect(v)
            })
        })),
        Mutator::DropPrefix => Box::new((1..=n).map(move |k| chars[k..].iter().collect())),
        Mutator::DropSuffix => Box::new((1..=n).map(move |k| chars[..n - k].iter().collect())),
        Mutator::Duplicate if n > 0 => Box::new(std::iter::once(format!("{s}{s}"))),
        _ => Box::new(std::iter::empty()),
    }
}

fn integer_mutations(m: Mutator, n: i64) -> Vec<i64> {
    match m {
        Mutator::IntPlusOne => n.checked_add(1).into_iter().collect(),
        Mutator::IntMinusOne => n.checked_sub(1).into_iter().collect(),
        Mutator::IntNegate => n.checked_neg().into_iter().collect(),
        Mutator::IntZero => vec![0],
        Mutator::IntDouble => n.checked_mul(2).into_iter().collect(),
        Mutator::IntHalve => vec![n / 2],
        Mutator::IntBoundary => vec![
            i64::MIN,
            i64::MAX,
            i64::from(i32::MIN),
            i64::from(i32::MAX),
        ],
        _ => vec![],
    }
}

fn real_mutations(m: Mutator, x: f64) -> Vec<f64> {
    let out = match m {
        Mutator::RealPlusOne => vec![x + 1.0],
        Mutator::RealMinusOne => vec![x - 1.0],
        Mutator::RealNextUp => vec![x.next_up()],
        Mutator::RealNextDown => vec![x.next_down()],
        Mutator::RealNegate => vec![-x],
        Mutator::RealZero => vec![0.0],
        Mutator::RealDouble => vec![x * 2.0],
        Mutator::RealHalve => vec![x / 2.0],
        Mutator::RealBoundary => vec![f64::MAX, f64::MIN, f64::MIN_POSITIVE, -f64::MIN_POSITIVE],
        _ => vec![],
    };
    // Negative zero would compare equal to zero yet encode differently.
    out.into_iter()
        .filter(|y| y.is_finite())
        .map(|y| if y == 0.0 { 0.0 } else { y })
        .collect()
}

fn sequence_mutations(
    m: Mutator,
    items: Arc<Vec<InputValue>>,
    catalog: Arc<MutatorCatalog>,
    seed: u64,
) -> Mutations {
    let n = items.len();
    let name = m.name();
    match m {
        Mutator::SeqElement => Box::new((0..n).flat_map(move |i| {
            let items = items.clone();
            let inner = mutations(&items[i], &catalog, derive_seed(seed, i as u64));
            inner.map(move |(inner_name, v)| {
                let mut out = items.as_ref().clone();
                out[i] = v;
                (format!("{name}[{i}]/{inner_name}"), InputValue::Sequence(out))
            })
        })),
        Mutator::SeqRemove => Box::new((0..n).map(move |i| {
            let mut out = items.as_ref().clone();
            out.remove(i);
            (name.to_owned(), InputValue::Sequence(out))
        })),
        Mutator::SeqSwap => Box::new((0..n.saturating_sub(1)).map(move |i| {
            let mut out = items.as_ref().clone();
            out.swap(i, i + 1);
            (name.to_owned(), InputValue::Sequence(out))
        })),
        Mutator::SeqTruncate => Box::new((0..n.saturating_sub(1)).rev().map(move |k| {
            (name.to_owned(), InputValue::Sequence(items[..k].to_vec()))
        })),
        _ => Box::new(std::iter::empty()),
    }
}

fn record_mutations(
    fields: Arc<Vec<(String, InputValue)>>,
    catalog: Arc<MutatorCatalog>,
    seed: u64,
) -> Mutations {
    let n = fields.len();
    Box::new((0..n).flat_map(move |i| {
        let fields = fields.clone();
        let inner = mutations(&fields[i].1, &catalog, derive_seed(seed, i as u64));
        inner.map(move |(inner_name, v)| {
            let mut out = fields.as_ref().clone();
            let label = format!("record.field({})/{inner_name}", out[i].0);
            out[i].1 = v;
            (label, InputValue::Record(out))
        })
    }))
}

/// Lazy stream of `(mutator name, value)` for every enabled mutator applicable
/// to `v`, in catalog order. May contain duplicates and `v` itself; callers
/// filter.
pub fn mutations(v: &InputValue, catalog: &Arc<MutatorCatalog>, seed: u64) -> Mutations {
    let enabled: Vec<Mutator> = catalog.enabled_for(v.tag()).collect();
    let original = v.clone();
    let streams: Vec<Mutations> = enabled
        .into_iter()
        .map(|m| -> Mutations {
            let name = m.name();
            match v {
                InputValue::Text(s) => Box::new(
                    text_mutations(m, s, seed).map(move |t| (name.to_owned(), InputValue::Text(t))),
                ),
                InputValue::Integer(n) => Box::new(
                    integer_mutations(m, *n)
                        .into_iter()
                        .map(move |x| (name.to_owned(), InputValue::Integer(x))),
                ),
                InputValue::Real(x) => Box::new(
                    real_mutations(m, *x)
                        .into_iter()
                        .map(move |y| (name.to_owned(), InputValue::Real(y))),
                ),
                InputValue::Boolean(b) => {
                    Box::new(std::iter::once((name.to_owned(), InputValue::Boolean(!b))))
                }
                InputValue::Sequence(items) => {
                    sequence_mutations(m, Arc::new(items.clone()), catalog.clone(), seed)
                }
                InputValue::Record(fields) => {
                    record_mutations(Arc::new(fields.clone()), catalog.clone(), seed)
                }
            }
        })
        .collect();
    Box::new(
        streams
            .into_iter()
            .flatten()
            .filter(move |(_, x)| *x != original),
    )
}

/// Up to `budget` distinct perturbations of `v`, none equal to `v`, using the
/// default catalog. Deterministic in `(v, budget, seed)`.
pub fn perturb_value(v: &InputValue, budget: usize, seed: u64) -> Vec<InputValue> {
    perturb_value_with(v, budget, seed, &Arc::new(MutatorCatalog::default()))
}

pub fn perturb_value_with(
    v: &InputValue,
    budget: usize,
    seed: u64,
    catalog: &Arc<MutatorCatalog>,
) -> Vec<InputValue> {
    let mut seen = HashSet::new();
    seen.insert(v.canonical_json());
    mutations(v, catalog, seed)
        .filter(|(_, x)| seen.insert(x.canonical_json()))
        .map(|(_, x)| x)
        .take(budget)
        .collect()
}

/// Lazy candidate stream; see [`generate_candidates`].
pub struct CandidateStream {
    original: TestSpec,
    catalog: Arc<MutatorCatalog>,
    seed: u64,
    limit: usize,
    yielded: usize,
    round: u32,
    frontier: Vec<TestSpec>,
    next_frontier: Vec<TestSpec>,
    frontier_pos: usize,
    arg_pos: usize,
    current: Option<(Mutations, u64)>,
    seen: HashSet<String>,
}

impl CandidateStream {
    /// Excludes specs with these arg keys (e.g. suite candidates already queued).
    pub fn exclude_keys<I: IntoIterator<Item = String>>(mut self, keys: I) -> Self {
        self.seen.extend(keys);
        self
    }

    pub fn with_limit(mut self, limit: usize) -> Self {
        self.limit = limit;
        self
    }

    fn lineage(&self) -> u64 {
        let position = ((self.frontier_pos as u64) << 16) | self.arg_pos as u64;
        derive_seed(self.seed, (u64::from(self.round) << 48) | position)
    }

    /// Moves to the next (frontier spec, argument) pair; false when exhausted.
    fn advance(&mut self) -> bool {
        loop {
            if self.frontier_pos >= self.frontier.len() {
                if self.next_frontier.is_empty() {
                    return false;
                }
                self.frontier = std::mem::take(&mut self.next_frontier);
                self.frontier_pos = 0;
                self.arg_pos = 0;
                self.round += 1;
                continue;
            }
            let spec = &self.frontier[self.frontier_pos];
            if self.arg_pos >= spec.args.len() {
                self.frontier_pos += 1;
                self.arg_pos = 0;
                continue;
            }
            let lineage = self.lineage();
            let stream = mutations(&spec.args[self.arg_pos], &self.catalog, lineage);
            self.current = Some((stream, lineage));
            return true;
        }
    }
}

impl Iterator for CandidateStream {
    type Item = Candidate;

    fn next(&mut self) -> Option<Candidate> {
        loop {
            if self.yielded >= self.limit {
                return None;
            }
            if let Some((stream, lineage)) = self.current.as_mut() {
                let lineage = *lineage;
                for (mutator, value) in stream.by_ref() {
                    let mut args = self.frontier[self.frontier_pos].args.clone();
                    args[self.arg_pos] = value;
                    let spec = TestSpec {
                        test_id: format!("{}#{}", self.original.test_id, self.yielded + 1),
                        args,
                        oracle_id: self.original.oracle_id.clone(),
                    };
                    if !self.seen.insert(spec.args_key()) {
                        continue;
                    }
                    self.yielded += 1;
                    self.next_frontier.push(spec.clone());
                    return Some(Candidate {
                        spec,
                        provenance: Provenance::Fuzzed { mutator, round: self.round },
                        lineage_seed: lineage,
                        generation: self.yielded as u64,
                    });
                }
                self.current = None;
                self.arg_pos += 1;
            }
            if !self.advance() {
                return None;
            }
        }
    }
}

/// Deduplicated, deterministic stream of at most `config.max_candidates`
/// perturbations of `original`.
pub fn generate_candidates(
    original: &TestSpec,
    catalog: &MutatorCatalog,
    config: &SearchConfig,
) -> CandidateStream {
    let mut seen = HashSet::new();
    seen.insert(original.args_key());
    CandidateStream {
        original: original.clone(),
        catalog: Arc::new(catalog.clone()),
        seed: config.rng_seed,
        limit: config.max_candidates,
        yielded: 0,
        round: 1,
        frontier: vec![original.clone()],
        next_frontier: Vec::new(),
        frontier_pos: 0,
        arg_pos: 0,
        current: None,
        seen,
    }
}

/// Suite members comparable with `original`, minus the original itself and
/// duplicate argument vectors.
pub fn reuse_suite_candidates(suite: &[TestSpec], original: &TestSpec) -> Vec<Candidate> {
    let mut seen = HashSet::new();
    seen.insert(original.args_key());
    suite
        .iter()
        .filter(|s| s.comparable_with(original))
        .filter(|s| seen.insert(s.args_key()))
        .enumerate()
        .map(|(i, s)| Candidate {
            spec: s.clone(),
            provenance: Provenance::SuiteReuse { test_id: s.test_id.clone() },
            lineage_seed: 0,
            generation: i as u64 + 1,
        })
        .collect()
}
