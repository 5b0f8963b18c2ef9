//! Shared data model: test inputs, test specs, outcomes and search configuration.

use std::collections::HashSet;
use std::fmt;

use serde::de::{self, Deserializer, MapAccess, SeqAccess, Visitor};
use serde::ser::{SerializeMap, SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::Trace;

/// A dynamically typed test argument.
///
/// The JSON encoding is untagged: text is a string, integers are integral
/// numbers, reals are numbers with a fractional or exponent part, booleans are
/// bools, sequences are arrays and records are objects with field order kept.
#[derive(Debug, Clone, PartialEq)]
pub enum InputValue {
    Text(String),
    Integer(i64),
    Real(f64),
    Boolean(bool),
    Sequence(Vec<InputValue>),
    Record(Vec<(String, InputValue)>),
}

/// Variant tag of an [`InputValue`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueTag {
    Text,
    Integer,
    Real,
    Boolean,
    Sequence,
    Record,
}

impl fmt::Display for ValueTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ValueTag::Text => "text",
            ValueTag::Integer => "integer",
            ValueTag::Real => "real",
            ValueTag::Boolean => "boolean",
            ValueTag::Sequence => "sequence",
            ValueTag::Record => "record",
        };
        f.write_str(name)
    }
}

impl InputValue {
    pub fn text(s: impl Into<String>) -> Self {
        InputValue::Text(s.into())
    }

    pub fn tag(&self) -> ValueTag {
        match self {
            InputValue::Text(_) => ValueTag::Text,
            InputValue::Integer(_) => ValueTag::Integer,
            InputValue::Real(_) => ValueTag::Real,
            InputValue::Boolean(_) => ValueTag::Boolean,
            InputValue::Sequence(_) => ValueTag::Sequence,
            InputValue::Record(_) => ValueTag::Record,
        }
    }

    /// Every tag occurring in this value, nested values included.
    pub fn collect_tags(&self, out: &mut HashSet<ValueTag>) {
        out.insert(self.tag());
        match self {
            InputValue::Sequence(items) => items.iter().for_each(|v| v.collect_tags(out)),
            InputValue::Record(fields) => fields.iter().for_each(|(_, v)| v.collect_tags(out)),
            _ => {}
        }
    }

    /// Canonical JSON text, used as the identity key for deduplication.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("input values always serialize")
    }

    /// Checks the value invariants, reporting the first violation with a
    /// path such as `args[0].items[2]`.
    pub fn check(&self, path: &str) -> std::result::Result<(), String> {
        match self {
            InputValue::Real(x) if x.is_nan() => Err(format!("{path}: NaN not permitted")),
            InputValue::Real(x) if x.is_infinite() => {
                Err(format!("{path}: infinite reals not permitted"))
            }
            InputValue::Sequence(items) => items
                .iter()
                .enumerate()
                .try_for_each(|(i, v)| v.check(&format!("{path}[{i}]"))),
            InputValue::Record(fields) => {
                let mut names = HashSet::new();
                for (name, v) in fields {
                    if !names.insert(name.as_str()) {
                        return Err(format!("{path}: duplicate record field \"{name}\""));
                    }
                    v.check(&format!("{path}.{name}"))?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for InputValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_json())
    }
}

impl Serialize for InputValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            InputValue::Text(s) => serializer.serialize_str(s),
            InputValue::Integer(n) => serializer.serialize_i64(*n),
            InputValue::Real(x) => serializer.serialize_f64(*x),
            InputValue::Boolean(b) => serializer.serialize_bool(*b),
            InputValue::Sequence(items) => {
                let mut seq = serializer.serialize_seq(Some(items.len()))?;
                for item in items {
                    seq.serialize_element(item)?;
                }
                seq.end()
            }
            InputValue::Record(fields) => {
                let mut map = serializer.serialize_map(Some(fields.len()))?;
                for (k, v) in fields {
                    map.serialize_entry(k, v)?;
                }
                map.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for InputValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        deserializer.deserialize_any(InputValueVisitor)
    }
}

struct InputValueVisitor;

impl<'de> Visitor<'de> for InputValueVisitor {
    type Value = InputValue;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a string, number, boolean, array or object")
    }

    fn visit_bool<E: de::Error>(self, v: bool) -> std::result::Result<InputValue, E> {
        Ok(InputValue::Boolean(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<InputValue, E> {
        Ok(InputValue::Integer(v))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<InputValue, E> {
        i64::try_from(v).map(InputValue::Integer).map_err(|_| {
            E::custom(format!("integer {v} exceeds 64-bit signed range; pass it as text"))
        })
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<InputValue, E> {
        if v.is_nan() {
            return Err(E::custom("NaN not permitted"));
        }
        Ok(InputValue::Real(v))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<InputValue, E> {
        Ok(InputValue::Text(v.to_owned()))
    }

    fn visit_string<E: de::Error>(self, v: String) -> std::result::Result<InputValue, E> {
        Ok(InputValue::Text(v))
    }

    fn visit_unit<E: de::Error>(self) -> std::result::Result<InputValue, E> {
        Err(E::custom("null is not a valid input value"))
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> std::result::Result<InputValue, A::Error> {
        let mut items = Vec::with_capacity(seq.size_hint().unwrap_or(0));
        while let Some(item) = seq.next_element()? {
            items.push(item);
        }
        Ok(InputValue::Sequence(items))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<InputValue, A::Error> {
        let mut fields: Vec<(String, InputValue)> = Vec::new();
        while let Some(key) = map.next_key::<String>()? {
            if fields.iter().any(|(k, _)| *k == key) {
                return Err(de::Error::custom(format!("duplicate record field \"{key}\"")));
            }
            let value = map.next_value()?;
            fields.push((key, value));
        }
        Ok(InputValue::Record(fields))
    }
}

/// An argument vector together with the oracle that judges it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub test_id: String,
    pub args: Vec<InputValue>,
    pub oracle_id: String,
}

impl TestSpec {
    pub fn new(test_id: impl Into<String>, oracle_id: impl Into<String>, args: Vec<InputValue>) -> Self {
        TestSpec {
            test_id: test_id.into(),
            args,
            oracle_id: oracle_id.into(),
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    /// Same oracle and same arity.
    pub fn comparable_with(&self, other: &TestSpec) -> bool {
        self.oracle_id == other.oracle_id && self.args.len() == other.args.len()
    }

    /// Canonical JSON of the argument vector; the dedup identity of a spec.
    pub fn args_key(&self) -> String {
        serde_json::to_string(&self.args).expect("input values always serialize")
    }
}

/// Returns the spec unchanged if every invariant holds.
pub fn validate_spec(spec: TestSpec) -> Result<TestSpec> {
    if spec.args.is_empty() {
        return Err(Error::InvalidSpec("args: empty argument vector".into()));
    }
    for (i, arg) in spec.args.iter().enumerate() {
        arg.check(&format!("args[{i}]")).map_err(Error::InvalidSpec)?;
    }
    Ok(spec)
}

/// Result of one execution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail { message: String },
    Crash { message: String },
    Timeout,
}

impl Outcome {
    pub fn is_pass(&self) -> bool {
        matches!(self, Outcome::Pass)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail { .. } => "fail",
            Outcome::Crash { .. } => "crash",
            Outcome::Timeout => "timeout",
        }
    }

    pub fn message(&self) -> Option<&str> {
        match self {
            Outcome::Fail { message } | Outcome::Crash { message } => Some(message),
            _ => None,
        }
    }
}

/// Where a candidate came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum Provenance {
    /// The original failing test itself.
    Original,
    Fuzzed { mutator: String, round: u32 },
    SuiteReuse { test_id: String },
}

/// One execution of one test spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub spec: TestSpec,
    pub outcome: Outcome,
    pub trace: Option<Trace>,
    pub distance_to_original: f64,
    pub wall_time_ms: u64,
    pub provenance: Provenance,
    /// Position of the candidate in the generated stream; 0 for the original.
    pub generation: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

/// Knobs for one causal search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub target_passing: usize,
    pub max_candidates: usize,
    pub per_execution_timeout_ms: u64,
    pub total_budget_ms: u64,
    pub rng_seed: u64,
    pub parallelism: usize,
    pub report_k: usize,
    pub weights: Option<Vec<f64>>,
    /// Times each passing candidate is executed; any non-pass demotes it.
    pub repeat: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            target_passing: 3,
            max_candidates: 5000,
            per_execution_timeout_ms: 5000,
            total_budget_ms: 600_000,
            rng_seed: 0,
            parallelism: 1,
            report_k: 3,
            weights: None,
            repeat: 1,
        }
    }
}

impl SearchConfig {
    /// Checks the config against the arity of the original test.
    pub fn validate(&self, arity: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.target_passing < 1 {
            return bad("target_passing must be at least 1".into());
        }
        if self.report_k > self.target_passing {
            return bad(format!(
                "report_k ({}) must not exceed target_passing ({})",
                self.report_k, self.target_passing
            ));
        }
        if self.parallelism < 1 {
            return bad("parallelism must be at least 1".into());
        }
        if self.repeat < 1 {
            return bad("repeat must be at least 1".into());
        }
        if let Some(w) = &self.weights {
            if w.len() != arity {
                return bad(format!("weights has length {} but the test has {arity} arguments", w.len()));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return bad("weights must be finite and non-negative".into());
            }
            if w.iter().sum::<f64>() <= 0.0 {
                return bad("weights must have a positive sum".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(args: Vec<InputValue>) -> TestSpec {
        TestSpec::new("t", "hex-parse", args)
    }

    #[test]
    fn accepts_hex_scenario() {
        let s = spec(vec![InputValue::text("0Xfade")]);
        assert_eq!(validate_spec(s.clone()).unwrap(), s);
    }

    #[test]
    fn rejects_empty_args() {
        let err = validate_spec(spec(vec![])).unwrap_err();
        assert!(err.to_string().contains("empty argument vector"), "{err}");
    }

    #[test]
    fn rejects_nan_anywhere() {
        let err = validate_spec(spec(vec![InputValue::Real(f64::NAN)])).unwrap_err();
        assert!(err.to_string().contains("NaN not permitted"), "{err}");

        let nested = InputValue::Sequence(vec![InputValue::Integer(1), InputValue::Real(f64::NAN)]);
        let err = validate_spec(spec(vec![nested])).unwrap_err();
        assert!(err.to_string().contains("args[0][1]"), "{err}");
    }

    #[test]
    fn rejects_duplicate_fields() {
        let rec = InputValue::Record(vec![
            ("a".into(), InputValue::Integer(1)),
            ("a".into(), InputValue::Integer(2)),
        ]);
        let err = validate_spec(spec(vec![rec])).unwrap_err();
        assert!(err.to_string().contains("duplicate record field"), "{err}");
    }

    #[test]
    fn json_encoding_is_canonical() {
        let v = InputValue::Record(vec![
            ("z".into(), InputValue::Integer(3)),
            ("a".into(), InputValue::Real(1.5)),
            ("m".into(), InputValue::Sequence(vec![InputValue::Boolean(true), InputValue::text("x")])),
        ]);
        assert_eq!(v.canonical_json(), r#"{"z":3,"a":1.5,"m":[true,"x"]}"#);
        let back: InputValue = serde_json::from_str(&v.canonical_json()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn integral_reals_stay_real() {
        let v: InputValue = serde_json::from_str("2.0").unwrap();
        assert_eq!(v, InputValue::Real(2.0));
        assert_eq!(v.canonical_json(), "2.0");
        let n: InputValue = serde_json::from_str("2").unwrap();
        assert_eq!(n, InputValue::Integer(2));
    }

    #[test]
    fn decoding_rejects_out_of_range_null_and_duplicates() {
        assert!(serde_json::from_str::<InputValue>("18446744073709551615").is_err());
        assert!(serde_json::from_str::<InputValue>("null").is_err());
        assert!(serde_json::from_str::<InputValue>(r#"{"a":1,"a":2}"#).is_err());
    }

    #[test]
    fn config_validation() {
        let c = SearchConfig::default();
        c.validate(1).unwrap();
        assert!(SearchConfig { target_passing: 0, report_k: 0, ..c.clone() }.validate(1).is_err());
        assert!(SearchConfig { report_k: 4, ..c.clone() }.validate(1).is_err());
        assert!(SearchConfig { weights: Some(vec![1.0]), ..c.clone() }.validate(2).is_err());
        assert!(SearchConfig { weights: Some(vec![0.0, 0.0]), ..c.clone() }.validate(2).is_err());
        assert!(SearchConfig { weights: Some(vec![-1.0, 2.0]), ..c.clone() }.validate(2).is_err());
        SearchConfig { weights: Some(vec![0.0, 2.0]), ..c }.validate(2).unwrap();
    }
}
