//! Bundled example subjects, each served over the harness protocol by the
//! hidden `causa harness <name>` subcommand.

use std::io::{self, BufRead, Write};
use std::path::Path;

use causa_core::model::InputValue;
use causa_core::protocol::{Request, Response, RunRequest, WireOutcome};
use serde_json::{json, Value};

pub struct Fixture {
    pub name: &'static str,
    pub summary: &'static str,
    pub oracle: &'static str,
    pub original: fn() -> Vec<InputValue>,
    /// Materialized alongside the others, but excluded from `fixtures list`.
    pub faulty: bool,
    serve: fn(&RunRequest) -> Option<Response>,
}

pub const FIXTURES: &[Fixture] = &[
    Fixture {
        name: "hexparser",
        summary: "number parser that accepts the 0x hex prefix but not 0X",
        oracle: "hex-parse",
        original: || vec![InputValue::text("0Xfade")],
        faulty: false,
        serve: |r| Some(hex_parse(r)),
    },
    Fixture {
        name: "date-range",
        summary: "day-span routine that fails when its two days fall in different years",
        oracle: "date-range",
        original: || vec![InputValue::Integer(360), InputValue::Integer(370)],
        faulty: false,
        serve: |r| Some(date_range(r)),
    },
    Fixture {
        name: "off-by-one",
        summary: "table lookup whose bounds check admits one index too many",
        oracle: "lookup",
        original: || vec![InputValue::Integer(16)],
        faulty: false,
        serve: |r| Some(lookup(r)),
    },
    Fixture {
        name: "reject-all",
        summary: "oracle that rejects every input",
        oracle: "reject-all",
        original: || vec![InputValue::text("anything")],
        faulty: false,
        serve: |r| Some(Response::new(r.id, WireOutcome::Fail).with_message("rejected")),
    },
    Fixture {
        name: "malformed-json",
        summary: "harness that answers every request with invalid JSON",
        oracle: "hex-parse",
        original: || vec![InputValue::text("0Xfade")],
        faulty: true,
        serve: |_| None,
    },
    Fixture {
        name: "wrong-id",
        summary: "harness that answers with the wrong request id",
        oracle: "hex-parse",
        original: || vec![InputValue::text("0Xfade")],
        faulty: true,
        serve: |r| {
            let mut resp = hex_parse(r);
            resp.id = r.id + 1000;
            Some(resp)
        },
    },
    Fixture {
        name: "hexparser-glitchy",
        summary: "hex parser whose responses are garbled for some inputs",
        oracle: "hex-parse",
        original: || vec![InputValue::text("0Xfade")],
        faulty: true,
        serve: |r| match r.args.first() {
            Some(InputValue::Text(s)) if s.len() == 5 => None,
            Some(InputValue::Text(s)) if s.starts_with("0x") && s.ends_with('E') => {
                let mut resp = hex_parse(r);
                resp.id += 1;
                Some(resp)
            }
            _ => Some(hex_parse(r)),
        },
    },
    Fixture {
        name: "hexparser-slow",
        summary: "hex parser taking 50ms per request",
        oracle: "hex-parse",
        original: || vec![InputValue::text("0Xfade")],
        faulty: true,
        serve: |r| {
            std::thread::sleep(std::time::Duration::from_millis(50));
            Some(hex_parse(r))
        },
    },
];

pub fn find(name: &str) -> Option<&'static Fixture> {
    FIXTURES.iter().find(|f| f.name == name)
}

/// Serves `fixture` on stdin/stdout until shutdown or end of input.
pub fn serve(fixture: &Fixture) -> io::Result<()> {
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match Request::parse(&line) {
            Ok(Request::Shutdown) => return Ok(()),
            Ok(Request::Run(req)) if req.oracle != fixture.oracle => Response::new(req.id, WireOutcome::Crash)
                .with_message(format!("unknown oracle \"{}\"", req.oracle))
                .to_line(),
            Ok(Request::Run(req)) => match (fixture.serve)(&req) {
                Some(resp) => resp.to_line(),
                None => format!("{{\"id\":{},\"outcome\":", req.id),
            },
            Err(e) => {
                eprintln!("{}: {e}", fixture.name);
                continue;
            }
        };
        writeln!(out, "{reply}")?;
        out.flush()?;
    }
    Ok(())
}

/// Writes `<name>.json` manifests for every fixture into `dir`.
pub fn materialize(dir: &Path, exe: &Path) -> io::Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for f in FIXTURES {
        let manifest = json!({
            "harness": {
                "command": exe.to_string_lossy(),
                "args": ["harness", f.name],
            },
            "original": {
                "test_id": format!("{}-original", f.name),
                "oracle_id": f.oracle,
                "args": (f.original)(),
            },
            "config": {},
        });
        let path = dir.join(format!("{}.json", f.name));
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        written.push(path);
    }
    Ok(written)
}

fn text_arg(r: &RunRequest) -> Result<&str, Response> {
    match r.args.as_slice() {
        [InputValue::Text(s)] => Ok(s),
        _ => Err(Response::new(r.id, WireOutcome::Crash).with_message("expected one text argument")),
    }
}

fn int_args<const N: usize>(r: &RunRequest) -> Result<[i64; N], Response> {
    let ints: Vec<i64> = r
        .args
        .iter()
        .filter_map(|a| match a {
            InputValue::Integer(n) => Some(*n),
            _ => None,
        })
        .collect();
    ints.try_into()
        .map_err(|_| Response::new(r.id, WireOutcome::Crash).with_message(format!("expected {N} integer arguments")))
}

struct Tracer {
    events: Vec<Value>,
    depth: u32,
    caller: Vec<&'static str>,
}

impl Tracer {
    fn new() -> Self {
        Tracer { events: Vec::new(), depth: 0, caller: vec!["test"] }
    }

    /// Records entry into `method`; returns the event index for `ret`.
    fn enter(&mut self, method: &'static str, args: &[&str]) -> usize {
        self.events.push(json!({
            "method": method,
            "call_site": self.caller.last().copied().unwrap_or(""),
            "args": args,
            "depth": self.depth,
        }));
        self.caller.push(method);
        self.depth += 1;
        self.events.len() - 1
    }

    fn leave<T: ToString>(&mut self, idx: usize, ret: T) {
        self.events[idx]["return"] = Value::String(ret.to_string());
        self.caller.pop();
        self.depth -= 1;
    }

    fn leave_throwing(&mut self, idx: usize) {
        self.events[idx]["return"] = Value::String("throws NumberFormatException".into());
        self.caller.pop();
        self.depth -= 1;
    }
}

/// A createNumber-style parser with the 0X prefix bug.
fn hex_parse(r: &RunRequest) -> Response {
    let s = match text_arg(r) {
        Ok(s) => s,
        Err(resp) => return resp,
    };
    let mut t = Tracer::new();
    let outcome = create_number(&mut t, s);
    let resp = match outcome {
        Ok(_) => Response::new(r.id, WireOutcome::Pass),
        Err(()) => Response::new(r.id, WireOutcome::Fail).with_message(format!("{s} is not a valid number.")),
    };
    resp.with_trace(t.events)
}

fn create_number(t: &mut Tracer, s: &str) -> Result<String, ()> {
    let e = t.enter("createNumber", &[s]);
    let result = create_number_body(t, s);
    match &result {
        Ok(v) => t.leave(e, v),
        Err(()) => t.leave_throwing(e),
    }
    result
}

fn create_number_body(t: &mut Tracer, s: &str) -> Result<String, ()> {
    if s.is_empty() {
        return Err(());
    }
    let e = t.enter("startsWithHexPrefix", &[s]);
    let hex = s.starts_with("0x") || s.starts_with("-0x");
    t.leave(e, hex);
    if hex {
        return create_integer(t, s);
    }
    let e = t.enter("lastChar", &[s]);
    let last = s.chars().last().expect("non-empty");
    t.leave(e, last);
    let body = &s[..s.len() - last.len_utf8()];
    match last {
        'l' | 'L' => create_long(t, body),
        'f' | 'F' | 'd' | 'D' => create_double(t, body),
        _ => create_integer(t, s),
    }
}

fn create_integer(t: &mut Tracer, s: &str) -> Result<String, ()> {
    let e = t.enter("createInteger", &[s]);
    let (negative, rest) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let result = match rest.strip_prefix("0x") {
        Some(digits) => {
            let d = t.enter("decodeHex", &[digits]);
            let v = if !digits.is_empty() && digits.len() <= 15 {
                i64::from_str_radix(digits, 16).ok().filter(|_| digits.chars().all(|c| c.is_ascii_hexdigit()))
            } else {
                None
            };
            match v {
                Some(v) => {
                    let v = if negative { -v } else { v };
                    t.leave(d, v);
                    Ok(v.to_string())
                }
                None => {
                    t.leave_throwing(d);
                    Err(())
                }
            }
        }
        None => parse_decimal(t, s),
    };
    match &result {
        Ok(v) => t.leave(e, v),
        Err(()) => t.leave_throwing(e),
    }
    result
}

fn create_long(t: &mut Tracer, s: &str) -> Result<String, ()> {
    let e = t.enter("createLong", &[s]);
    let result = parse_decimal(t, s);
    match &result {
        Ok(v) => t.leave(e, v),
        Err(()) => t.leave_throwing(e),
    }
    result
}

fn parse_decimal(t: &mut Tracer, s: &str) -> Result<String, ()> {
    let e = t.enter("parseDecimal", &[s]);
    let digits = s.strip_prefix('-').unwrap_or(s);
    if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
        if let Ok(v) = s.parse::<i64>() {
            t.leave(e, v);
            return Ok(v.to_string());
        }
    }
    t.leave_throwing(e);
    Err(())
}

fn create_double(t: &mut Tracer, s: &str) -> Result<String, ()> {
    let e = t.enter("createDouble", &[s]);
    let well_formed = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | 'e' | 'E' | '+'))
        && s.chars().any(|c| c.is_ascii_digit());
    match s.parse::<f64>().ok().filter(|v| well_formed && v.is_finite()) {
        Some(v) => {
            t.leave(e, v);
            Ok(v.to_string())
        }
        None => {
            t.leave_throwing(e);
            Err(())
        }
    }
}

const DAYS_PER_YEAR: i64 = 365;

/// Number of days between two day numbers, computed per year; the
/// cross-year case is not handled.
fn date_range(r: &RunRequest) -> Response {
    let [start, end] = match int_args::<2>(r) {
        Ok(v) => v,
        Err(resp) => return resp,
    };
    let mut t = Tracer::new();
    let e = t.enter("daySpan", &[&start.to_string(), &end.to_string()]);
    let y = t.enter("yearOf", &[&start.to_string()]);
    let year_start = start.div_euclid(DAYS_PER_YEAR);
    t.leave(y, year_start);
    let y = t.enter("yearOf", &[&end.to_string()]);
    let year_end = end.div_euclid(DAYS_PER_YEAR);
    t.leave(y, year_end);
    if year_start != year_end {
        let m = t.enter("mapToCalendar", &[&year_start.to_string(), &year_end.to_string()]);
        t.leave(m, "mismatch");
        t.leave(e, "error");
        return Response::new(r.id, WireOutcome::Fail)
            .with_message(format!("days {start} and {end} map to different years"))
            .with_trace(t.events);
    }
    let span = (end - start).unsigned_abs();
    t.leave(e, span);
    Response::new(r.id, WireOutcome::Pass).with_trace(t.events)
}

const TABLE_LEN: i64 = 16;

/// Looks up an index in a 16-entry table; the bounds check uses `<=`.
fn lookup(r: &RunRequest) -> Response {
    let [index] = match int_args::<1>(r) {
        Ok(v) => v,
        Err(resp) => return resp,
    };
    let mut t = Tracer::new();
    let e = t.enter("lookup", &[&index.to_string()]);
    let c = t.enter("inBounds", &[&index.to_string()]);
    let admitted = (0..=TABLE_LEN).contains(&index);
    t.leave(c, admitted);
    if !admitted {
        t.leave(e, "rejected");
        return Response::new(r.id, WireOutcome::Pass).with_trace(t.events);
    }
    if index == TABLE_LEN {
        let a = t.enter("readSlot", &[&index.to_string()]);
        t.leave(a, "out of bounds");
        t.leave(e, "panic");
        return Response::new(r.id, WireOutcome::Fail)
            .with_message(format!("index {index} out of bounds for length {TABLE_LEN}"))
            .with_trace(t.events);
    }
    let a = t.enter("readSlot", &[&index.to_string()]);
    t.leave(a, index * index);
    t.leave(e, index * index);
    Response::new(r.id, WireOutcome::Pass).with_trace(t.events)
}
