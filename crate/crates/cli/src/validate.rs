//! Protocol conformance checks for `causa validate-harness`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::thread;
use std::time::{Duration, Instant};

use causa_core::model::TestSpec;
use causa_core::protocol::{Request, Response, RunRequest};
use causa_core::trace::parse_trace_events;
use serde_json::Value;

use crate::manifest::HarnessSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: String,
    pub ok: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct Conformance {
    pub checks: Vec<Check>,
}

impl Conformance {
    pub fn conformant(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.ok)
    }

    fn record(&mut self, name: &str, ok: bool, detail: impl Into<String>) -> bool {
        self.checks.push(Check { name: name.to_owned(), ok, detail: detail.into() });
        ok
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.ok { "PASS" } else { "FAIL" };
            if c.detail.is_empty() {
                out.push_str(&format!("{status} {}\n", c.name));
            } else {
                out.push_str(&format!("{status} {}: {}\n", c.name, c.detail));
            }
        }
        let verdict = if self.conformant() { "conformant" } else { "non-conformant" };
        out.push_str(&format!("harness is {verdict}\n"));
        out
    }
}

struct Live {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
}

impl Live {
    fn spawn(h: &HarnessSpec) -> std::io::Result<Live> {
        let mut child = Command::new(&h.command)
            .args(&h.args)
            .envs(&h.env)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Live { stdin: child.stdin.take(), child, lines })
    }

    fn send(&mut self, line: &str) -> std::io::Result<()> {
        let stdin = self.stdin.as_mut().ok_or(std::io::ErrorKind::BrokenPipe)?;
        writeln!(stdin, "{line}")?;
        stdin.flush()
    }

    fn receive(&self, timeout: Duration) -> Option<String> {
        self.lines.recv_timeout(timeout).ok()
    }
}

/// Sends a handshake run and an echo run of `probe`, then a shutdown, and
/// checks every response against the protocol.
pub fn validate(h: &HarnessSpec, probe: &TestSpec, timeout: Duration) -> Conformance {
    let mut c = Conformance::default();
    let mut live = match Live::spawn(h) {
        Ok(live) => live,
        Err(e) => {
            c.record("spawn", false, format!("{}: {e}", h.command));
            return c;
        }
    };
    c.record("spawn", true, "");

    let mut outcomes = Vec::new();
    for (id, label) in [(1u64, "handshake"), (2, "echo")] {
        let req = Request::Run(RunRequest::new(id, probe.oracle_id.clone(), probe.args.clone()));
        if let Err(e) = live.send(&req.to_line()) {
            c.record(&format!("{label} request written"), false, e.to_string());
            break;
        }
        let Some(line) = live.receive(timeout) else {
            c.record(&format!("{label} response received"), false, format!("no response within {timeout:?}"));
            break;
        };
        let value: Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                c.record(&format!("{label} response is JSON"), false, format!("{e}: {}", clip(&line)));
                continue;
            }
        };
        c.record(&format!("{label} response is JSON"), true, "");
        let echoed = value.get("id").and_then(Value::as_u64);
        c.record(
            &format!("{label} id echoed"),
            echoed == Some(id),
            if echoed == Some(id) { String::new() } else { format!("sent {id}, got {}", value["id"]) },
        );
        match serde_json::from_value::<Response>(value.clone()) {
            Ok(resp) => {
                c.record(&format!("{label} outcome valid"), true, format!("{:?}", resp.outcome).to_lowercase());
                outcomes.push(resp.outcome);
                if let Some(raw) = &resp.trace {
                    let (_, warnings) = parse_trace_events(raw);
                    c.record(&format!("{label} trace well-formed"), warnings.is_empty(), warnings.join("; "));
                }
            }
            Err(e) => {
                c.record(&format!("{label} outcome valid"), false, e.to_string());
            }
        }
    }
    if outcomes.len() == 2 {
        c.record("echo outcome matches handshake", outcomes[0] == outcomes[1], "");
    }

    let _ = live.send(&Request::Shutdown.to_line());
    drop(live.stdin.take());
    let deadline = Instant::now() + Duration::from_secs(2);
    let exited = loop {
        match live.child.try_wait() {
            Ok(Some(_)) => break true,
            Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
            _ => break false,
        }
    };
    if !exited {
        let _ = live.child.kill();
        let _ = live.child.wait();
    }
    c.record("shutdown", exited, if exited { "" } else { "still running 2s after shutdown" });
    c
}

fn clip(s: &str) -> String {
    let mut out: String = s.chars().take(60).collect();
    if out.len() < s.len() {
        out.push_str("...");
    }
    out
}
