//! Transports that carry run requests to a subject harness.
//!
//! A [`HarnessHandle`] describes how to reach a harness; [`HarnessHandle::connect`]
//! yields a [`HarnessSession`] owned by exactly one worker. Every failure mode
//! of a single exchange (timeout, exit, garbage on stdout, wrong id) becomes an
//! [`Outcome`] so a search never aborts on a misbehaving harness.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{InputValue, Outcome, TestSpec};
use crate::protocol::{Request, Response, RunRequest, WireOutcome, PROTOCOL_VERSION};
use crate::trace::{parse_trace_events, Trace};

pub type InProcessFn = Arc<dyn Fn(&RunRequest) -> Response + Send + Sync>;

#[derive(Clone)]
pub enum Transport {
    Subprocess {
        command: String,
        args: Vec<String>,
        env: Vec<(String, String)>,
    },
    InProcess(InProcessFn),
    /// Answers from a recorded transcript instead of a live harness.
    Replay(Arc<Transcript>),
}

impl std::fmt::Debug for Transport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Transport::Subprocess { command, args, .. } => {
                f.debug_struct("Subprocess").field("command", command).field("args", args).finish()
            }
            Transport::InProcess(_) => f.write_str("InProcess"),
            Transport::Replay(t) => write!(f, "Replay({} entries)", t.entries.len()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HarnessHandle {
    pub transport: Transport,
    pub protocol_version: u32,
    recorder: Option<Arc<Mutex<Vec<TranscriptEntry>>>>,
}

impl HarnessHandle {
    pub fn subprocess(command: impl Into<String>, args: Vec<String>) -> Self {
        Self::from_transport(Transport::Subprocess { command: command.into(), args, env: Vec::new() })
    }

    pub fn in_process<F>(f: F) -> Self
    where
        F: Fn(&RunRequest) -> Response + Send + Sync + 'static,
    {
        Self::from_transport(Transport::InProcess(Arc::new(f)))
    }

    pub fn replay(transcript: Transcript) -> Self {
        Self::from_transport(Transport::Replay(Arc::new(transcript)))
    }

    pub fn from_transport(transport: Transport) -> Self {
        HarnessHandle { transport, protocol_version: PROTOCOL_VERSION, recorder: None }
    }

    pub fn with_env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        if let Transport::Subprocess { env, .. } = &mut self.transport {
            env.push((key.into(), value.into()));
        }
        self
    }

    /// Records every exchange of every session made from this handle.
    pub fn recording(mut self) -> (Self, TranscriptRecorder) {
        let log = Arc::new(Mutex::new(Vec::new()));
        self.recorder = Some(log.clone());
        (self, TranscriptRecorder { log })
    }

    pub fn connect(&self) -> Result<HarnessSession> {
        let channel: Box<dyn Channel> = match &self.transport {
            Transport::Subprocess { command, args, env } => {
                Box::new(SubprocessChannel::spawn(command, args, env)?)
            }
            Transport::InProcess(f) => Box::new(InProcessChannel { f: f.clone() }),
            Transport::Replay(t) => Box::new(ReplayChannel::new(t.clone())),
        };
        Ok(HarnessSession { channel, next_id: 1, recorder: self.recorder.clone() })
    }
}

/// What came back for one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "kebab-case")]
pub enum Exchange {
    Line { line: String },
    TimedOut,
    Closed { reason: String },
}

trait Channel: Send {
    fn exchange(&mut self, req: &RunRequest, timeout: Duration) -> Exchange;
    /// Stderr and other diagnostics gathered since the last call.
    fn take_diagnostics(&mut self) -> Vec<String>;
    fn shutdown(&mut self);
    /// Replays report the recorded duration instead of the measured one.
    fn recorded_wall_time(&mut self) -> Option<u64> {
        None
    }
}

/// Outcome, trace and diagnostics of one exchange, before distance bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub outcome: Outcome,
    pub trace: Option<Trace>,
    pub wall_time_ms: u64,
    pub diagnostics: Vec<String>,
}

/// A live connection owned by one worker.
pub struct HarnessSession {
    channel: Box<dyn Channel>,
    next_id: u64,
    recorder: Option<Arc<Mutex<Vec<TranscriptEntry>>>>,
}

impl HarnessSession {
    /// Sends one run request and interprets whatever comes back.
    pub fn execute(&mut self, spec: &TestSpec, timeout: Duration) -> Execution {
        let id = self.next_id;
        self.next_id += 1;
        let request = RunRequest::new(id, spec.oracle_id.clone(), spec.args.clone());
        let start = Instant::now();
        let exchange = self.channel.exchange(&request, timeout);
        let measured = start.elapsed().as_millis() as u64;
        let wall_time_ms = self.channel.recorded_wall_time().unwrap_or(measured);
        let mut diagnostics = self.channel.take_diagnostics();

        if let Some(log) = &self.recorder {
            log.lock().expect("recorder lock").push(TranscriptEntry {
                oracle: request.oracle.clone(),
                args: request.args.clone(),
                request_id: id,
                exchange: exchange.clone(),
                wall_time_ms,
                diagnostics: diagnostics.clone(),
            });
        }

        let (outcome, trace) = interpret(id, exchange, &mut diagnostics);
        Execution { outcome, trace, wall_time_ms, diagnostics }
    }

    pub fn shutdown(mut self) {
        self.channel.shutdown();
    }
}

fn interpret(id: u64, exchange: Exchange, diagnostics: &mut Vec<String>) -> (Outcome, Option<Trace>) {
    let line = match exchange {
        Exchange::TimedOut => return (Outcome::Timeout, None),
        Exchange::Closed { reason } => return (Outcome::Crash { message: reason }, None),
        Exchange::Line { line } => line,
    };
    let response: Response = match serde_json::from_str(line.trim()) {
        Ok(r) => r,
        Err(e) => {
            let message = format!("malformed harness response ({e}): {}", clip(&line));
            return (Outcome::Crash { message }, None);
        }
    };
    if response.id != id {
        let message = format!("response id {} does not match request id {id}", response.id);
        return (Outcome::Crash { message }, None);
    }
    let trace = response.trace.as_deref().map(|raw| {
        let (trace, warnings) = parse_trace_events(raw);
        diagnostics.extend(warnings);
        trace
    });
    let message = response.message.unwrap_or_default();
    let outcome = match response.outcome {
        WireOutcome::Pass => Outcome::Pass,
        WireOutcome::Fail => Outcome::Fail { message },
        WireOutcome::Crash => Outcome::Crash { message },
    };
    (outcome, trace)
}

fn clip(s: &str) -> String {
    const MAX: usize = 200;
    let s = s.trim_end();
    if s.chars().count() <= MAX {
        s.to_owned()
    } else {
        format!("{}...", s.chars().take(MAX).collect::<String>())
    }
}

struct SubprocessChannel {
    command: String,
    args: Vec<String>,
    env: Vec<(String, String)>,
    live: Option<LiveChild>,
    diagnostics: Vec<String>,
}

struct LiveChild {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
    stderr: Arc<Mutex<String>>,
}

impl SubprocessChannel {
    fn spawn(command: &str, args: &[String], env: &[(String, String)]) -> Result<Self> {
        let mut channel = SubprocessChannel {
            command: command.to_owned(),
            args: args.to_vec(),
            env: env.to_vec(),
            live: None,
            diagnostics: Vec::new(),
        };
        channel.live = Some(channel.start().map_err(|e| Error::HarnessDead(format!("{command}: {e}")))?);
        Ok(channel)
    }

    fn start(&self) -> std::io::Result<LiveChild> {
        let mut child = Command::new(&self.command)
            .args(&self.args)
            .envs(self.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut stderr_pipe = child.stderr.take().expect("piped stderr");

        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut buf = String::new();
                match reader.read_line(&mut buf) {
                    Ok(0) | Err(_) => break,
                    Ok(_) => {
                        if tx.send(buf).is_err() {
                            break;
                        }
                    }
                }
            }
        });
        let stderr = Arc::new(Mutex::new(String::new()));
        let sink = stderr.clone();
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = stderr_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                sink.lock().expect("stderr lock").push_str(&String::from_utf8_lossy(&buf[..n]));
            }
        });
        Ok(LiveChild { child, stdin, lines, stderr })
    }

    fn kill(&mut self) {
        if let Some(mut live) = self.live.take() {
            let _ = live.child.kill();
            let _ = live.child.wait();
            self.collect_stderr_from(&live);
        }
    }

    fn collect_stderr_from(&mut self, live: &LiveChild) {
        // Give the stderr thread a moment to drain what the child wrote.
        thread::sleep(Duration::from_millis(5));
        let text = std::mem::take(&mut *live.stderr.lock().expect("stderr lock"));
        if !text.is_empty() {
            self.diagnostics.push(format!("stderr: {text}"));
        }
    }

    fn exit_reason(live: &mut LiveChild) -> String {
        for _ in 0..50 {
            if let Ok(Some(status)) = live.child.try_wait() {
                return format!("harness exited ({status})");
            }
            thread::sleep(Duration::from_millis(2));
        }
        "harness closed its stdout".into()
    }
}

impl Channel for SubprocessChannel {
    fn exchange(&mut self, req: &RunRequest, timeout: Duration) -> Exchange {
        if self.live.is_none() {
            match self.start() {
                Ok(live) => self.live = Some(live),
                Err(e) => return Exchange::Closed { reason: format!("harness restart failed: {e}") },
            }
        }
        let live = self.live.as_mut().expect("live child");
        let stray: Vec<String> = live.lines.try_iter().collect();
        for line in stray {
            self.diagnostics.push(format!("unsolicited harness output: {}", clip(&line)));
        }
        let live = self.live.as_mut().expect("live child");
        let line = Request::Run(req.clone()).to_line();
        let write = live
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| live.stdin.write_all(b"\n"))
            .and_then(|_| live.stdin.flush());
        if let Err(e) = write {
            let reason = format!("harness stdin closed: {e}");
            self.kill();
            return Exchange::Closed { reason };
        }
        match live.lines.recv_timeout(timeout) {
            Ok(line) => Exchange::Line { line },
            Err(RecvTimeoutError::Timeout) => {
                self.kill();
                Exchange::TimedOut
            }
            Err(RecvTimeoutError::Disconnected) => {
                let reason = Self::exit_reason(live);
                self.kill();
                Exchange::Closed { reason }
            }
        }
    }

    fn take_diagnostics(&mut self) -> Vec<String> {
        if let Some(live) = &self.live {
            let text = std::mem::take(&mut *live.stderr.lock().expect("stderr lock"));
            if !text.is_empty() {
                self.diagnostics.push(format!("stderr: {text}"));
            }
        }
        std::mem::take(&mut self.diagnostics)
    }

    fn shutdown(&mut self) {
        if let Some(mut live) = self.live.take() {
            let _ = live.stdin.write_all(Request::Shutdown.to_line().as_bytes());
            let _ = live.stdin.write_all(b"\n");
            let _ = live.stdin.flush();
            drop(live.stdin);
            let deadline = Instant::now() + Duration::from_secs(2);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = live.child.try_wait() {
                    return;
                }
                thread::sleep(Duration::from_millis(5));
            }
            let _ = live.child.kill();
            let _ = live.child.wait();
        }
    }
}

impl Drop for SubprocessChannel {
    fn drop(&mut self) {
        if let Some(mut live) = self.live.take() {
            let _ = live.child.kill();
            let _ = live.child.wait();
        }
    }
}

struct InProcessChannel {
    f: InProcessFn,
}

impl Channel for InProcessChannel {
    fn exchange(&mut self, req: &RunRequest, timeout: Duration) -> Exchange {
        let (tx, rx) = mpsc::channel();
        let f = self.f.clone();
        let req = req.clone();
        // A callback that never returns is abandoned with its thread.
        thread::spawn(move || {
            let _ = tx.send(f(&req).to_line());
        });
        match rx.recv_timeout(timeout) {
            Ok(line) => Exchange::Line { line },
            Err(RecvTimeoutError::Timeout) => Exchange::TimedOut,
            Err(RecvTimeoutError::Disconnected) => {
                Exchange::Closed { reason: "in-process harness panicked".into() }
            }
        }
    }

    fn take_diagnostics(&mut self) -> Vec<String> {
        Vec::new()
    }

    fn shutdown(&mut self) {}
}

/// One recorded exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub oracle: String,
    pub args: Vec<InputValue>,
    pub request_id: u64,
    pub exchange: Exchange,
    pub wall_time_ms: u64,
    #[serde(default)]
    pub diagnostics: Vec<String>,
}

/// Recorded exchanges, stored as JSON lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for entry in &self.entries {
            out.push_str(&serde_json::to_string(entry).expect("transcript entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let entries = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Transcript { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

/// Collects exchanges from sessions of a recording handle.
#[derive(Clone)]
pub struct TranscriptRecorder {
    log: Arc<Mutex<Vec<TranscriptEntry>>>,
}

impl TranscriptRecorder {
    pub fn snapshot(&self) -> Transcript {
        Transcript { entries: self.log.lock().expect("recorder lock").clone() }
    }
}

fn replay_key(oracle: &str, args: &[InputValue]) -> String {
    format!("{oracle}\u{0}{}", serde_json::to_string(args).expect("input values serialize"))
}

struct ReplayChannel {
    queues: HashMap<String, VecDeque<TranscriptEntry>>,
    last: HashMap<String, TranscriptEntry>,
    pending_wall_time: Option<u64>,
    pending_diagnostics: Vec<String>,
}

impl ReplayChannel {
    fn new(transcript: Arc<Transcript>) -> Self {
        let mut queues: HashMap<String, VecDeque<TranscriptEntry>> = HashMap::new();
        for entry in &transcript.entries {
            queues.entry(replay_key(&entry.oracle, &entry.args)).or_default().push_back(entry.clone());
        }
        ReplayChannel { queues, last: HashMap::new(), pending_wall_time: None, pending_diagnostics: Vec::new() }
    }
}

impl Channel for ReplayChannel {
    fn exchange(&mut self, req: &RunRequest, _timeout: Duration) -> Exchange {
        let key = replay_key(&req.oracle, &req.args);
        let entry = match self.queues.get_mut(&key).and_then(VecDeque::pop_front) {
            Some(entry) => {
                self.last.insert(key, entry.clone());
                entry
            }
            None => match self.last.get(&key) {
                Some(entry) => entry.clone(),
                None => {
                    self.pending_wall_time = Some(0);
                    return Exchange::Closed { reason: "request not present in transcript".into() };
                }
            },
        };
        self.pending_wall_time = Some(entry.wall_time_ms);
        self.pending_diagnostics = entry.diagnostics.clone();
        match entry.exchange {
            Exchange::Line { line } => {
                // Re-address a correctly addressed response to the current id.
                let rewritten = serde_json::from_str::<Value>(&line).ok().and_then(|mut v| {
                    let matches = v.get("id").and_then(Value::as_u64) == Some(entry.request_id);
                    matches.then(|| {
                        v["id"] = Value::from(req.id);
                        v.to_string()
                    })
                });
                Exchange::Line { line: rewritten.unwrap_or(line) }
            }
            other => other,
        }
    }

    fn take_diagnostics(&mut self) -> Vec<String> {
        std::mem::take(&mut self.pending_diagnostics)
    }

    fn shutdown(&mut self) {}

    fn recorded_wall_time(&mut self) -> Option<u64> {
        self.pending_wall_time.take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::WireOutcome;

    fn spec(s: &str) -> TestSpec {
        TestSpec::new("t", "o", vec![InputValue::text(s)])
    }

    fn sh(script: &str) -> HarnessHandle {
        HarnessHandle::subprocess("sh", vec!["-c".into(), script.into()])
    }

    #[test]
    fn in_process_pass_and_fail() {
        let h = HarnessHandle::in_process(|req| {
            let outcome = if req.args[0] == InputValue::text("ok") { WireOutcome::Pass } else { WireOutcome::Fail };
            Response::new(req.id, outcome).with_message("checked")
        });
        let mut s = h.connect().unwrap();
        assert_eq!(s.execute(&spec("ok"), Duration::from_secs(1)).outcome, Outcome::Pass);
        assert_eq!(
            s.execute(&spec("no"), Duration::from_secs(1)).outcome,
            Outcome::Fail { message: "checked".into() }
        );
    }

    #[test]
    fn in_process_timeout() {
        let h = HarnessHandle::in_process(|req| {
            thread::sleep(Duration::from_secs(3600));
            Response::new(req.id, WireOutcome::Pass)
        });
        let mut s = h.connect().unwrap();
        let start = Instant::now();
        assert_eq!(s.execute(&spec("x"), Duration::from_millis(100)).outcome, Outcome::Timeout);
        assert!(start.elapsed() < Duration::from_secs(2));
    }

    #[test]
    fn subprocess_sleeping_forever_times_out() {
        let mut s = sh("sleep 1000").connect().unwrap();
        let start = Instant::now();
        assert_eq!(s.execute(&spec("x"), Duration::from_millis(100)).outcome, Outcome::Timeout);
        assert!(start.elapsed() < Duration::from_secs(3));
    }

    #[test]
    fn subprocess_garbage_and_wrong_id_become_crashes() {
        let mut s = sh("while read l; do echo 'not json'; done").connect().unwrap();
        let e = s.execute(&spec("x"), Duration::from_secs(5));
        assert!(matches!(&e.outcome, Outcome::Crash { message } if message.contains("malformed")), "{e:?}");

        let mut s = sh(r#"while read l; do echo '{"id":999,"outcome":"pass"}'; done"#).connect().unwrap();
        let e = s.execute(&spec("x"), Duration::from_secs(5));
        assert!(matches!(&e.outcome, Outcome::Crash { message } if message.contains("does not match")), "{e:?}");
        // The session stays usable afterwards.
        let e = s.execute(&spec("y"), Duration::from_secs(5));
        assert!(matches!(e.outcome, Outcome::Crash { .. }));
    }

    #[test]
    fn subprocess_exit_is_a_crash_and_restarts() {
        let mut s = sh("echo dying >&2; exit 3").connect().unwrap();
        let e = s.execute(&spec("x"), Duration::from_secs(5));
        assert!(matches!(e.outcome, Outcome::Crash { .. }), "{e:?}");
        // A second request respawns the harness rather than failing permanently.
        let e = s.execute(&spec("x"), Duration::from_secs(5));
        assert!(matches!(e.outcome, Outcome::Crash { .. }));
    }

    #[test]
    fn subprocess_stderr_is_captured() {
        let script = r#"while read l; do echo "note" >&2; echo '{"id":1,"outcome":"pass"}'; done"#;
        let mut s = sh(script).connect().unwrap();
        let e = s.execute(&spec("x"), Duration::from_secs(5));
        thread::sleep(Duration::from_millis(50));
        let later = s.execute(&spec("x"), Duration::from_secs(5));
        let all: Vec<String> = e.diagnostics.into_iter().chain(later.diagnostics).collect();
        assert!(all.iter().any(|d| d.contains("note")), "{all:?}");
    }

    #[test]
    fn missing_binary_is_harness_dead() {
        let h = HarnessHandle::subprocess("/nonexistent/harness-binary", vec![]);
        assert!(matches!(h.connect(), Err(Error::HarnessDead(_))));
    }

    #[test]
    fn replay_reproduces_recorded_exchanges() {
        let live = HarnessHandle::in_process(|req| {
            let outcome = if req.args[0] == InputValue::text("ok") { WireOutcome::Pass } else { WireOutcome::Fail };
            Response::new(req.id, outcome)
        });
        let (live, recorder) = live.recording();
        let mut s = live.connect().unwrap();
        let a = s.execute(&spec("ok"), Duration::from_secs(1));
        let b = s.execute(&spec("no"), Duration::from_secs(1));
        let transcript = Transcript::from_jsonl(&recorder.snapshot().to_jsonl()).unwrap();
        assert_eq!(transcript.entries.len(), 2);

        let mut r = HarnessHandle::replay(transcript).connect().unwrap();
        // Different order and therefore different request ids.
        let b2 = r.execute(&spec("no"), Duration::from_secs(1));
        let a2 = r.execute(&spec("ok"), Duration::from_secs(1));
        assert_eq!(a2.outcome, a.outcome);
        assert_eq!(b2.outcome, b.outcome);
        assert_eq!(a2.wall_time_ms, a.wall_time_ms);
        let missing = r.execute(&spec("never"), Duration::from_secs(1));
        assert!(matches!(missing.outcome, Outcome::Crash { .. }));
    }
}
