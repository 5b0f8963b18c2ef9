//! Harness wire protocol: newline-delimited JSON over the harness's stdin
//! and stdout, one object per line.
//!
//! ```text
//! engine -> harness  {"id":1,"op":"run","oracle":"hex-parse","args":["0Xfade"]}
//! harness -> engine  {"id":1,"outcome":"fail","message":"...","trace":[...]}
//! engine -> harness  {"op":"shutdown"}
//! ```

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::InputValue;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRequest {
    pub id: u64,
    pub op: String,
    pub oracle: String,
    pub args: Vec<InputValue>,
}

impl RunRequest {
    pub fn new(id: u64, oracle: impl Into<String>, args: Vec<InputValue>) -> Self {
        RunRequest { id, op: "run".into(), oracle: oracle.into(), args }
    }
}

/// A request as seen by a harness.
#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Run(RunRequest),
    Shutdown,
}

impl Request {
    pub fn parse(line: &str) -> Result<Request, String> {
        let value: Value = serde_json::from_str(line).map_err(|e| format!("invalid JSON: {e}"))?;
        match value.get("op").and_then(Value::as_str) {
            Some("shutdown") => Ok(Request::Shutdown),
            Some("run") => serde_json::from_value(value)
                .map(Request::Run)
                .map_err(|e| format!("invalid run request: {e}")),
            Some(other) => Err(format!("unknown op \"{other}\"")),
            None => Err("missing op".into()),
        }
    }

    pub fn to_line(&self) -> String {
        match self {
            Request::Run(run) => serde_json::to_string(run).expect("requests serialize"),
            Request::Shutdown => r#"{"op":"shutdown"}"#.to_owned(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WireOutcome {
    Pass,
    Fail,
    Crash,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    pub outcome: WireOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<Value>>,
}

impl Response {
    pub fn new(id: u64, outcome: WireOutcome) -> Self {
        Response { id, outcome, message: None, trace: None }
    }

    pub fn with_message(mut self, message: impl Into<String>) -> Self {
        self.message = Some(message.into());
        self
    }

    pub fn with_trace(mut self, trace: Vec<Value>) -> Self {
        self.trace = Some(trace);
        self
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("responses serialize")
    }
}
