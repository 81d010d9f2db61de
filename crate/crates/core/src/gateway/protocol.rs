//! Worker wire protocol: NDJSON over the worker's stdin/stdout.
//!
//! ```text
//! worker  -> {"v":1,"hello":"runner"}
//! gateway -> {"v":1,"req":"r1","op":"validate","source":"..."}
//! worker  -> {"v":1,"req":"r1","ok":true,"specs":[...]}
//! gateway -> {"v":1,"req":"r2","op":"execute","source":"...","items":[...],"timeout_ms":2000}
//! worker  -> {"v":1,"req":"r2","ok":true,"verdicts":[...]}
//! ```

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::bundle::{LintFinding, VerifierSpec};
use crate::dataset::Label;

pub const PROTOCOL_VERSION: u32 = 1;
pub const HELLO_ROLE: &str = "runner";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Validate,
    Execute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireItem {
    pub id: String,
    pub x: String,
    pub y: String,
    pub context: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub v: u32,
    pub req: String,
    pub op: Op,
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<WireItem>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_ms: Option<u64>,
}

impl Request {
    pub fn validate(req: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            req: req.into(),
            op: Op::Validate,
            source: source.into(),
            items: None,
            timeout_ms: None,
        }
    }

    pub fn execute(req: impl Into<String>, source: impl Into<String>, items: Vec<WireItem>, timeout_ms: u64) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            req: req.into(),
            op: Op::Execute,
            source: source.into(),
            items: Some(items),
            timeout_ms: Some(timeout_ms),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("requests serialize")
    }
}

/// Outcome of one verifier call: `true`, `false`, or the string `"error"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Pass,
    Fail,
    Error,
}

impl Check {
    /// Value the aggregate sees: errors count as false.
    pub fn as_bool(self) -> bool {
        self == Check::Pass
    }
}

impl Serialize for Check {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Check::Pass => s.serialize_bool(true),
            Check::Fail => s.serialize_bool(false),
            Check::Error => s.serialize_str("error"),
        }
    }
}

impl<'de> Deserialize<'de> for Check {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::Bool(true) => Ok(Check::Pass),
            Value::Bool(false) => Ok(Check::Fail),
            Value::String(s) if s == "error" => Ok(Check::Error),
            other => Err(de::Error::custom(format!("invalid check value {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Exception,
    Timeout,
    Contract,
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ErrorKind::Exception => "exception",
            ErrorKind::Timeout => "timeout",
            ErrorKind::Contract => "contract",
        })
    }
}

pub const AGGREGATE_SITE: &str = "aggregate";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictError {
    /// Verifier name, or `"aggregate"`.
    #[serde(rename = "where")]
    pub site: String,
    pub kind: ErrorKind,
    pub message: String,
}

/// Result of running one bundle on one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleVerdict {
    #[serde(rename = "id")]
    pub example_id: String,
    pub checks: BTreeMap<String, Check>,
    pub prediction: Label,
    #[serde(default)]
    pub errors: Vec<VerdictError>,
}

impl ExampleVerdict {
    /// True when the aggregate raised or timed out. A contract warning at
    /// the aggregate (non-bool return) does not count.
    pub fn aggregate_failed(&self) -> bool {
        self.errors
            .iter()
            .any(|e| e.site == AGGREGATE_SITE && e.kind != ErrorKind::Contract)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct Hello {
    pub v: u32,
    pub hello: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub v: u32,
    pub req: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specs: Option<Vec<VerifierSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violations: Option<Vec<LintFinding>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdicts: Option<Vec<ExampleVerdict>>,
    /// Request-level failure (malformed request, unsupported op).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Reply {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("replies serialize")
    }
}

pub fn parse_hello(line: &str) -> Result<Hello, serde_json::Error> {
    serde_json::from_str(line)
}

pub fn parse_reply(line: &str) -> Result<Reply, serde_json::Error> {
    serde_json::from_str(line)
}

pub fn parse_request(line: &str) -> Result<Request, serde_json::Error> {
    serde_json::from_str(line)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn validate_request_line() {
        let line = Request::validate("r1", "A = 1\n").to_line();
        assert_eq!(line, r#"{"v":1,"req":"r1","op":"validate","source":"A = 1\n"}"#);
    }

    #[test]
    fn execute_request_line() {
        let mut ctx = Map::new();
        ctx.insert("final_answer".into(), json!("42"));
        let item = WireItem {
            id: "e1".into(),
            x: "q".into(),
            y: "a".into(),
            context: ctx,
        };
        let line = Request::execute("r2", "src", vec![item], 2000).to_line();
        assert_eq!(
            line,
            r#"{"v":1,"req":"r2","op":"execute","source":"src","items":[{"id":"e1","x":"q","y":"a","context":{"final_answer":"42"}}],"timeout_ms":2000}"#
        );
    }

    #[test]
    fn execute_reply_parses() {
        let line = r#"{"v":1,"req":"r2","ok":true,"verdicts":[{"id":"e1","checks":{"a":true,"b":false,"c":"error"},"prediction":0,"errors":[{"where":"c","kind":"timeout","message":"exceeded 2000 ms"}]}]}"#;
        let reply = parse_reply(line).unwrap();
        let v = &reply.verdicts.as_ref().unwrap()[0];
        assert_eq!(v.checks["a"], Check::Pass);
        assert_eq!(v.checks["b"], Check::Fail);
        assert_eq!(v.checks["c"], Check::Error);
        assert_eq!(v.prediction, Label::Negative);
        assert_eq!(v.errors[0].kind, ErrorKind::Timeout);
        assert_eq!(reply.to_line(), line);
    }

    #[test]
    fn validate_replies_parse() {
        let ok = parse_reply(r#"{"v":1,"req":"r1","ok":true,"specs":[{"name":"n","description":"d","requires":["f"]}]}"#).unwrap();
        assert_eq!(ok.specs.unwrap()[0].requires, vec!["f"]);
        let bad = parse_reply(r#"{"v":1,"req":"r1","ok":false,"violations":[{"kind":"disallowed_import","detail":"os","line":3}]}"#).unwrap();
        let v = &bad.violations.unwrap()[0];
        assert_eq!(v.line, Some(3));
        assert_eq!(v.kind, crate::bundle::FindingKind::DisallowedImport);
    }

    #[test]
    fn rejects_bad_check_values_and_predictions() {
        assert!(parse_reply(r#"{"v":1,"req":"r","ok":true,"verdicts":[{"id":"e","checks":{"a":1},"prediction":0}]}"#).is_err());
        assert!(parse_reply(r#"{"v":1,"req":"r","ok":true,"verdicts":[{"id":"e","checks":{},"prediction":2}]}"#).is_err());
    }

    #[test]
    fn hello_line() {
        let h = parse_hello(r#"{"v":1,"hello":"runner"}"#).unwrap();
        assert_eq!((h.v, h.hello.as_str()), (1, "runner"));
    }
}
