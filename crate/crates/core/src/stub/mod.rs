//! In-tree stub worker.
//!
//! Speaks the gateway's NDJSON protocol over stdin/stdout. Validation walks
//! the module's syntax tree; execution runs a small interpreter for the
//! verifier-language subset used by verifier modules. Test-only fault
//! directives in source comments let gateway tests provoke crashes, hangs
//! and malformed replies:
//!
//! ```text
//! # stub: crash              exit on execute
//! # stub: crash-on-item=ID   exit when item ID is reached
//! # stub: crash-validate     exit on validate
//! # stub: hang               never answer execute
//! # stub: garbage            answer execute with a non-JSON line
//! ```

pub mod ast;
mod builtins;
mod interp;
pub mod lexer;
pub mod parser;
pub mod validate;
mod value;

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::rc::Rc;
use std::time::{Duration, Instant};

use crate::bundle::VerifierSpec;
use crate::dataset::Label;
use crate::gateway::protocol::{
    parse_request, Check, ErrorKind, ExampleVerdict, Op, Reply, Request, VerdictError, WireItem, AGGREGATE_SITE,
    HELLO_ROLE, PROTOCOL_VERSION,
};

use interp::{Interp, Scope, Signal};
use value::{Dict, Value};

pub use validate::{validate_source, ValidationReport};

/// Overrides the protocol version announced in the handshake.
pub const VERSION_ENV: &str = "VERINDUCE_STUB_PROTOCOL_VERSION";
/// When set to 1, the module is reloaded for every example.
pub const PARANOID_ENV: &str = "VERINDUCE_STUB_PARANOID";

#[derive(Debug, Default, Clone, PartialEq, Eq)]
struct Directives {
    crash: bool,
    crash_on_item: Option<String>,
    crash_validate: bool,
    hang: bool,
    garbage: bool,
}

fn directives(source: &str) -> Directives {
    let mut d = Directives::default();
    for line in source.lines() {
        let Some(rest) = line.trim().strip_prefix("# stub:") else { continue };
        match rest.trim() {
            "crash" => d.crash = true,
            "crash-validate" => d.crash_validate = true,
            "hang" => d.hang = true,
            "garbage" => d.garbage = true,
            other => {
                if let Some(id) = other.strip_prefix("crash-on-item=") {
                    d.crash_on_item = Some(id.trim().to_string());
                }
            }
        }
    }
    d
}

#[derive(Debug, Clone)]
pub struct WorkerOptions {
    pub version: u32,
    pub paranoid: bool,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self {
            version: PROTOCOL_VERSION,
            paranoid: false,
        }
    }
}

impl WorkerOptions {
    pub fn from_env() -> Self {
        Self {
            version: std::env::var(VERSION_ENV)
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(PROTOCOL_VERSION),
            paranoid: std::env::var(PARANOID_ENV).map(|v| v == "1").unwrap_or(false),
        }
    }
}

/// Serves requests until EOF on `input`.
pub fn serve(input: impl BufRead, mut output: impl Write, opts: &WorkerOptions) -> io::Result<()> {
    writeln!(output, r#"{{"v":{},"hello":"{HELLO_ROLE}"}}"#, opts.version)?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match parse_request(&line) {
            Ok(req) => match handle(&req, opts) {
                Some(reply) => reply.to_line(),
                None => "this is not a protocol line".to_string(),
            },
            Err(e) => Reply {
                v: PROTOCOL_VERSION,
                req: serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("req").and_then(|r| r.as_str()).map(str::to_string))
                    .unwrap_or_default(),
                ok: false,
                specs: None,
                violations: None,
                verdicts: None,
                error: Some(format!("malformed request: {e}")),
            }
            .to_line(),
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}

fn reply(req: &Request) -> Reply {
    Reply {
        v: PROTOCOL_VERSION,
        req: req.req.clone(),
        ok: true,
        specs: None,
        violations: None,
        verdicts: None,
        error: None,
    }
}

/// `None` means "emit a garbage line".
fn handle(req: &Request, opts: &WorkerOptions) -> Option<Reply> {
    let faults = directives(&req.source);
    let report = validate_source(&req.source);
    match req.op {
        Op::Validate => {
            if faults.crash_validate {
                std::process::exit(70);
            }
            let mut r = reply(req);
            r.ok = report.ok;
            if report.ok {
                r.specs = Some(report.specs);
            } else {
                r.violations = Some(report.violations);
            }
            Some(r)
        }
        Op::Execute => {
            if faults.crash {
                std::process::exit(70);
            }
            if faults.hang {
                loop {
                    std::thread::sleep(Duration::from_secs(3600));
                }
            }
            if faults.garbage {
                return None;
            }
            let mut r = reply(req);
            if !report.ok {
                r.ok = false;
                r.error = Some(format!(
                    "bundle failed validation: {}",
                    report
                        .violations
                        .iter()
                        .map(ToString::to_string)
                        .collect::<Vec<_>>()
                        .join("; ")
                ));
                return Some(r);
            }
            let items = req.items.as_deref().unwrap_or(&[]);
            let timeout = Duration::from_millis(req.timeout_ms.unwrap_or(2000));
            let verdicts = execute(&req.source, &report.specs, items, timeout, opts.paranoid, |id| {
                if faults.crash_on_item.as_deref() == Some(id) {
                    std::process::exit(70);
                }
            });
            r.verdicts = Some(verdicts);
            Some(r)
        }
    }
}

struct Loaded {
    interp: Interp,
    globals: Rc<Scope>,
}

impl Drop for Loaded {
    fn drop(&mut self) {
        self.globals.clear();
    }
}

fn load(source: &str, timeout: Duration) -> Result<Loaded, (ErrorKind, String)> {
    let module = parser::parse_module(source).map_err(|e| (ErrorKind::Exception, format!("SyntaxError: {e}")))?;
    let mut interp = Interp::new();
    interp.deadline = Instant::now() + timeout;
    let globals = Rc::new(Scope::default());
    match interp.load_module(&module, &globals) {
        Ok(()) => Ok(Loaded { interp, globals }),
        Err(Signal::Timeout) => Err((ErrorKind::Timeout, format!("module load exceeded {} ms", timeout.as_millis()))),
        Err(Signal::Exc(e)) => Err((ErrorKind::Exception, format!("module load failed: {}: {}", e.kind, e.message))),
    }
}

/// Runs every verifier then the aggregate on each item, in item order.
pub fn execute(
    source: &str,
    specs: &[VerifierSpec],
    items: &[WireItem],
    timeout: Duration,
    paranoid: bool,
    mut on_item: impl FnMut(&str),
) -> Vec<ExampleVerdict> {
    let mut loaded = if paranoid { None } else { Some(load(source, timeout)) };
    items
        .iter()
        .map(|item| {
            on_item(&item.id);
            if paranoid {
                loaded = Some(load(source, timeout));
            }
            match loaded.as_mut().expect("module loaded") {
                Ok(m) => run_item(m, specs, item, timeout),
                Err((kind, message)) => failed_item(specs, item, *kind, message),
            }
        })
        .collect()
}

fn failed_item(specs: &[VerifierSpec], item: &WireItem, kind: ErrorKind, message: &str) -> ExampleVerdict {
    ExampleVerdict {
        example_id: item.id.clone(),
        checks: specs.iter().map(|s| (s.name.clone(), Check::Error)).collect(),
        prediction: Label::Negative,
        errors: vec![VerdictError {
            site: AGGREGATE_SITE.into(),
            kind,
            message: message.to_string(),
        }],
    }
}

enum Outcome {
    Value(Value),
    Failed(ErrorKind, String),
}

fn call_entry(m: &mut Loaded, name: &str, args: Vec<Value>, timeout: Duration) -> Outcome {
    let Some(f @ Value::Func(_)) = m.globals.get(name) else {
        return Outcome::Failed(ErrorKind::Contract, format!("{name} is not a function"));
    };
    m.interp.deadline = Instant::now() + timeout;
    match m.interp.call(&f, args, Vec::new()) {
        Ok(v) => Outcome::Value(v),
        Err(Signal::Timeout) => Outcome::Failed(ErrorKind::Timeout, format!("exceeded {} ms", timeout.as_millis())),
        Err(Signal::Exc(e)) if e.message.is_empty() => Outcome::Failed(ErrorKind::Exception, e.kind.to_string()),
        Err(Signal::Exc(e)) => Outcome::Failed(ErrorKind::Exception, format!("{}: {}", e.kind, e.message)),
    }
}

fn run_item(m: &mut Loaded, specs: &[VerifierSpec], item: &WireItem, timeout: Duration) -> ExampleVerdict {
    let x = Value::str(item.x.as_str());
    let y = Value::str(item.y.as_str());
    let context = || Value::from_json(&serde_json::Value::Object(item.context.clone()));
    let mut checks = BTreeMap::new();
    let mut ordered = Vec::with_capacity(specs.len());
    let mut errors = Vec::new();
    for spec in specs {
        let check = match call_entry(m, &spec.name, vec![x.clone(), y.clone(), context()], timeout) {
            Outcome::Value(Value::Bool(b)) => bool_check(b),
            Outcome::Value(v) => {
                errors.push(VerdictError {
                    site: spec.name.clone(),
                    kind: ErrorKind::Contract,
                    message: format!("returned {} instead of bool; coerced by truthiness", v.type_name()),
                });
                bool_check(v.truthy())
            }
            Outcome::Failed(kind, message) => {
                errors.push(VerdictError {
                    site: spec.name.clone(),
                    kind,
                    message,
                });
                Check::Error
            }
        };
        checks.insert(spec.name.clone(), check);
        ordered.push((Value::str(spec.name.as_str()), Value::Bool(check.as_bool())));
    }
    let check_map = Value::Dict(Rc::new(std::cell::RefCell::new(Dict { entries: ordered })));
    let prediction = match call_entry(m, crate::bundle::AGGREGATE_FUNCTION, vec![check_map, x, y, context()], timeout) {
        Outcome::Value(Value::Bool(b)) => Label::from_bit(b as u8).expect("0 or 1"),
        Outcome::Value(v) => {
            errors.push(VerdictError {
                site: AGGREGATE_SITE.into(),
                kind: ErrorKind::Contract,
                message: format!("returned {} instead of bool; coerced by truthiness", v.type_name()),
            });
            Label::from_bit(v.truthy() as u8).expect("0 or 1")
        }
        Outcome::Failed(kind, message) => {
            errors.push(VerdictError {
                site: AGGREGATE_SITE.into(),
                kind,
                message,
            });
            Label::Negative
        }
    };
    ExampleVerdict {
        example_id: item.id.clone(),
        checks,
        prediction,
        errors,
    }
}

fn bool_check(b: bool) -> Check {
    if b {
        Check::Pass
    } else {
        Check::Fail
    }
}
