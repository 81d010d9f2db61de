//! Supervision of verifier worker processes.
//!
//! The gateway owns a fixed pool of workers speaking the NDJSON protocol in
//! [`protocol`]. It never executes verifier code itself. Workers that crash
//! or stop answering are killed and respawned, and every failure is folded
//! into per-example [`ExampleVerdict`] error records so `execute` stays total
//! for validated bundles.

pub mod protocol;
mod worker;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::bundle::{FindingKind, LintFinding, VerifierBundle, VerifierSpec};
use crate::context::Context;
use crate::dataset::{DevExample, Label};

pub use protocol::{Check, ErrorKind, ExampleVerdict, VerdictError, AGGREGATE_SITE};
pub use worker::WorkerCommand;

use protocol::{parse_reply, Reply, Request, WireItem};
use worker::{Failure, WorkerProcess};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("failed to spawn worker: {0}")]
    SpawnFailure(String),
    #[error("worker protocol version mismatch: expected {expected}, got {got}")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("worker crashed: {0}")]
    WorkerCrash(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no live workers left in the pool")]
    NoWorkers,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub command: WorkerCommand,
    pub workers: usize,
    /// Restarts allowed per worker slot before it is marked dead.
    pub max_restarts: u32,
    pub timeout_per_call: Duration,
    pub batch_size: usize,
    pub handshake_timeout: Duration,
    pub shutdown_grace: Duration,
    /// Added to every request deadline on top of the per-call budget.
    pub request_slack: Duration,
}

impl GatewayConfig {
    pub fn new(command: WorkerCommand) -> Self {
        Self {
            command,
            workers: 1,
            max_restarts: 16,
            timeout_per_call: Duration::from_millis(2000),
            batch_size: 50,
            handshake_timeout: Duration::from_secs(10),
            shutdown_grace: Duration::from_secs(2),
            request_slack: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LeaseState {
    Idle,
    Busy,
    Dead,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct WorkerLease {
    pub id: usize,
    pub state: LeaseState,
    pub served: u64,
    pub restarts: u32,
    pub pid: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleManifest {
    pub specs: Vec<VerifierSpec>,
    pub validated: bool,
    pub violations: Vec<LintFinding>,
}

impl BundleManifest {
    pub fn bundle(&self, source: &str) -> Option<VerifierBundle> {
        self.validated
            .then(|| VerifierBundle::new(source, self.specs.clone()))
    }
}

struct Slot {
    lease: WorkerLease,
    process: Option<WorkerProcess>,
}

pub struct Gateway {
    config: GatewayConfig,
    slots: Vec<Mutex<Slot>>,
    idle: Mutex<VecDeque<usize>>,
    available: Condvar,
    next_req: AtomicU64,
}

enum RequestFailure {
    Crash(String),
    Protocol(String),
}

impl Gateway {
    /// Spawns `config.workers` workers and completes the handshake with each.
    pub fn start(config: GatewayConfig) -> Result<Self, GatewayError> {
        let mut slots = Vec::with_capacity(config.workers.max(1));
        let mut spawned = Vec::new();
        for id in 0..config.workers.max(1) {
            let process = match WorkerProcess::spawn(&config.command, config.handshake_timeout) {
                Ok(p) => p,
                Err(e) => {
                    for p in spawned {
                        WorkerProcess::terminate(p, Duration::ZERO);
                    }
                    return Err(e);
                }
            };
            let pid = process.pid();
            spawned.push(process);
            slots.push(WorkerLease {
                id,
                state: LeaseState::Idle,
                served: 0,
                restarts: 0,
                pid: Some(pid),
            });
        }
        let slots: Vec<_> = slots
            .into_iter()
            .zip(spawned)
            .map(|(lease, p)| {
                Mutex::new(Slot {
                    lease,
                    process: Some(p),
                })
            })
            .collect();
        let idle = (0..slots.len()).collect();
        Ok(Self {
            config,
            slots,
            idle: Mutex::new(idle),
            available: Condvar::new(),
            next_req: AtomicU64::new(1),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn leases(&self) -> Vec<WorkerLease> {
        self.slots.iter().map(|s| s.lock().unwrap().lease.clone()).collect()
    }

    /// Stops every worker: stdin is closed, then stragglers are killed after
    /// the grace period. Waits for in-flight requests to finish first.
    pub fn shutdown(&self) {
        for slot in &self.slots {
            let mut slot = slot.lock().unwrap();
            if let Some(p) = slot.process.take() {
                p.terminate(self.config.shutdown_grace);
            }
            slot.lease.state = LeaseState::Dead;
            slot.lease.pid = None;
        }
        self.available.notify_all();
    }

    fn acquire(&self) -> Result<usize, GatewayError> {
        let mut idle = self.idle.lock().unwrap();
        loop {
            if let Some(i) = idle.pop_front() {
                return Ok(i);
            }
            let all_dead = self
                .slots
                .iter()
                .all(|s| s.try_lock().map(|s| s.lease.state == LeaseState::Dead).unwrap_or(false));
            if all_dead {
                return Err(GatewayError::NoWorkers);
            }
            idle = self
                .available
                .wait_timeout(idle, Duration::from_millis(100))
                .unwrap()
                .0;
        }
    }

    fn release(&self, idx: usize) {
        let dead = self.slots[idx].lock().unwrap().lease.state == LeaseState::Dead;
        if !dead {
            self.idle.lock().unwrap().push_back(idx);
        }
        self.available.notify_one();
    }

    fn req_id(&self) -> String {
        format!("r{}", self.next_req.fetch_add(1, Ordering::SeqCst))
    }

    /// Sends one request on a leased worker. On crash or timeout the worker
    /// is replaced before returning.
    fn send(&self, request: &Request, timeout: Duration) -> Result<Reply, RequestFailure> {
        let idx = self
            .acquire()
            .map_err(|e| RequestFailure::Crash(e.to_string()))?;
        let result = {
            let mut slot = self.slots[idx].lock().unwrap();
            slot.lease.state = LeaseState::Busy;
            let outcome = match slot.process.as_mut() {
                Some(p) => p.roundtrip(&request.to_line(), timeout),
                None => Err(Failure::Crashed("worker not running".into())),
            };
            slot.lease.served += 1;
            let result = match outcome {
                Ok(line) => match parse_reply(&line) {
                    Ok(reply) if reply.req == request.req && reply.v == request.v => Ok(reply),
                    Ok(reply) => Err(RequestFailure::Protocol(format!(
                        "reply for {} (v{}) while waiting for {}",
                        reply.req, reply.v, request.req
                    ))),
                    Err(e) => Err(RequestFailure::Protocol(format!("malformed reply: {e}"))),
                },
                Err(Failure::TimedOut) => Err(RequestFailure::Crash(format!(
                    "no reply within {} ms",
                    timeout.as_millis()
                ))),
                Err(Failure::Crashed(why)) => Err(RequestFailure::Crash(why)),
            };
            if result.is_err() {
                // a worker in an unknown state is never reused
                self.restart(&mut slot);
            } else {
                slot.lease.state = LeaseState::Idle;
            }
            result
        };
        self.release(idx);
        result
    }

    fn restart(&self, slot: &mut Slot) {
        if let Some(mut p) = slot.process.take() {
            p.kill();
        }
        slot.lease.pid = None;
        if slot.lease.restarts >= self.config.max_restarts {
            log::error!("worker {} exceeded its restart budget", slot.lease.id);
            slot.lease.state = LeaseState::Dead;
            return;
        }
        slot.lease.restarts += 1;
        match WorkerProcess::spawn(&self.config.command, self.config.handshake_timeout) {
            Ok(p) => {
                slot.lease.pid = Some(p.pid());
                slot.process = Some(p);
                slot.lease.state = LeaseState::Idle;
            }
            Err(e) => {
                log::error!("worker {} failed to restart: {e}", slot.lease.id);
                slot.lease.state = LeaseState::Dead;
            }
        }
    }

    /// Full validation by a worker. Never runs verifier bodies.
    pub fn validate(&self, source: &str) -> Result<BundleManifest, GatewayError> {
        let timeout = self.config.handshake_timeout + self.config.request_slack;
        let mut last = String::new();
        for _ in 0..2 {
            let request = Request::validate(self.req_id(), source);
            match self.send(&request, timeout) {
                Ok(reply) => return Ok(manifest_from_reply(reply)),
                Err(RequestFailure::Protocol(m)) => return Err(GatewayError::Protocol(m)),
                Err(RequestFailure::Crash(m)) => last = m,
            }
        }
        Err(GatewayError::WorkerCrash(last))
    }

    /// Runs a validated bundle over `items`, returning verdicts in input
    /// order. Crashes, timeouts and malformed replies become error records.
    pub fn execute(
        &self,
        bundle: &VerifierBundle,
        items: &[(&DevExample, &Context)],
        timeout_per_call: Duration,
    ) -> Vec<ExampleVerdict> {
        let mut verdicts = Vec::with_capacity(items.len());
        for chunk in items.chunks(self.config.batch_size.max(1)) {
            match self.execute_batch(bundle, chunk, timeout_per_call) {
                Ok(v) => verdicts.extend(v),
                Err(why) => {
                    log::warn!("batch of {} failed ({why}); retrying item by item", chunk.len());
                    for item in chunk {
                        verdicts.push(self.execute_single(bundle, item, timeout_per_call, &why));
                    }
                }
            }
        }
        verdicts
    }

    fn execute_single(
        &self,
        bundle: &VerifierBundle,
        item: &(&DevExample, &Context),
        timeout_per_call: Duration,
        first_failure: &str,
    ) -> ExampleVerdict {
        let mut why = first_failure.to_string();
        for _ in 0..2 {
            match self.execute_batch(bundle, std::slice::from_ref(item), timeout_per_call) {
                Ok(mut v) => return v.pop().expect("one verdict per item"),
                Err(e) => why = e,
            }
        }
        contract_verdict(bundle, &item.0.id, &format!("worker failed twice on this item: {why}"))
    }

    fn execute_batch(
        &self,
        bundle: &VerifierBundle,
        chunk: &[(&DevExample, &Context)],
        timeout_per_call: Duration,
    ) -> Result<Vec<ExampleVerdict>, String> {
        let items = chunk
            .iter()
            .map(|(e, c)| WireItem {
                id: e.id.clone(),
                x: e.x.clone(),
                y: e.y.clone(),
                context: c.values.clone(),
            })
            .collect();
        let timeout_ms = timeout_per_call.as_millis() as u64;
        let request = Request::execute(self.req_id(), bundle.source.clone(), items, timeout_ms);
        let calls = (bundle.size() as u32 + 1) * chunk.len() as u32;
        let deadline = timeout_per_call * calls + self.config.request_slack;
        let reply = match self.send(&request, deadline) {
            Ok(r) => r,
            Err(RequestFailure::Crash(m)) | Err(RequestFailure::Protocol(m)) => return Err(m),
        };
        if !reply.ok {
            return Err(reply.error.unwrap_or_else(|| "worker refused execute".into()));
        }
        let verdicts = reply.verdicts.unwrap_or_default();
        if verdicts.len() != chunk.len() {
            return Err(format!("{} verdicts for {} items", verdicts.len(), chunk.len()));
        }
        // order restoration: match by id, not position
        let mut out = Vec::with_capacity(chunk.len());
        let mut pool: Vec<Option<ExampleVerdict>> = verdicts.into_iter().map(Some).collect();
        for (example, _) in chunk {
            let found = pool
                .iter_mut()
                .find(|v| v.as_ref().map(|v| v.example_id == example.id).unwrap_or(false))
                .and_then(Option::take);
            match found {
                Some(v) => out.push(normalize_verdict(bundle, v)),
                None => return Err(format!("no verdict for item {}", example.id)),
            }
        }
        Ok(out)
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn manifest_from_reply(reply: Reply) -> BundleManifest {
    if reply.ok {
        let specs = reply.specs.unwrap_or_default();
        if specs.is_empty() {
            return BundleManifest {
                specs,
                validated: false,
                violations: vec![LintFinding {
                    kind: FindingKind::MissingSpecs,
                    detail: "VERIFIER_SPECS is empty".into(),
                    line: None,
                }],
            };
        }
        BundleManifest {
            specs,
            validated: true,
            violations: Vec::new(),
        }
    } else {
        let mut violations = reply.violations.unwrap_or_default();
        if violations.is_empty() {
            violations.push(LintFinding {
                kind: FindingKind::SyntaxError,
                detail: reply.error.unwrap_or_else(|| "rejected without detail".into()),
                line: None,
            });
        }
        BundleManifest {
            specs: Vec::new(),
            validated: false,
            violations,
        }
    }
}

/// Enforces verdict invariants on a worker reply: one check per manifest
/// verifier, and prediction 0 whenever the aggregate errored.
fn normalize_verdict(bundle: &VerifierBundle, mut v: ExampleVerdict) -> ExampleVerdict {
    let mut checks = std::collections::BTreeMap::new();
    for name in bundle.verifier_names() {
        match v.checks.remove(name) {
            Some(c) => {
                checks.insert(name.to_string(), c);
            }
            None => {
                checks.insert(name.to_string(), Check::Error);
                v.errors.push(VerdictError {
                    site: name.to_string(),
                    kind: ErrorKind::Contract,
                    message: "worker reported no result for this verifier".into(),
                });
            }
        }
    }
    v.checks = checks;
    if v.aggregate_failed() {
        v.prediction = Label::Negative;
    }
    v
}

fn contract_verdict(bundle: &VerifierBundle, example_id: &str, message: &str) -> ExampleVerdict {
    ExampleVerdict {
        example_id: example_id.to_string(),
        checks: bundle
            .verifier_names()
            .map(|n| (n.to_string(), Check::Error))
            .collect(),
        prediction: Label::Negative,
        errors: vec![VerdictError {
            site: AGGREGATE_SITE.to_string(),
            kind: ErrorKind::Contract,
            message: message.to_string(),
        }],
    }
}
