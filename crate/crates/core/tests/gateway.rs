mod common;

use std::time::{Duration, Instant};

use verinduce::bundle::{lint_bundle, VerifierBundle};
use verinduce::context::Context;
use verinduce::dataset::{DevExample, Label};
use verinduce::gateway::{Check, ErrorKind, Gateway, GatewayConfig, GatewayError, LeaseState};

use common::*;

fn example(id: &str, y: &str) -> DevExample {
    DevExample::new(id, "x", y, Label::Positive)
}

fn bundle(gw: &Gateway, source: &str) -> VerifierBundle {
    gw.validate(source).unwrap().bundle(source).expect("bundle validates")
}

#[test]
fn worker_rejects_every_probe_on_its_own() {
    let gw = gateway();
    for (label, source) in probe_corpus() {
        let manifest = gw.validate(&source).unwrap();
        assert!(!manifest.validated, "worker accepted {label}");
        assert!(!manifest.violations.is_empty(), "{label}: no violation reported");
    }
    gw.shutdown();
}

#[test]
fn lint_rejects_every_probe_on_its_own() {
    // syntax is left to the worker
    for (label, source) in probe_corpus().into_iter().filter(|(l, _)| *l != "syntax error") {
        assert!(!lint_bundle(&source).is_empty(), "lint accepted {label}");
    }
}

#[test]
fn conforming_bundles_validate() {
    let gw = gateway();
    for source in conforming_bundles() {
        assert!(lint_bundle(&source).is_empty(), "{source}");
        let manifest = gw.validate(&source).unwrap();
        assert!(manifest.validated, "{source}\n{:?}", manifest.violations);
    }
    gw.shutdown();
}

#[test]
fn slow_verifier_times_out_without_stalling_the_batch() {
    let gw = gateway_with(1, Duration::from_millis(100));
    let source = "VERIFIER_SPECS = [\n    {\"name\": \"spin\", \"description\": \"d\", \"requires\": []},\n]\n\ndef spin(x, y, context=None):\n    if y == 'slow':\n        n = 0\n        while True:\n            n += 1\n    return True\n\ndef aggregate(checks, x, y, context=None):\n    return checks['spin']\n";
    let b = bundle(&gw, source);
    let (slow, fast) = (example("s", "slow"), example("f", "fast"));
    let ctx = Context::empty("s");
    let started = Instant::now();
    let verdicts = gw.execute(&b, &[(&slow, &ctx), (&fast, &ctx)], Duration::from_millis(100));
    let elapsed = started.elapsed();
    assert!(elapsed <= Duration::from_millis(600), "took {elapsed:?}");
    assert_eq!(verdicts[0].checks["spin"], Check::Error);
    assert!(verdicts[0].errors.iter().any(|e| e.kind == ErrorKind::Timeout));
    assert_eq!(verdicts[0].prediction, Label::Negative);
    assert_eq!(verdicts[1].checks["spin"], Check::Pass);
    assert_eq!(verdicts[1].prediction, Label::Positive);
    gw.shutdown();
}

#[test]
fn crashing_worker_is_replaced() {
    let gw = gateway();
    let source = "# stub: crash-on-item=boom\nVERIFIER_SPECS = [\n    {\"name\": \"ok\", \"description\": \"d\", \"requires\": []},\n]\n\ndef ok(x, y, context=None):\n    return True\n\ndef aggregate(checks, x, y, context=None):\n    return checks['ok']\n";
    let b = bundle(&gw, source);
    let before = gw.leases()[0].pid;
    let (a, boom, c) = (example("a", "1"), example("boom", "2"), example("c", "3"));
    let ctx = Context::empty("a");
    let verdicts = gw.execute(&b, &[(&a, &ctx), (&boom, &ctx), (&c, &ctx)], Duration::from_millis(500));
    assert_eq!(verdicts.len(), 3);
    assert_eq!(verdicts[0].prediction, Label::Positive);
    assert_eq!(verdicts[1].prediction, Label::Negative);
    assert!(verdicts[1].errors.iter().any(|e| e.kind == ErrorKind::Contract));
    assert_eq!(verdicts[2].prediction, Label::Positive);
    let lease = &gw.leases()[0];
    assert!(lease.restarts >= 1);
    assert_ne!(lease.pid, before);
    assert_eq!(lease.state, LeaseState::Idle);
    gw.shutdown();
}

#[test]
fn garbage_and_hangs_become_error_records() {
    let mut config = GatewayConfig::new(stub_command());
    config.request_slack = Duration::from_millis(200);
    let gw = Gateway::start(config).unwrap();
    for directive in ["garbage", "hang", "crash"] {
        let source = format!("# stub: {directive}\nVERIFIER_SPECS = [\n    {{\"name\": \"ok\", \"description\": \"d\", \"requires\": []}},\n]\n\ndef ok(x, y, context=None):\n    return True\n\ndef aggregate(checks, x, y, context=None):\n    return checks['ok']\n");
        let b = bundle(&gw, &source);
        let e = example("only", "y");
        let ctx = Context::empty("only");
        let v = gw.execute(&b, &[(&e, &ctx)], Duration::from_millis(200));
        assert_eq!(v.len(), 1, "{directive}");
        assert_eq!(v[0].prediction, Label::Negative, "{directive}");
        assert!(!v[0].errors.is_empty(), "{directive}");
    }
    assert_eq!(gw.leases()[0].state, LeaseState::Idle);
    gw.shutdown();
}

#[test]
fn version_mismatch_refuses_to_start() {
    let mut config = GatewayConfig::new(stub_command().env("VERINDUCE_STUB_PROTOCOL_VERSION", "99"));
    config.workers = 1;
    match Gateway::start(config) {
        Err(GatewayError::VersionMismatch { got, .. }) => assert_eq!(got, 99),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("mismatched worker was accepted"),
    }
}

#[test]
fn missing_worker_binary_is_spawn_failure() {
    let config = GatewayConfig::new(verinduce::gateway::WorkerCommand::new("/nonexistent/worker"));
    assert!(matches!(Gateway::start(config), Err(GatewayError::SpawnFailure(_))));
}

#[test]
fn two_workers_share_concurrent_load() {
    let gw = gateway_with(2, Duration::from_millis(2000));
    let source = &conforming_bundles()[0];
    let b = bundle(&gw, source);
    let examples: Vec<DevExample> = (0..8).map(|i| example(&format!("e{i}"), "text")).collect();
    let ctx = Context::empty("e");
    std::thread::scope(|s| {
        for e in &examples {
            let (gw, b, ctx) = (&gw, &b, &ctx);
            s.spawn(move || {
                let v = gw.execute(b, &[(e, ctx)], Duration::from_millis(2000));
                assert_eq!(v[0].prediction, Label::Positive);
            });
        }
    });
    let leases = gw.leases();
    assert_eq!(leases.len(), 2);
    assert_eq!(leases.iter().map(|l| l.served).sum::<u64>(), 9);
    assert!(leases.iter().all(|l| l.state == LeaseState::Idle && l.restarts == 0));
    gw.shutdown();
}

#[test]
fn shutdown_reaps_every_worker() {
    let gw = gateway_with(3, Duration::from_millis(2000));
    let pids: Vec<u32> = gw.leases().iter().filter_map(|l| l.pid).collect();
    assert_eq!(pids.len(), 3);
    for pid in &pids {
        assert!(std::path::Path::new(&format!("/proc/{pid}")).exists());
    }
    gw.shutdown();
    for pid in &pids {
        let status = std::fs::read_to_string(format!("/proc/{pid}/status")).unwrap_or_default();
        assert!(status.is_empty() || status.contains("State:\tZ"), "worker {pid} still running");
    }
    assert!(gw.leases().iter().all(|l| l.state == LeaseState::Dead && l.pid.is_none()));
}

#[test]
fn aggregate_sees_checks_and_context() {
    let gw = gateway();
    let source = &conforming_bundles()[9];
    let b = bundle(&gw, source);
    let fields = vec!["steps".to_string()];
    let mut given = serde_json::Map::new();
    given.insert("steps".into(), serde_json::json!(vec!["a"; 12]));
    let long = Context::shaped("e", &fields, &given);
    let e = example("e", "no period");
    let v = gw.execute(&b, &[(&e, &long)], Duration::from_millis(2000));
    assert_eq!(v[0].checks["a"], Check::Fail);
    assert_eq!(v[0].checks["b"], Check::Fail);
    assert_eq!(v[0].prediction, Label::Negative);
    let short = Context::all_null("e", &fields);
    let v = gw.execute(&b, &[(&e, &short)], Duration::from_millis(2000));
    assert_eq!(v[0].checks["b"], Check::Pass);
    assert_eq!(v[0].prediction, Label::Positive);
    gw.shutdown();
}
