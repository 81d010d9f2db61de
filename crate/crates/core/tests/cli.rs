mod common;

use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use verinduce::bundle::bundle_digest;
use verinduce::cli::{
    default_grid, evaluate_with, export, induce_with, regress, run_grid, system_prompt, CliError, GridResult, Runtime,
    ToolServer, ToolService,
};
use verinduce::dataset::{load_dev_set, DevExample, DevSet, Label};
use verinduce::llm::Role;
use verinduce::search::{read_manifest, Category, SearchConfig, ARTIFACT_BUNDLE, ARTIFACT_MANIFEST};

use common::*;

const OOD_TASK: &str = "final boxed integer must be even";

fn induce_into(dir: &std::path::Path) -> (verinduce::search::SearchResult, verinduce::search::Evaluator) {
    let provider = replay("even_boxed_replay.ndjson");
    let eval = evaluator(provider.clone(), TASK, gateway());
    let (result, report) =
        induce_with(&SearchConfig::default(), &even_boxed_dev(), provider.as_ref(), &eval, dir, &Runtime::default()).unwrap();
    assert!(report.delta() > 0.0);
    (result, eval)
}

#[test]
fn export_round_trips_the_best_bundle() {
    let run = tempfile::tempdir().unwrap();
    let (result, eval) = induce_into(run.path());
    let dest = tempfile::tempdir().unwrap();
    let exported = export(run.path(), dest.path(), Some(Category::FormatStructure)).unwrap();
    let source = std::fs::read_to_string(&exported.bundle).unwrap();
    assert_eq!(source, result.bundle.source);
    assert_eq!(bundle_digest(&source).as_str(), exported.digest);
    let manifest = read_manifest(&exported.manifest).unwrap();
    assert_eq!(manifest.category, Category::FormatStructure);
    assert_eq!(manifest.provenance.node_id, result.best);
    assert_eq!(manifest.provenance.run_id, result.run_id);
    assert_eq!(manifest.specs, result.bundle.specs);
    let original = read_manifest(&run.path().join(ARTIFACT_MANIFEST)).unwrap();
    assert_eq!(original.category, Category::Untagged);

    // the exported bundle scores what the run recorded
    let report = evaluate_with(&source, &even_boxed_dev(), &eval).unwrap();
    assert_eq!(report.f1, result.stats.f1);
    assert_eq!(report.confusion, result.stats.confusion);
    eval.gateway().shutdown();
}

#[test]
fn export_rejects_a_tampered_bundle() {
    let run = tempfile::tempdir().unwrap();
    let (_, eval) = induce_into(run.path());
    eval.gateway().shutdown();
    let path = run.path().join(ARTIFACT_BUNDLE);
    let mut source = std::fs::read_to_string(&path).unwrap();
    source.push_str("\n# edited\n");
    std::fs::write(&path, source).unwrap();
    assert!(matches!(export(run.path(), run.path(), None), Err(CliError::Usage(_))));
    std::fs::remove_file(&path).unwrap();
    assert!(matches!(export(run.path(), run.path(), None), Err(CliError::MissingArtifact(_))));
}

#[test]
fn always_true_bundle_scores_zero_on_all_negative_labels() {
    let dev = DevSet::new(TASK, (0..5).map(|i| DevExample::new(format!("n{i}"), "x", "y", Label::Negative)).collect());
    let provider = Scripted::new(|_| Ok(String::new()));
    let eval = evaluator(provider, TASK, gateway());
    let report = evaluate_with(&length_bundle(0), &dev, &eval).unwrap();
    assert_eq!(report.confusion.fp, 5);
    assert_eq!(report.f1, 0.0);
    eval.gateway().shutdown();
}

#[test]
fn evaluate_rejects_contract_violations() {
    let provider = Scripted::new(|_| Ok(String::new()));
    let eval = evaluator(provider, TASK, gateway());
    let bad = &probe_corpus()[2].1;
    assert!(matches!(evaluate_with(bad, &even_boxed_dev(), &eval), Err(CliError::ContractViolation(_))));
    assert_eq!(eval.executions(), 0);
    eval.gateway().shutdown();
}

#[test]
fn out_of_distribution_evaluation_only_extracts_context() {
    let provider = replay("ood_replay.ndjson");
    let eval = evaluator(provider.clone(), OOD_TASK, gateway());
    let dev = load_dev_set(fixture("ood_dev.ndjson"), OOD_TASK).unwrap();
    let report = evaluate_with(&fixture_text("ood_bundle.py"), &dev, &eval).unwrap();
    let c = report.confusion;
    assert_eq!((c.tp, c.fp, c.tn, c.fn_), (4, 2, 3, 1));
    assert_eq!(report.f1, 8.0 / 11.0);
    assert_eq!(provider.calls(), provider.calls_for(Role::ContextExtractor));
    assert!(provider.calls() >= 10);
    assert!(!report.context_warnings.is_empty(), "o04 has no JSON in its reply");
    eval.gateway().shutdown();
}

#[test]
fn grid_isolates_a_failing_point() {
    let provider = replay("even_boxed_replay.ndjson");
    let eval = evaluator(provider.clone(), TASK, gateway());
    let mut points = default_grid();
    points[13] = (-1.0, 0.5, 0.5);
    let out = tempfile::tempdir().unwrap();
    let result = run_grid(&SearchConfig::default(), &points, &even_boxed_dev(), provider.as_ref(), &eval, Some(out.path()), true);
    assert_eq!(result.rows.len(), 27);
    let failed: Vec<_> = result.rows.iter().filter(|r| r.is_failed()).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].alpha, -1.0);
    assert!(failed[0].error.as_deref().unwrap().contains("alpha"));
    assert!(result.rows.iter().filter(|r| !r.is_failed()).all(|r| r.final_f1 == Some(1.0)));
    assert_eq!(GridResult::from_ndjson(&result.to_ndjson()).unwrap(), result);
    assert!(out.path().join("a0.1_b0.1_g0.1").join(ARTIFACT_MANIFEST).is_file());
    eval.gateway().shutdown();
}

#[test]
fn shared_cache_grid_matches_isolated_runs() {
    let provider = replay("even_boxed_replay.ndjson");
    let dev = even_boxed_dev();
    let shared = evaluator(provider.clone(), TASK, gateway());
    let points = default_grid();
    let together = run_grid(&SearchConfig::default(), &points, &dev, provider.as_ref(), &shared, None, true);
    shared.gateway().shutdown();
    for (i, point) in points.iter().enumerate().step_by(4) {
        let alone = evaluator(provider.clone(), TASK, gateway());
        let single = run_grid(&SearchConfig::default(), &[*point], &dev, provider.as_ref(), &alone, None, false);
        assert_eq!(single.rows[0], together.rows[i], "point {point:?}");
        alone.gateway().shutdown();
    }
}

#[test]
fn regression_over_a_grid_file() {
    let rows: Vec<_> = default_grid()
        .into_iter()
        .map(|(a, b, g)| verinduce::cli::GridRow::ok(a, b, g, 0.5 + 0.2 * a - 0.1 * g, 2, 5))
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.ndjson");
    std::fs::write(&path, GridResult { rows: rows.clone() }.to_ndjson()).unwrap();
    let report = verinduce::cli::cmd_regress(&path).unwrap();
    assert_eq!(report, regress(&rows).unwrap());
    assert!(report.coefficients.alpha > 0.0);
    assert!(report.coefficients.gamma < 0.0);
    assert!(report.coefficients.beta.abs() < 1e-12);
    assert!((report.r_squared - 1.0).abs() < 1e-12);
}

fn ood_service(with_extractor: bool) -> ToolService {
    let provider = replay("ood_replay.ndjson");
    let gw = gateway();
    let eval = evaluator(provider, OOD_TASK, Arc::clone(&gw));
    let bundle = eval.validate(&fixture_text("ood_bundle.py")).unwrap();
    let extractor = with_extractor.then(|| Arc::clone(eval.extractor()));
    ToolService::new(bundle, gw, extractor, Duration::from_millis(2000))
}

fn post(service: &ToolService, path: &str, body: Value) -> (u16, Value) {
    let r = service.handle("POST", path, body.to_string().as_bytes());
    (r.status, r.json_body().unwrap())
}

#[test]
fn tool_service_routes() {
    let service = ood_service(false);
    let tools = service.handle("GET", "/tools", b"").json_body().unwrap();
    assert_eq!(tools[0]["name"], "final_even");
    assert_eq!(tools[0]["endpoint"], "/verifiers/final_even");
    assert_eq!(tools[0]["requires"], json!(["final_answer"]));
    assert_eq!(tools[0]["parameters"]["required"], json!(["x", "y"]));

    let prompt = service.handle("GET", "/system-prompt", b"");
    assert_eq!(prompt.body, system_prompt());
    assert!(prompt.content_type.starts_with("text/plain"));

    let call = |answer: &str| json!({"x": "q", "y": "draft", "context": {"final_answer": answer}});
    assert_eq!(post(&service, "/verifiers/final_even", call("6")), (200, json!({"result": true})));
    assert_eq!(post(&service, "/verifiers/final_even", call("7")), (200, json!({"result": false})));

    let (status, body) = post(&service, "/verifiers/final_even", json!({"x": "q", "y": "\\boxed{4}"}));
    assert_eq!(status, 200);
    assert_eq!(body, json!({"result": false, "context_missing": true}));

    let (status, verdict) = post(&service, "/aggregate", call("10"));
    assert_eq!(status, 200);
    assert_eq!(verdict["prediction"], 1);
    assert_eq!(verdict["checks"]["final_even"], true);

    assert_eq!(post(&service, "/verifiers/nope", call("6")).0, 404);
    assert_eq!(post(&service, "/elsewhere", call("6")).0, 404);
    assert_eq!(service.handle("GET", "/aggregate", b"").status, 405);
    assert_eq!(service.handle("POST", "/aggregate", b"{\"x\": 1}").status, 400);
    assert_eq!(service.handle("POST", "/aggregate", b"{\"x\": \"a\", \"y\": \"b\", \"z\": 0}").status, 400);
}

#[test]
fn tool_service_extracts_missing_context_when_it_can() {
    let service = ood_service(true);
    let (status, body) = post(&service, "/verifiers/final_even", json!({"x": "q", "y": "\\boxed{4}"}));
    assert_eq!(status, 200);
    // no scripted extraction for ad hoc requests, so the field stays null
    assert_eq!(body["result"], false);
    assert!(body.get("context_missing").is_none());
}

#[test]
fn tool_service_over_http() {
    let service = Arc::new(ood_service(false));
    let server = ToolServer::bind("127.0.0.1:0").unwrap();
    let addr = server.local_addr().unwrap();
    let stop = server.stopper();
    let handle = std::thread::spawn(move || server.run(service));
    let base = format!("http://{addr}");

    let mut r = ureq::post(&format!("{base}/verifiers/final_even"))
        .send_json(json!({"x": "q", "y": "d", "context": {"final_answer": "12"}}))
        .unwrap();
    assert_eq!(r.body_mut().read_json::<Value>().unwrap(), json!({"result": true}));

    let text = ureq::get(&format!("{base}/system-prompt")).call().unwrap().body_mut().read_to_string().unwrap();
    assert_eq!(text, system_prompt());

    let clients: Vec<_> = (0..4)
        .map(|i| {
            let url = format!("{base}/aggregate");
            std::thread::spawn(move || {
                let answer = (i * 2 + 1).to_string();
                let mut r = ureq::post(&url).send_json(json!({"x": "q", "y": "d", "context": {"final_answer": answer}})).unwrap();
                r.body_mut().read_json::<Value>().unwrap()["prediction"].clone()
            })
        })
        .collect();
    for c in clients {
        assert_eq!(c.join().unwrap(), json!(0));
    }

    match ureq::get(&format!("{base}/missing")).call() {
        Err(ureq::Error::StatusCode(code)) => assert_eq!(code, 404),
        other => panic!("expected 404, got {other:?}"),
    }
    stop();
    handle.join().unwrap();
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_verinduce"))
}

#[test]
fn binary_reports_usage_errors_with_exit_code_two() {
    let out = bin().args(["evaluate", "--bundle", "nope.py", "--dataset", "/nonexistent.ndjson"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let out = bin()
        .args(["induce", "--dataset"])
        .arg(fixture("even_boxed_dev.ndjson"))
        .args(["--provider", "replay"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn binary_induces_and_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = bin()
        .args(["induce", "--task-desc", TASK, "--provider", "replay", "--dataset"])
        .arg(fixture("even_boxed_dev.ndjson"))
        .arg("--replay-file")
        .arg(fixture("even_boxed_replay.ndjson"))
        .arg("--out")
        .arg(&run)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("Initial") && stdout.contains("+50.0"), "{stdout}");

    let out = bin()
        .args(["evaluate", "--json", "--dataset"])
        .arg(fixture("even_boxed_dev.ndjson"))
        .arg("--bundle")
        .arg(run.join(ARTIFACT_BUNDLE))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["f1"], 1.0);
}
