mod common;

use std::collections::HashSet;

use verinduce::cli::{induce_with, Runtime};
use verinduce::dataset::{DevExample, DevSet, Label};
use verinduce::llm::{ProviderError, Role};
use verinduce::scoring::Hyperparams;
use verinduce::search::{run_search, Event, Provenance, SearchConfig, SearchError, ARTIFACT_DAG, ARTIFACT_EVENTS};

use common::*;

fn config() -> SearchConfig {
    SearchConfig {
        hyper: Hyperparams::new(0.5, 0.1, 1.0),
        ..SearchConfig::default()
    }
}

#[test]
fn replayed_run_reaches_perfect_f1() {
    let provider = replay("even_boxed_replay.ndjson");
    let eval = evaluator(provider.clone(), TASK, gateway());
    let dev = even_boxed_dev();
    let r = run_search(&config(), &dev, provider.as_ref(), &eval).unwrap();
    assert_eq!(r.initial_stats.f1, 0.5);
    assert_eq!(r.stats.f1, 1.0);
    assert!(r.expansions <= 3);
    assert!(r.events.iter().any(|e| matches!(e, Event::EarlyStop { .. })));
    assert!(r.bundle.source.contains("boxed"));
    // the eval-based seed never reaches the dag
    assert!(r.dag.nodes.iter().filter_map(|n| n.bundle.as_ref()).all(|b| !b.source.contains("eval(")));
    assert!(r.events.iter().any(|e| matches!(e, Event::SeedAttempt { proposed: 2, accepted: 1, .. })));
    assert_eq!(provider.calls_for(Role::ContextExtractor), 0);
    eval.gateway().shutdown();
}

#[test]
fn seed_generation_retries_then_succeeds() {
    let provider = Scripted::new(|req| {
        Ok(match (req.role, req.step) {
            (Role::SeedGenerator, 0) => "I cannot do that.".into(),
            (Role::SeedGenerator, 1) => "```python\nthis is not python(\n```".into(),
            (Role::SeedGenerator, _) => fenced(&[length_bundle(20), length_bundle(30)]),
            _ => String::new(),
        })
    });
    let eval = evaluator(provider.clone(), TASK, gateway());
    let cfg = SearchConfig { budget: 1, ..config() };
    let r = run_search(&cfg, &even_boxed_dev(), provider.as_ref(), &eval).unwrap();
    let seeds = provider.calls(Role::SeedGenerator);
    assert_eq!(seeds.len(), 3);
    assert!(seeds.iter().all(|s| s.rendered_text == seeds[0].rendered_text));
    let attempts: Vec<_> = r.events.iter().filter(|e| matches!(e, Event::SeedAttempt { .. })).collect();
    assert_eq!(attempts.len(), 3);
    let seeded = r.dag.nodes.iter().filter(|n| matches!(n.provenance, Provenance::Seed { completion_step: 2 })).count();
    assert_eq!(seeded, 2);
    eval.gateway().shutdown();
}

#[test]
fn seed_generation_gives_up_after_three_attempts() {
    let provider = Scripted::new(|_| Ok("no code here".into()));
    let eval = evaluator(provider.clone(), TASK, gateway());
    match run_search(&config(), &even_boxed_dev(), provider.as_ref(), &eval) {
        Err(SearchError::SeedExhausted { attempts }) => assert_eq!(attempts, 3),
        other => panic!("expected seed exhaustion, got {:?}", other.map(|r| r.best)),
    }
    assert_eq!(provider.calls(Role::SeedGenerator).len(), 3);
    assert!(provider.calls(Role::Critic).is_empty());
    eval.gateway().shutdown();
}

#[test]
fn seeds_are_capped_at_num_seeds() {
    let provider = Scripted::new(|req| {
        Ok(match req.role {
            Role::SeedGenerator => fenced(&(1..=6).map(|n| length_bundle(n * 10)).collect::<Vec<_>>()),
            _ => String::new(),
        })
    });
    let eval = evaluator(provider.clone(), TASK, gateway());
    let cfg = SearchConfig { budget: 1, num_seeds: 2, ..config() };
    let r = run_search(&cfg, &even_boxed_dev(), provider.as_ref(), &eval).unwrap();
    assert_eq!(r.dag.edges.get(&0).map(Vec::len), Some(2));
    eval.gateway().shutdown();
}

fn budget_provider() -> std::sync::Arc<Scripted> {
    Scripted::new(|req| match (req.role, req.step) {
        (Role::SeedGenerator, _) => Ok(fenced(&[length_bundle(1000), length_bundle(2000)])),
        (Role::Critic, s) if s % 5 == 4 => Err(ProviderError::Transport("flaky".into())),
        (Role::Critic, _) => Ok("tighten the length threshold".into()),
        (Role::Modifier, s) if s % 7 == 3 => Ok("no bundles this time".into()),
        (Role::Modifier, s) => Ok(fenced(&[length_bundle(10 + s), length_bundle(200 + s), length_bundle(1000)])),
        (Role::ContextExtractor, _) => Ok("{}".into()),
    })
}

#[test]
fn full_budget_counts_every_expansion() {
    let provider = budget_provider();
    let eval = evaluator(provider.clone(), TASK, gateway());
    let cfg = SearchConfig { early_stop: false, ..config() };
    let r = run_search(&cfg, &even_boxed_dev(), provider.as_ref(), &eval).unwrap();
    assert_eq!(r.expansions, 20);
    assert_eq!(r.dag.total_visits(), 20);
    let failed = r.events.iter().filter(|e| matches!(e, Event::StepFailed { .. })).count();
    assert!(failed >= 4, "{failed} failed steps");
    let completed = r.events.iter().filter(|e| matches!(e, Event::StepCompleted { .. })).count();
    assert_eq!(completed, 20);
    assert_eq!(provider.calls(Role::Critic).len(), 20);
    assert!(r.dag.is_acyclic());
    for (parent, children) in &r.dag.edges {
        for c in children {
            assert!(c > parent, "edge {parent} -> {c}");
            assert!(r.dag.nodes[*c as usize].parents.contains(parent));
        }
    }
    let digests: HashSet<_> = r.dag.nodes.iter().filter_map(|n| n.bundle.as_ref()).map(|b| b.digest.clone()).collect();
    assert_eq!(digests.len(), r.dag.len() - 1);
    eval.gateway().shutdown();
}

#[test]
fn identical_inputs_give_identical_artifacts() {
    let run = || {
        let provider = budget_provider();
        let eval = evaluator(provider.clone(), TASK, gateway());
        let dir = tempfile::tempdir().unwrap();
        let cfg = SearchConfig { early_stop: false, budget: 8, ..config() };
        induce_with(&cfg, &even_boxed_dev(), provider.as_ref(), &eval, dir.path(), &Runtime::default()).unwrap();
        eval.gateway().shutdown();
        let read = |f: &str| std::fs::read(dir.path().join(f)).unwrap();
        (read(ARTIFACT_DAG), read(ARTIFACT_EVENTS))
    };
    let first = run();
    assert_eq!(first, run());
    assert!(!first.0.is_empty() && !first.1.is_empty());
}

#[test]
fn different_rng_seed_changes_the_run_id() {
    let provider = budget_provider();
    let eval = evaluator(provider.clone(), TASK, gateway());
    let cfg = SearchConfig { budget: 1, ..config() };
    let a = run_search(&cfg, &even_boxed_dev(), provider.as_ref(), &eval).unwrap();
    let b = run_search(&SearchConfig { rng_seed: 7, ..cfg }, &even_boxed_dev(), provider.as_ref(), &eval).unwrap();
    assert_ne!(a.run_id, b.run_id);
    eval.gateway().shutdown();
}

#[test]
fn single_label_dev_set_is_refused() {
    let dev = DevSet::new(TASK, (0..6).map(|i| DevExample::new(format!("e{i}"), "x", "y", Label::Positive)).collect());
    let provider = Scripted::new(|_| Ok(String::new()));
    let eval = evaluator(provider.clone(), TASK, gateway());
    assert!(matches!(run_search(&config(), &dev, provider.as_ref(), &eval), Err(SearchError::Unbalanced(_))));
    assert!(provider.log.lock().unwrap().is_empty());
    eval.gateway().shutdown();
}

#[test]
fn critic_sees_at_most_ten_errors_of_each_kind() {
    let examples: Vec<DevExample> = (0..60)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
            // every example fails the length check, so all positives are false negatives
            DevExample::new(format!("e{i:02}"), "x", "short", label)
        })
        .collect();
    let dev = DevSet::new(TASK, examples);
    let provider = Scripted::new(|req| {
        Ok(match req.role {
            Role::SeedGenerator => fenced(&[length_bundle(100)]),
            _ => String::new(),
        })
    });
    let eval = evaluator(provider.clone(), TASK, gateway());
    let cfg = SearchConfig { budget: 1, ..config() };
    let r = run_search(&cfg, &dev, provider.as_ref(), &eval).unwrap();
    let profiled = r.events.iter().find_map(|e| match e {
        Event::Profiled { false_negatives, sampled_fn, sampled_fp, .. } => Some((*false_negatives, sampled_fn.clone(), sampled_fp.clone())),
        _ => None,
    });
    let (fns, sampled_fn, sampled_fp) = profiled.expect("one profile");
    assert_eq!(fns, 30);
    assert_eq!(sampled_fn.len(), 10);
    assert!(sampled_fp.is_empty());
    let mut sorted = sampled_fn.clone();
    sorted.sort();
    assert_eq!(sorted, sampled_fn);
    let critic = &provider.calls(Role::Critic)[0].rendered_text;
    assert_eq!(critic.matches("[id=").count(), 10);
    eval.gateway().shutdown();
}
