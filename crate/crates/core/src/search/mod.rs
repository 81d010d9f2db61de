//! Acquisition-guided DAG search over verifier bundles.
//!
//! Seeds come from one LLM call under the root. Each step selects the node
//! with the highest acquisition value, shows a critic its sampled false
//! positives and negatives, and asks a modifier for up to K edited children.

mod artifacts;
pub mod dag;
mod prompts;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::bundle::{lint_bundle, parse_bundles, Digest, VerifierBundle};
use crate::context::{required_fields, ContextExtractor};
use crate::dataset::{dump_dev_set, single_label_check, DevExample, DevSet, Label, LabelBalance};
use crate::gateway::Gateway;
use crate::llm::{PromptRequest, Provider, Role, StepCounter, TemplateError};
use crate::scoring::{acquisition, confusion, Hyperparams, NodeStats};

pub use artifacts::{
    read_manifest, write_artifacts, Category, ManifestFile, ManifestProvenance, ARTIFACT_BUNDLE, ARTIFACT_CONFIG,
    ARTIFACT_DAG, ARTIFACT_EVENTS, ARTIFACT_MANIFEST,
};
pub use dag::{Dag, DagNode, Insert, NodeId, Provenance, ROOT};
pub use prompts::{critic_prompt, format_examples, modifier_prompt, seed_prompt, NodeView, NO_EXAMPLES};

/// Seed-generator calls per run: the first attempt plus two retries.
pub const SEED_ATTEMPTS: u64 = 3;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no valid seed bundles after {attempts} attempts")]
    SeedExhausted { attempts: u64 },
    #[error("dag has no candidate nodes")]
    EmptyDag,
    #[error("dev set is unusable for search: {0}")]
    Unbalanced(String),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub hyper: Hyperparams,
    pub num_seeds: usize,
    /// Children requested per expansion, K.
    pub children: usize,
    pub budget: u64,
    pub rng_seed: u64,
    pub early_stop: bool,
    pub epsilon: f64,
    pub timeout_ms: u64,
    /// Dev examples shown in the seed prompt.
    pub seed_example_cap: usize,
    /// False positives (and, separately, negatives) shown per expansion.
    pub error_sample: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            num_seeds: 3,
            children: 3,
            budget: 20,
            rng_seed: 0,
            early_stop: true,
            epsilon: 1e-6,
            timeout_ms: 2000,
            seed_example_cap: 40,
            error_sample: 10,
        }
    }
}

impl SearchConfig {
    pub fn check(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::InvalidConfig(m.to_string()));
        if !self.hyper.is_valid() {
            return bad("alpha, beta and gamma must be finite and non-negative");
        }
        if self.num_seeds == 0 {
            return bad("num_seeds must be at least 1");
        }
        if self.children == 0 {
            return bad("children must be at least 1");
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return bad("epsilon must be finite and non-negative");
        }
        if self.timeout_ms == 0 {
            return bad("timeout_ms must be positive");
        }
        Ok(())
    }
}

/// Predictions and stats of one bundle on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<Label>,
    pub stats: NodeStats,
    /// Verdicts that carried at least one error record.
    pub errored: usize,
}

type Validated = Result<VerifierBundle, String>;

/// Validates and evaluates bundles, caching both by digest. Shared across
/// runs (grid points) over the same extractor.
pub struct Evaluator {
    gateway: Arc<Gateway>,
    extractor: Arc<ContextExtractor>,
    timeout: Duration,
    validated: Mutex<HashMap<Digest, Validated>>,
    evaluated: Mutex<HashMap<(Digest, String), Evaluation>>,
    executions: Mutex<u64>,
}

impl Evaluator {
    pub fn new(gateway: Arc<Gateway>, extractor: Arc<ContextExtractor>, timeout: Duration) -> Self {
        Self {
            gateway,
            extractor,
            timeout,
            validated: Mutex::new(HashMap::new()),
            evaluated: Mutex::new(HashMap::new()),
            executions: Mutex::new(0),
        }
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn extractor(&self) -> &Arc<ContextExtractor> {
        &self.extractor
    }

    /// Bundle executions performed so far (cache misses).
    pub fn executions(&self) -> u64 {
        *self.executions.lock().unwrap()
    }

    /// Lint screen, then full worker validation. The error is a one-line
    /// reason suitable for the event log.
    pub fn validate(&self, source: &str) -> Validated {
        let digest = crate::bundle::bundle_digest(source);
        if let Some(hit) = self.validated.lock().unwrap().get(&digest) {
            return hit.clone().map(|b| VerifierBundle::new(source, b.specs));
        }
        let outcome = self.validate_uncached(source);
        self.validated.lock().unwrap().insert(digest, outcome.clone());
        outcome
    }

    fn validate_uncached(&self, source: &str) -> Validated {
        let findings = lint_bundle(source);
        if !findings.is_empty() {
            return Err(format!("lint: {}", join(&findings)));
        }
        match self.gateway.validate(source) {
            Ok(manifest) => manifest
                .bundle(source)
                .ok_or_else(|| format!("validation: {}", join(&manifest.violations))),
            Err(e) => Err(format!("validation: {e}")),
        }
    }

    pub fn evaluate(&self, bundle: &VerifierBundle, dev: &DevSet) -> Evaluation {
        let key = (bundle.digest.clone(), dataset_fingerprint(dev));
        if let Some(hit) = self.evaluated.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let fields = required_fields(bundle);
        let contexts: Vec<_> = dev
            .examples
            .iter()
            .map(|e| self.extractor.get_or_extract(e, &fields, &bundle.specs))
            .collect();
        let items: Vec<_> = dev.examples.iter().zip(&contexts).collect();
        let verdicts = self.gateway.execute(bundle, &items, self.timeout);
        *self.executions.lock().unwrap() += 1;
        let predictions: Vec<Label> = verdicts.iter().map(|v| v.prediction).collect();
        let c = confusion(&predictions, &dev.labels()).expect("one verdict per example");
        let evaluation = Evaluation {
            stats: NodeStats::from_confusion(c),
            errored: verdicts.iter().filter(|v| !v.errors.is_empty()).count(),
            predictions,
        };
        self.evaluated.lock().unwrap().insert(key, evaluation.clone());
        evaluation
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

fn dataset_fingerprint(dev: &DevSet) -> String {
    hex::encode(Sha256::digest(dump_dev_set(dev).as_bytes()))
}

/// Generator for one sampling draw, keyed by the run seed and a label.
fn keyed_rng(seed: u64, key: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(&h.finalize());
    ChaCha8Rng::from_seed(bytes)
}

/// Up to `k` items drawn without replacement, returned in input order.
fn sample_ordered<T: Clone>(items: &[T], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if items.len() <= k {
        return items.to_vec();
    }
    let mut picked = rand::seq::index::sample(rng, items.len(), k).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].clone()).collect()
}

/// Balanced, seeded sample of at most `cap` examples for the seed prompt.
pub fn seed_examples(dev: &DevSet, cap: usize, rng_seed: u64) -> Vec<&DevExample> {
    let mut rng = keyed_rng(rng_seed, "seed-examples");
    let idx = |pos: bool| -> Vec<usize> {
        (0..dev.len())
            .filter(|&i| dev.examples[i].label.is_positive() == pos)
            .collect()
    };
    let (mut pos, mut neg) = (idx(true), idx(false));
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let half = cap / 2;
    let take_pos = pos.len().min(half.max(cap.saturating_sub(neg.len())));
    let take_neg = neg.len().min(cap - take_pos);
    let mut chosen: Vec<usize> = pos[..take_pos].iter().chain(&neg[..take_neg]).copied().collect();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| &dev.examples[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorProfile {
    pub false_positives: Vec<String>,
    pub false_negatives: Vec<String>,
    pub sampled_fp: Vec<String>,
    pub sampled_fn: Vec<String>,
}

impl ErrorProfile {
    /// Draws depend only on the run seed, the step, the node id and the
    /// full lists.
    pub fn build(dev: &DevSet, predictions: &[Label], rng_seed: u64, step: u64, node: NodeId, cap: usize) -> Self {
        let mut false_positives = Vec::new();
        let mut false_negatives = Vec::new();
        for (e, p) in dev.examples.iter().zip(predictions) {
            match (p, e.label) {
                (Label::Positive, Label::Negative) => false_positives.push(e.id.clone()),
                (Label::Negative, Label::Positive) => false_negatives.push(e.id.clone()),
                _ => {}
            }
        }
        let sampled_fp = sample_ordered(&false_positives, cap, &mut keyed_rng(rng_seed, &format!("fp/{step}/{node}")));
        let sampled_fn = sample_ordered(&false_negatives, cap, &mut keyed_rng(rng_seed, &format!("fn/{step}/{node}")));
        Self {
            false_positives,
            false_negatives,
            sampled_fp,
            sampled_fn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    RunStarted {
        run_id: String,
        examples: usize,
        positives: usize,
        config: SearchConfig,
    },
    SeedAttempt {
        attempt: u64,
        step: u64,
        proposed: usize,
        accepted: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    CandidateRejected {
        step: u64,
        parent: NodeId,
        index: usize,
        reason: String,
    },
    NodeInserted {
        step: u64,
        id: NodeId,
        parent: NodeId,
        digest: String,
        size: usize,
        f1: f64,
    },
    EdgeAdded {
        step: u64,
        parent: NodeId,
        child: NodeId,
    },
    DuplicateSkipped {
        step: u64,
        parent: NodeId,
        existing: NodeId,
    },
    Selected {
        step: u64,
        node: NodeId,
        acquisition: f64,
    },
    Profiled {
        step: u64,
        node: NodeId,
        false_positives: usize,
        false_negatives: usize,
        sampled_fp: Vec<String>,
        sampled_fn: Vec<String>,
    },
    StepFailed {
        step: u64,
        node: NodeId,
        reason: String,
    },
    Expanded {
        step: u64,
        node: NodeId,
        proposed: usize,
        children: Vec<NodeId>,
    },
    StepCompleted {
        step: u64,
        expansions: u64,
        best_node: NodeId,
        best_f1: f64,
    },
    ContextWarning {
        message: String,
    },
    EarlyStop {
        expansions: u64,
        best_f1: f64,
    },
    Finished {
        best: NodeId,
        best_f1: f64,
        initial: NodeId,
        initial_f1: f64,
        expansions: u64,
    },
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub run_id: String,
    pub best: NodeId,
    pub bundle: VerifierBundle,
    pub stats: NodeStats,
    /// Best seed under the final-selection rule.
    pub initial: NodeId,
    pub initial_stats: NodeStats,
    pub dag: Dag,
    pub events: Vec<Event>,
    /// Completed expansion steps, T.
    pub expansions: u64,
}

impl SearchResult {
    pub fn events_ndjson(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("event serializes"));
            out.push('\n');
        }
        out
    }
}

/// Argmax of acquisition over non-root nodes; ties keep the smaller id.
pub fn select_node(dag: &Dag, h: &Hyperparams, total_expansions: u64) -> Result<(NodeId, f64), SearchError> {
    let mut best: Option<(NodeId, f64)> = None;
    for node in dag.candidates() {
        let Some(stats) = node.stats else { continue };
        let score = acquisition(&stats, node.size(), h, total_expansions);
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((node.id, score));
        }
    }
    best.ok_or(SearchError::EmptyDag)
}

/// Highest F1; within `epsilon` of it, smallest bundle; then smallest id.
pub fn final_select(dag: &Dag, epsilon: f64) -> Result<NodeId, SearchError> {
    final_select_among(dag.candidates(), epsilon)
}

fn final_select_among<'a>(nodes: impl Iterator<Item = &'a DagNode> + Clone, epsilon: f64) -> Result<NodeId, SearchError> {
    let top = nodes
        .clone()
        .filter(|n| n.stats.is_some())
        .map(DagNode::f1)
        .fold(f64::NEG_INFINITY, f64::max);
    nodes
        .filter(|n| n.stats.is_some() && n.f1() >= top - epsilon)
        .min_by_key(|n| (n.size(), n.id))
        .map(|n| n.id)
        .ok_or(SearchError::EmptyDag)
}

struct Run<'a> {
    config: &'a SearchConfig,
    dev: &'a DevSet,
    provider: &'a dyn Provider,
    evaluator: &'a Evaluator,
    steps: StepCounter,
    dag: Dag,
    events: Vec<Event>,
    expansions: u64,
}

impl Run<'_> {
    fn emit(&mut self, event: Event) {
        log::debug!("{event:?}");
        self.events.push(event);
    }

    fn drain_warnings(&mut self) {
        for message in self.evaluator.extractor().take_warnings() {
            log::warn!("context: {message}");
            self.emit(Event::ContextWarning { message });
        }
    }

    fn best(&self) -> (NodeId, f64) {
        let id = final_select(&self.dag, self.config.epsilon).unwrap_or(ROOT);
        (id, self.dag.node(id).map_or(0.0, DagNode::f1))
    }

    /// Validates, evaluates and inserts one proposed source under `parent`.
    fn admit(&mut self, step: u64, parent: NodeId, index: usize, source: &str, provenance: Provenance) -> Option<NodeId> {
        let bundle = match self.evaluator.validate(source) {
            Ok(b) => b,
            Err(reason) => {
                log::info!("step {step}: candidate {index} from node {parent} rejected: {reason}");
                self.emit(Event::CandidateRejected { step, parent, index, reason });
                return None;
            }
        };
        let evaluation = self.evaluator.evaluate(&bundle, self.dev);
        self.drain_warnings();
        let (digest, size) = (bundle.digest.to_string(), bundle.size());
        match self.dag.insert(parent, bundle, evaluation.stats, provenance) {
            Insert::New(id) => {
                self.emit(Event::NodeInserted {
                    step,
                    id,
                    parent,
                    digest,
                    size,
                    f1: evaluation.stats.f1,
                });
                Some(id)
            }
            Insert::Linked(child) => {
                self.emit(Event::EdgeAdded { step, parent, child });
                Some(child)
            }
            Insert::Duplicate(existing) => {
                log::info!("step {step}: candidate {index} duplicates node {existing}, an ancestor-or-older node of {parent}");
                self.emit(Event::DuplicateSkipped { step, parent, existing });
                None
            }
        }
    }

    fn seed(&mut self) -> Result<Vec<NodeId>, SearchError> {
        let examples = seed_examples(self.dev, self.config.seed_example_cap, self.config.rng_seed);
        // retries reuse the identical prompt; only the step changes
        let prompt = seed_prompt(&self.dev.task_description, self.config.num_seeds, &examples)?;
        for attempt in 0..SEED_ATTEMPTS {
            let step = self.steps.next(Role::SeedGenerator);
            let request = PromptRequest::new(Role::SeedGenerator, step, prompt.clone()).tag("attempt", attempt);
            let completion = match self.provider.complete(&request) {
                Ok(r) => r.completion,
                Err(e) => {
                    log::warn!("seed attempt {attempt} failed: {e}");
                    self.emit(Event::SeedAttempt {
                        attempt,
                        step,
                        proposed: 0,
                        accepted: 0,
                        error: Some(e.to_string()),
                    });
                    continue;
                }
            };
            let sources: Vec<String> = parse_bundles(&completion).into_iter().take(self.config.num_seeds).collect();
            let mut ids = Vec::new();
            for (index, source) in sources.iter().enumerate() {
                let provenance = Provenance::Seed { completion_step: step };
                if let Some(id) = self.admit(0, ROOT, index, source, provenance) {
                    if !ids.contains(&id) {
                        ids.push(id);
                    }
                }
            }
            self.emit(Event::SeedAttempt {
                attempt,
                step,
                proposed: sources.len(),
                accepted: ids.len(),
                error: None,
            });
            if !ids.is_empty() {
                return Ok(ids);
            }
        }
        Err(SearchError::SeedExhausted { attempts: SEED_ATTEMPTS })
    }

    /// One critic call and one modifier call on `node`. Counts as a visit
    /// even when a call fails or no child survives.
    fn expand(&mut self, step: u64, node: NodeId) -> Result<Vec<NodeId>, SearchError> {
        let current = self.dag.node(node).expect("selected node exists").clone();
        let bundle = current.bundle.expect("selected nodes carry a bundle");
        let stats = current.stats.expect("selected nodes are evaluated");
        self.consume_visit(node);

        let evaluation = self.evaluator.evaluate(&bundle, self.dev);
        let profile = ErrorProfile::build(
            self.dev,
            &evaluation.predictions,
            self.config.rng_seed,
            step,
            node,
            self.config.error_sample,
        );
        self.emit(Event::Profiled {
            step,
            node,
            false_positives: profile.false_positives.len(),
            false_negatives: profile.false_negatives.len(),
            sampled_fp: profile.sampled_fp.clone(),
            sampled_fn: profile.sampled_fn.clone(),
        });
        let lookup = |ids: &[String]| -> Vec<&DevExample> { ids.iter().filter_map(|id| self.dev.get(id)).collect() };
        let (fps, fns) = (lookup(&profile.sampled_fp), lookup(&profile.sampled_fn));
        let view = NodeView {
            bundle: &bundle,
            stats: &stats,
            false_positives: &fps,
            false_negatives: &fns,
        };
        let task = &self.dev.task_description;
        let critic_text = critic_prompt(task, &view)?;
        let critic_step = self.steps.next(Role::Critic);
        let diagnosis = match self.provider.complete(&PromptRequest::new(Role::Critic, critic_step, critic_text)) {
            Ok(r) => r.completion,
            Err(e) => return Ok(self.fail(step, node, format!("critic: {e}"))),
        };
        let modifier_text = modifier_prompt(task, &view, &diagnosis, self.config.children)?;
        let modifier_step = self.steps.next(Role::Modifier);
        let completion = match self.provider.complete(&PromptRequest::new(Role::Modifier, modifier_step, modifier_text)) {
            Ok(r) => r.completion,
            Err(e) => return Ok(self.fail(step, node, format!("modifier: {e}"))),
        };
        let sources: Vec<String> = parse_bundles(&completion).into_iter().take(self.config.children).collect();
        let mut children = Vec::new();
        for (index, source) in sources.iter().enumerate() {
            let provenance = Provenance::CriticModifier {
                step,
                critic_step,
                modifier_step,
            };
            if let Some(id) = self.admit(step, node, index, source, provenance) {
                children.push(id);
            }
        }
        self.emit(Event::Expanded {
            step,
            node,
            proposed: sources.len(),
            children: children.clone(),
        });
        Ok(children)
    }

    fn consume_visit(&mut self, node: NodeId) {
        if let Some(stats) = self.dag.node_mut(node).and_then(|n| n.stats.as_mut()) {
            stats.visits += 1;
        }
        self.expansions += 1;
    }

    fn fail(&mut self, step: u64, node: NodeId, reason: String) -> Vec<NodeId> {
        log::warn!("step {step} on node {node} failed: {reason}");
        self.emit(Event::StepFailed { step, node, reason });
        Vec::new()
    }
}

pub fn run_id(config: &SearchConfig, dev: &DevSet) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(dev.task_description.as_bytes());
    h.update(dump_dev_set(dev).as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

pub fn run_search(
    config: &SearchConfig,
    dev: &DevSet,
    provider: &dyn Provider,
    evaluator: &Evaluator,
) -> Result<SearchResult, SearchError> {
    config.check()?;
    match single_label_check(dev) {
        LabelBalance::Balanced => {}
        other => return Err(SearchError::Unbalanced(format!("{other:?}"))),
    }
    let run_id = run_id(config, dev);
    let mut run = Run {
        config,
        dev,
        provider,
        evaluator,
        steps: StepCounter::new(),
        dag: Dag::new(),
        events: Vec::new(),
        expansions: 0,
    };
    run.emit(Event::RunStarted {
        run_id: run_id.clone(),
        examples: dev.len(),
        positives: dev.examples.iter().filter(|e| e.label.is_positive()).count(),
        config: config.clone(),
    });
    let seeds = run.seed()?;
    let initial = final_select_among(seeds.iter().filter_map(|&id| run.dag.node(id)), config.epsilon)?;
    log::info!("seeded {} nodes; initial f1 {:.4}", seeds.len(), run.dag.node(initial).map_or(0.0, DagNode::f1));

    for step in 1..=config.budget {
        let (_, best_f1) = run.best();
        if config.early_stop && best_f1 >= 1.0 {
            run.emit(Event::EarlyStop {
                expansions: run.expansions,
                best_f1,
            });
            break;
        }
        let (node, score) = select_node(&run.dag, &config.hyper, run.expansions)?;
        run.emit(Event::Selected {
            step,
            node,
            acquisition: score,
        });
        run.expand(step, node)?;
        let (best_node, best_f1) = run.best();
        log::info!("step {step}: expanded node {node}; best f1 {best_f1:.4} (node {best_node})");
        run.emit(Event::StepCompleted {
            step,
            expansions: run.expansions,
            best_node,
            best_f1,
        });
    }

    let best = final_select(&run.dag, config.epsilon)?;
    let node = run.dag.node(best).expect("selected node exists").clone();
    let initial_stats = run.dag.node(initial).and_then(|n| n.stats).expect("seed stats");
    let stats = node.stats.expect("candidate stats");
    run.emit(Event::Finished {
        best,
        best_f1: stats.f1,
        initial,
        initial_f1: initial_stats.f1,
        expansions: run.expansions,
    });
    debug_assert!(run.dag.is_acyclic());
    debug_assert_eq!(run.dag.total_visits(), run.expansions);
    Ok(SearchResult {
        run_id,
        best,
        bundle: node.bundle.expect("candidate bundle"),
        stats,
        initial,
        initial_stats,
        dag: run.dag,
        events: run.events,
        expansions: run.expansions,
    })
}
