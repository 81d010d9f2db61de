//! Operator commands. `main.rs` only parses flags and prints; everything
//! here is callable from tests.

pub mod export;
pub mod grid;
pub mod regress;
pub mod tools;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::context::{ContextCache, ContextError, ContextExtractor};
use crate::dataset::{load_dev_set, DatasetError, DevSet};
use crate::gateway::{Gateway, GatewayConfig, GatewayError, WorkerCommand};
use crate::llm::{
    CompletionRecord, LiveConfig, LiveProvider, PromptRequest, Provider, ProviderError, RecordProvider, ReplayProvider,
};
use crate::scoring::{Confusion, NodeStats};
use crate::search::{run_search, write_artifacts, Evaluator, SearchConfig, SearchError, SearchResult};

pub use export::{export, Exported};
pub use grid::{default_grid, grid_points, parse_axis, run_grid, GridResult, GridRow, DEFAULT_AXIS};
pub use regress::{regress, Coefficients, RegressError, RegressionReport};
pub use tools::{system_prompt, ToolResponse, ToolServer, ToolService};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Regress(#[from] RegressError),
    #[error("bundle violates the verifier contract: {0}")]
    ContractViolation(String),
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Live,
    Replay,
    Record,
    /// No LLM at all; context extraction falls back to nulls.
    #[default]
    None,
}

impl FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(ProviderKind::Live),
            "replay" => Ok(ProviderKind::Replay),
            "record" => Ok(ProviderKind::Record),
            "none" => Ok(ProviderKind::None),
            other => Err(format!("unknown provider {other:?} (live, replay, record, none)")),
        }
    }
}

struct NoProvider;

impl Provider for NoProvider {
    fn complete(&self, request: &PromptRequest) -> Result<CompletionRecord, ProviderError> {
        Err(ProviderError::Transport(format!(
            "no provider configured for {} step {}",
            request.role, request.step
        )))
    }

    fn model_id(&self) -> &str {
        "none"
    }
}

/// Everything needed to talk to the LLM and the workers.
#[derive(Debug, Clone, Default)]
pub struct Runtime {
    pub provider: ProviderKind,
    pub replay_file: Option<PathBuf>,
    pub worker: Option<WorkerCommand>,
    pub workers: usize,
    pub timeout_ms: u64,
    pub context_cache: Option<PathBuf>,
    pub strict_specs: bool,
}

impl Runtime {
    pub fn open_provider(&self) -> Result<Arc<dyn Provider>, CliError> {
        let replay_file = || {
            self.replay_file
                .clone()
                .ok_or_else(|| CliError::Usage(format!("--provider {:?} needs --replay-file", self.provider)))
        };
        Ok(match self.provider {
            ProviderKind::None => Arc::new(NoProvider),
            ProviderKind::Replay => Arc::new(ReplayProvider::from_file(replay_file()?)?),
            ProviderKind::Live => Arc::new(LiveProvider::new(LiveConfig::from_env())),
            ProviderKind::Record => Arc::new(RecordProvider::create(LiveProvider::new(LiveConfig::from_env()), replay_file()?)?),
        })
    }

    pub fn start_gateway(&self) -> Result<Arc<Gateway>, CliError> {
        let command = match &self.worker {
            Some(c) => c.clone(),
            None => WorkerCommand::sibling_stub()
                .ok_or_else(|| CliError::Usage("no worker binary found next to this executable; pass --worker".into()))?,
        };
        let mut config = GatewayConfig::new(command);
        config.workers = self.workers.max(1);
        config.timeout_per_call = self.timeout();
        Ok(Arc::new(Gateway::start(config)?))
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(if self.timeout_ms == 0 { 2000 } else { self.timeout_ms })
    }

    pub fn extractor(&self, provider: Arc<dyn Provider>, task_description: &str) -> Result<Arc<ContextExtractor>, CliError> {
        let cache = match &self.context_cache {
            Some(path) => {
                let (cache, rebuilt) = ContextCache::open_or_rebuild(path)?;
                if let Some(e) = rebuilt {
                    log::warn!("context cache rebuilt: {e}");
                }
                cache
            }
            None => ContextCache::in_memory(),
        };
        Ok(Arc::new(
            ContextExtractor::new(provider, Arc::new(cache), task_description).strict_specs(self.strict_specs),
        ))
    }

    /// Provider plus an evaluator wired to fresh workers.
    pub fn engine(&self, task_description: &str) -> Result<(Arc<dyn Provider>, Evaluator), CliError> {
        let provider = self.open_provider()?;
        let extractor = self.extractor(Arc::clone(&provider), task_description)?;
        let gateway = self.start_gateway()?;
        Ok((provider, Evaluator::new(gateway, extractor, self.timeout())))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub run_id: String,
    pub dataset: String,
    pub task_description: String,
    pub provider: ProviderKind,
    pub replay_file: Option<String>,
    pub search: SearchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSummary {
    pub node: u64,
    pub f1: f64,
    pub size: usize,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InduceReport {
    pub run_id: String,
    pub initial: NodeSummary,
    #[serde(rename = "final")]
    pub final_: NodeSummary,
    pub expansions: u64,
}

impl InduceReport {
    pub fn from_result(result: &SearchResult) -> Self {
        let summary = |id: u64| {
            let node = result.dag.node(id).expect("node exists");
            let stats = node.stats.expect("candidate stats");
            NodeSummary {
                node: id,
                f1: stats.f1,
                size: node.size(),
                confusion: stats.confusion,
            }
        };
        Self {
            run_id: result.run_id.clone(),
            initial: summary(result.initial),
            final_: summary(result.best),
            expansions: result.expansions,
        }
    }

    pub fn delta(&self) -> f64 {
        self.final_.f1 - self.initial.f1
    }
}

impl fmt::Display for InduceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "run {}  ({} expansions)", self.run_id, self.expansions)?;
        writeln!(f, "{:<8}{:>10}{:>10}{:>10}", "", "Initial", "Final", "Delta")?;
        writeln!(
            f,
            "{:<8}{:>10.1}{:>10.1}{:>+10.1}",
            "F1",
            100.0 * self.initial.f1,
            100.0 * self.final_.f1,
            100.0 * self.delta()
        )?;
        write!(
            f,
            "{:<8}{:>10}{:>10}{:>+10}",
            "|V|",
            self.initial.size,
            self.final_.size,
            self.final_.size as i64 - self.initial.size as i64
        )
    }
}

pub fn load_dataset(path: &Path, task_description: &str) -> Result<DevSet, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("dataset {} does not exist", path.display())));
    }
    Ok(load_dev_set(path, task_description)?)
}

/// Search plus artifacts; the part of `induce` that does not set anything up.
pub fn induce_with(
    config: &SearchConfig,
    dev: &DevSet,
    provider: &dyn Provider,
    evaluator: &Evaluator,
    out: &Path,
    runtime: &Runtime,
) -> Result<(SearchResult, InduceReport), CliError> {
    let result = run_search(config, dev, provider, evaluator)?;
    let resolved = ResolvedConfig {
        run_id: result.run_id.clone(),
        dataset: dev.source_path.clone(),
        task_description: dev.task_description.clone(),
        provider: runtime.provider,
        replay_file: runtime.replay_file.as_ref().map(|p| p.display().to_string()),
        search: config.clone(),
    };
    write_artifacts(out, &result, &resolved)?;
    let report = InduceReport::from_result(&result);
    Ok((result, report))
}

pub fn cmd_induce(dataset: &Path, task: &str, config: &SearchConfig, runtime: &Runtime, out: &Path) -> Result<InduceReport, CliError> {
    let dev = load_dataset(dataset, task)?;
    let (provider, evaluator) = runtime.engine(task)?;
    let (_, report) = induce_with(config, &dev, provider.as_ref(), &evaluator, out, runtime)?;
    evaluator.gateway().shutdown();
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub examples: usize,
    pub confusion: Confusion,
    pub f1: f64,
    pub tp_ratio: f64,
    pub tn_ratio: f64,
    /// Examples whose verdict carried an error record.
    pub errored: usize,
    pub context_warnings: Vec<String>,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.confusion;
        writeln!(f, "examples {}  errored {}", self.examples, self.errored)?;
        writeln!(f, "tp {}  fp {}  tn {}  fn {}", c.tp, c.fp, c.tn, c.fn_)?;
        write!(f, "F1 {:.4}  PP {:.4}  NP {:.4}", self.f1, self.tp_ratio, self.tn_ratio)
    }
}

/// Applies a frozen bundle to a labeled set. The only LLM traffic is
/// context extraction.
pub fn evaluate_with(source: &str, dev: &DevSet, evaluator: &Evaluator) -> Result<EvalReport, CliError> {
    let bundle = evaluator.validate(source).map_err(CliError::ContractViolation)?;
    let evaluation = evaluator.evaluate(&bundle, dev);
    let stats: NodeStats = evaluation.stats;
    Ok(EvalReport {
        examples: dev.len(),
        confusion: stats.confusion,
        f1: stats.f1,
        tp_ratio: stats.tp_ratio,
        tn_ratio: stats.tn_ratio,
        errored: evaluation.errored,
        context_warnings: evaluator.extractor().take_warnings(),
    })
}

pub fn cmd_evaluate(bundle: &Path, dataset: &Path, task: &str, runtime: &Runtime) -> Result<EvalReport, CliError> {
    let source = std::fs::read_to_string(bundle)
        .map_err(|e| CliError::Usage(format!("cannot read bundle {}: {e}", bundle.display())))?;
    let dev = load_dataset(dataset, task)?;
    let (_, evaluator) = runtime.engine(task)?;
    let report = evaluate_with(&source, &dev, &evaluator);
    evaluator.gateway().shutdown();
    report
}

pub fn cmd_grid(
    dataset: &Path,
    task: &str,
    base: &SearchConfig,
    points: &[(f64, f64, f64)],
    runtime: &Runtime,
    out: Option<&Path>,
    parallel: bool,
) -> Result<GridResult, CliError> {
    let dev = load_dataset(dataset, task)?;
    let (provider, evaluator) = runtime.engine(task)?;
    let result = run_grid(base, points, &dev, provider.as_ref(), &evaluator, out, parallel);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("grid.ndjson"), result.to_ndjson())?;
    }
    evaluator.gateway().shutdown();
    Ok(result)
}

pub fn cmd_regress(rows_file: &Path) -> Result<RegressionReport, CliError> {
    let text = std::fs::read_to_string(rows_file)?;
    let rows = GridResult::from_ndjson(&text)
        .map_err(|e| CliError::Usage(format!("{} is not grid NDJSON: {e}", rows_file.display())))?;
    Ok(regress(&rows.rows)?)
}

/// Validated service for `bundle`. Context is extracted on demand only when
/// a provider is configured.
pub fn tool_service(bundle: &Path, task: &str, runtime: &Runtime) -> Result<ToolService, CliError> {
    let source = std::fs::read_to_string(bundle)
        .map_err(|e| CliError::Usage(format!("cannot read bundle {}: {e}", bundle.display())))?;
    let (provider, evaluator) = runtime.engine(task)?;
    let bundle = evaluator.validate(&source).map_err(CliError::ContractViolation)?;
    let extractor = (runtime.provider != ProviderKind::None).then(|| Arc::clone(evaluator.extractor()));
    drop(provider);
    Ok(ToolService::new(bundle, Arc::clone(evaluator.gateway()), extractor, runtime.timeout()))
}

pub fn cmd_cache_compact(path: &Path) -> Result<usize, CliError> {
    if !path.is_file() {
        return Err(CliError::MissingArtifact(path.display().to_string()));
    }
    Ok(ContextCache::open(path)?.compact()?)
}
