use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use verinduce::cli::{self, CliError, ProviderKind, Runtime};
use verinduce::gateway::WorkerCommand;
use verinduce::scoring::Hyperparams;
use verinduce::search::{Category, SearchConfig};

#[derive(Parser)]
#[command(name = "verinduce", version, about = "Induce, evaluate and serve executable verifier sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the search and write run artifacts.
    Induce {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        runtime: RuntimeArgs,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Score a saved bundle on a labeled dataset.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        runtime: RuntimeArgs,
        #[arg(long)]
        json: bool,
    },
    /// Sweep alpha, beta and gamma over a grid.
    Grid {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        search: SearchArgs,
        #[command(flatten)]
        runtime: RuntimeArgs,
        #[arg(long, default_value = "0.1,0.5,1.0")]
        alphas: String,
        #[arg(long, default_value = "0.1,0.5,1.0")]
        betas: String,
        #[arg(long, default_value = "0.1,0.5,1.0")]
        gammas: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallel: bool,
    },
    /// Fit standardized OLS of final F1 on the hyperparameters.
    Regress {
        /// Grid NDJSON as written by `grid`.
        rows: PathBuf,
    },
    /// Expose a bundle's verifiers over HTTP.
    ServeTools {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8787")]
        bind: String,
        #[arg(long, default_value = "")]
        task_desc: String,
        #[command(flatten)]
        runtime: RuntimeArgs,
    },
    /// Copy a run's best bundle and manifest elsewhere.
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        dest: PathBuf,
        #[arg(long)]
        category: Option<Category>,
    },
    /// Rewrite a context cache file keeping one line per key.
    CacheCompact { path: PathBuf },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "")]
    task_desc: String,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    beta: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, default_value_t = 3)]
    seeds: usize,
    #[arg(long, default_value_t = 3)]
    children: usize,
    #[arg(long, default_value_t = 20)]
    budget: u64,
    #[arg(long, default_value_t = 0)]
    rng_seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    epsilon: f64,
    #[arg(long)]
    no_early_stop: bool,
}

impl SearchArgs {
    fn config(&self, timeout_ms: u64) -> SearchConfig {
        SearchConfig {
            hyper: Hyperparams::new(self.alpha, self.beta, self.gamma),
            num_seeds: self.seeds,
            children: self.children,
            budget: self.budget,
            rng_seed: self.rng_seed,
            early_stop: !self.no_early_stop,
            epsilon: self.epsilon,
            timeout_ms,
            ..SearchConfig::default()
        }
    }
}

#[derive(Args)]
struct RuntimeArgs {
    #[arg(long, default_value = "none")]
    provider: ProviderKind,
    #[arg(long)]
    replay_file: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    timeout_ms: u64,
    /// Worker command line; defaults to the stub worker next to this binary.
    #[arg(long)]
    worker: Option<String>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    context_cache: Option<PathBuf>,
    #[arg(long)]
    strict_specs: bool,
}

impl RuntimeArgs {
    fn runtime(&self) -> Result<Runtime, CliError> {
        let worker = match &self.worker {
            Some(line) => Some(WorkerCommand::parse(line).ok_or_else(|| CliError::Usage(format!("bad --worker {line:?}")))?),
            None => None,
        };
        Ok(Runtime {
            provider: self.provider,
            replay_file: self.replay_file.clone(),
            worker,
            workers: self.workers,
            timeout_ms: self.timeout_ms,
            context_cache: self.context_cache.clone(),
            strict_specs: self.strict_specs,
        })
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Induce { data, search, runtime, out } => {
            let runtime = runtime.runtime()?;
            let config = search.config(runtime.timeout_ms);
            let report = cli::cmd_induce(&data.dataset, &data.task_desc, &config, &runtime, &out)?;
            println!("{report}");
            println!("artifacts: {}", out.display());
        }
        Command::Evaluate { bundle, data, runtime, json } => {
            let report = cli::cmd_evaluate(&bundle, &data.dataset, &data.task_desc, &runtime.runtime()?)?;
            for w in &report.context_warnings {
                eprintln!("warning: {w}");
            }
            if json {
                println!("{}", serde_json::to_string(&report).expect("report serializes"));
            } else {
                println!("{report}");
            }
        }
        Command::Grid {
            data,
            search,
            runtime,
            alphas,
            betas,
            gammas,
            out,
            parallel,
        } => {
            let runtime = runtime.runtime()?;
            let axis = |s: &str| cli::parse_axis(s).map_err(CliError::Usage);
            let points = cli::grid_points(&axis(&alphas)?, &axis(&betas)?, &axis(&gammas)?);
            let config = search.config(runtime.timeout_ms);
            let result = cli::cmd_grid(&data.dataset, &data.task_desc, &config, &points, &runtime, out.as_deref(), parallel)?;
            print!("{}", result.to_ndjson());
            let failed = result.rows.iter().filter(|r| r.is_failed()).count();
            match result.best() {
                Some(b) => eprintln!(
                    "best: alpha={} beta={} gamma={} f1={:.4} size={} ({failed} failed of {})",
                    b.alpha,
                    b.beta,
                    b.gamma,
                    b.final_f1.unwrap_or(0.0),
                    b.best_node_size.unwrap_or(0),
                    result.rows.len()
                ),
                None => eprintln!("every grid point failed"),
            }
        }
        Command::Regress { rows } => {
            let report = cli::cmd_regress(&rows)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::ServeTools {
            bundle,
            bind,
            task_desc,
            runtime,
        } => {
            let service = cli::tool_service(&bundle, &task_desc, &runtime.runtime()?)?;
            let server = cli::ToolServer::bind(&bind)?;
            println!("{}", cli::system_prompt());
            eprintln!(
                "serving {} verifiers on http://{}",
                service.bundle().size(),
                server.local_addr().map(|a| a.to_string()).unwrap_or(bind)
            );
            server.run(Arc::new(service));
        }
        Command::Export { run, dest, category } => {
            let exported = cli::export(&run, &dest, category)?;
            println!("{}", exported.bundle.display());
            println!("{}", exported.manifest.display());
        }
        Command::CacheCompact { path } => {
            let kept = cli::cmd_cache_compact(&path)?;
            println!("{kept} entries kept");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
