//! ponder: solve one question, evaluate a dataset, or benchmark the search
//! on synthetic reward trees.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::AppConfig;
use ponder_core::eval::{derive_seed, load_dataset, run_eval, EvalError, Strategy, TaskRecord};
use ponder_core::model::{HttpBackend, HttpConfig, ModelHandle, ResponseCache, ScriptedModel};
use ponder_core::prompt::TemplateSet;
use ponder_core::search::{Engine, MctsConfig, SearchError, SearchResult};
use ponder_core::synthetic::{as_scripted_model, branch_path, known_optimum, SyntheticTreeSpec};

#[derive(Parser)]
#[command(
    name = "ponder",
    version,
    about = "Tree-search reasoning over a chat-completions model",
    after_help = "Credential: set PONDER_API_KEY for HTTP endpoints (never logged).\n\
                  Scripted runs (--scripted FILE) need no endpoint or credential."
)]
struct Cli {
    /// TOML config file (flags override it, it overrides defaults).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Search seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON script of (matcher, reply) entries replacing the live model.
    #[arg(long, global = true, value_name = "FILE")]
    scripted: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct SearchFlags {
    #[arg(long)]
    iterations: Option<u32>,
    #[arg(long)]
    expand_width: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    complexity_threshold: Option<usize>,
    #[arg(long)]
    rollout_temperature: Option<f64>,
}

impl SearchFlags {
    fn apply(&self, search: &mut MctsConfig) {
        let Self {
            iterations,
            expand_width,
            max_depth,
            c0,
            kappa,
            complexity_threshold,
            rollout_temperature,
        } = self;
        if let Some(v) = iterations {
            search.iterations = *v;
        }
        if let Some(v) = expand_width {
            search.expand_width = *v;
        }
        if let Some(v) = max_depth {
            search.max_depth = *v;
        }
        if let Some(v) = c0 {
            search.c0 = *v;
        }
        if let Some(v) = kappa {
            search.kappa = *v;
        }
        if let Some(v) = complexity_threshold {
            search.complexity_threshold = *v;
        }
        if let Some(v) = rollout_temperature {
            search.rollout_temperature = *v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Search one question and print the answer with its step chain.
    Solve {
        question: String,
        /// Write the full tree export here.
        #[arg(long, value_name = "PATH")]
        trace: Option<PathBuf>,
        #[command(flatten)]
        search: SearchFlags,
    },
    /// Run a strategy over datasets and write accuracy reports.
    Eval {
        /// Line-delimited JSON dataset files.
        #[arg(required = true, value_name = "DATASET")]
        datasets: Vec<PathBuf>,
        /// improved-mcts or cot.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        parallelism: Option<usize>,
        #[arg(long, value_name = "DIR")]
        report_dir: Option<PathBuf>,
        #[command(flatten)]
        search: SearchFlags,
    },
    /// Convergence statistics on synthetic reward trees.
    Bench {
        /// JSON tree spec; generated per run when absent.
        #[arg(long, value_name = "FILE")]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        runs: u32,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 3)]
        branching: usize,
        #[arg(long, default_value_t = 0.2)]
        margin: f64,
        #[command(flatten)]
        search: SearchFlags,
    },
}

#[derive(Debug, Error)]
enum AppError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("search aborted: {message} (partial trace: {trace_path})")]
    Aborted { message: String, trace_path: String },
    #[error("{0}")]
    Io(String),
}

impl AppError {
    fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 64,
            AppError::Data(_) => 65,
            AppError::Aborted { .. } => 2,
            AppError::Io(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    let mut config = AppConfig::load(cli.config.as_deref()).map_err(AppError::Config)?;
    if let Some(seed) = cli.seed {
        config.search.seed = seed;
    }
    let templates = load_templates(&config)?;
    match cli.command {
        Command::Solve {
            question,
            trace,
            search,
        } => {
            search.apply(&mut config.search);
            let model = build_model(&config, cli.scripted.as_deref())?;
            cmd_solve(&question, &config, &templates, &model, trace.as_deref())
        }
        Command::Eval {
            datasets,
            strategy,
            parallelism,
            report_dir,
            search,
        } => {
            search.apply(&mut config.search);
            if let Some(strategy) = strategy {
                config.eval.strategy = strategy;
            }
            if let Some(parallelism) = parallelism {
                config.eval.parallelism = parallelism;
            }
            if let Some(dir) = report_dir {
                config.paths.report_dir = dir;
            }
            let model = build_model(&config, cli.scripted.as_deref())?;
            cmd_eval(&datasets, &config, &templates, &model)
        }
        Command::Bench {
            spec,
            runs,
            depth,
            branching,
            margin,
            search,
        } => {
            search.apply(&mut config.search);
            cmd_bench(spec.as_deref(), runs, depth, branching, margin, &config)
        }
    }
}

fn load_templates(config: &AppConfig) -> Result<TemplateSet, AppError> {
    match &config.paths.templates_dir {
        None => Ok(TemplateSet::builtin()),
        Some(dir) => TemplateSet::load_dir(dir).map_err(|err| AppError::Config(err.to_string())),
    }
}

fn build_model(config: &AppConfig, scripted: Option<&Path>) -> Result<ModelHandle, AppError> {
    if let Some(path) = scripted {
        let backend = ScriptedModel::from_file(path)
            .map_err(|err| AppError::Config(format!("bad script {}: {err}", path.display())))?;
        return Ok(ModelHandle::new(backend)
            .named(&config.model.model_name)
            .with_max_tokens(config.model.max_tokens));
    }
    if config.model.endpoint.is_empty() {
        return Err(AppError::Config(
            "no model endpoint configured and no --scripted file given".to_string(),
        ));
    }
    let backend = HttpBackend::new(HttpConfig {
        endpoint: config.model.endpoint.clone(),
        api_key: std::env::var("PONDER_API_KEY").ok(),
        timeout: Duration::from_secs(config.model.timeout_s),
        connection_limit: config.model.connection_limit,
        ..HttpConfig::default()
    })
    .map_err(|err| AppError::Config(err.to_string()))?;
    let cache = ResponseCache::open(config.paths.cache_dir.join("responses.log"))
        .map_err(|err| AppError::Io(err.to_string()))?;
    Ok(ModelHandle::new(backend)
        .with_cache(cache)
        .named(&config.model.model_name)
        .with_max_tokens(config.model.max_tokens))
}

fn write_file(path: &Path, content: &str) -> Result<(), AppError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|err| AppError::Io(err.to_string()))?;
        }
    }
    std::fs::write(path, content).map_err(|err| AppError::Io(err.to_string()))
}

fn run_search_with(
    problem: &str,
    config: &AppConfig,
    templates: &TemplateSet,
    model: &ModelHandle,
    partial_trace_path: &Path,
) -> Result<SearchResult, AppError> {
    let engine = Engine::new(problem, &config.search, model, templates)
        .map_err(|err| AppError::Config(err.to_string()))?;
    match engine.run() {
        Ok(result) => Ok(result),
        Err(SearchError::Aborted { trace, source }) => {
            write_file(partial_trace_path, &trace)?;
            Err(AppError::Aborted {
                message: source.to_string(),
                trace_path: partial_trace_path.display().to_string(),
            })
        }
        Err(other) => Err(AppError::Config(other.to_string())),
    }
}

fn cmd_solve(
    question: &str,
    config: &AppConfig,
    templates: &TemplateSet,
    model: &ModelHandle,
    trace_path: Option<&Path>,
) -> Result<(), AppError> {
    let partial_path = trace_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.paths.report_dir.join("partial_trace.jsonl"));
    let result = run_search_with(question, config, templates, model, &partial_path)?;

    println!("answer: {}", result.answer);
    for (i, step) in result.steps.iter().enumerate() {
        println!("{}. {step}", i + 1);
    }
    if result.used_fallback {
        println!("(no terminal chain found; chain-of-thought fallback used)");
    }
    if let Some(path) = trace_path {
        write_file(path, &result.trace)?;
    }
    Ok(())
}

fn cmd_eval(
    datasets: &[PathBuf],
    config: &AppConfig,
    templates: &TemplateSet,
    model: &ModelHandle,
) -> Result<(), AppError> {
    let strategy: Strategy = config
        .eval
        .strategy
        .parse()
        .map_err(AppError::Config)?;
    let mut tasks: Vec<TaskRecord> = Vec::new();
    let mut seen_ids = std::collections::HashSet::new();
    for path in datasets {
        let loaded = load_dataset(path)
            .map_err(|err| AppError::Data(format!("{}: {err}", path.display())))?;
        for task in loaded {
            if !seen_ids.insert(task.id.clone()) {
                return Err(AppError::Data(format!(
                    "{}: duplicate task id {:?} across datasets",
                    path.display(),
                    task.id
                )));
            }
            tasks.push(task);
        }
    }

    let (report, _results) = run_eval(
        &tasks,
        strategy,
        &config.search,
        templates,
        model,
        config.eval.parallelism,
    )
    .map_err(|err| match err {
        EvalError::Search(SearchError::Aborted { source, .. }) => AppError::Aborted {
            message: source.to_string(),
            trace_path: "(not written for eval runs)".to_string(),
        },
        other => AppError::Config(other.to_string()),
    })?;

    write_file(&config.paths.report_dir.join("report.json"), &report.render_json())?;
    write_file(&config.paths.report_dir.join("summary.csv"), &report.render_csv())?;
    print!("{}", report.render_summary());
    Ok(())
}

struct BenchRow {
    mode: &'static str,
    hits: u32,
    regret_sum: f64,
}

fn cmd_bench(
    spec_path: Option<&Path>,
    runs: u32,
    depth: usize,
    branching: usize,
    margin: f64,
    config: &AppConfig,
) -> Result<(), AppError> {
    let fixed_spec = match spec_path {
        Some(path) => Some(
            SyntheticTreeSpec::from_file(path)
                .map_err(|err| AppError::Data(format!("{}: {err}", path.display())))?,
        ),
        None => None,
    };

    let templates = TemplateSet::builtin();
    let modes = [("dynamic-c", config.search.kappa), ("fixed-c", 0.0)];
    let mut rows = Vec::new();
    for (mode, kappa) in modes {
        let mut row = BenchRow {
            mode,
            hits: 0,
            regret_sum: 0.0,
        };
        for run in 0..runs {
            let seed = derive_seed(config.search.seed, &format!("run-{run}"));
            let spec = match &fixed_spec {
                Some(spec) => spec.clone(),
                None => SyntheticTreeSpec::with_unique_optimum(depth, branching, seed, margin)
                    .map_err(|err| AppError::Data(err.to_string()))?,
            };
            let search = MctsConfig {
                kappa,
                seed,
                expand_width: config.search.expand_width.max(spec.branching),
                ..config.search.clone()
            };
            let model = as_scripted_model(&spec).map_err(|err| AppError::Data(err.to_string()))?;
            let engine = Engine::new(&spec.problem_text(), &search, &model, &templates)
                .map_err(|err| AppError::Config(err.to_string()))?;
            let result = engine.run().map_err(|err| AppError::Config(err.to_string()))?;

            let (optimal_path, optimal_reward) = known_optimum(&spec);
            let chosen = branch_path(&result.steps);
            if chosen.first() == optimal_path.first() {
                row.hits += 1;
            }
            let achieved = spec
                .leaf_index(&chosen)
                .map(|leaf| spec.leaf_rewards[leaf])
                .unwrap_or(0.0);
            row.regret_sum += optimal_reward - achieved;
        }
        rows.push(row);
    }

    println!("mode,runs,hit_rate,mean_regret");
    for row in rows {
        println!(
            "{},{runs},{:.4},{:.6}",
            row.mode,
            row.hits as f64 / runs.max(1) as f64,
            row.regret_sum / runs.max(1) as f64,
        );
    }
    Ok(())
}
