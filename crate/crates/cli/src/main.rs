//! `toolcoder` command line: run one task, run a benchmark suite, inspect the
//! function repository, or check a toolbox file.
//!
//! Exit codes: 0 success, 1 task failure or runtime error, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use toolcoder_core::{
    load_toolbox, run_task, CallCounter, ChatModel, FunctionRepository, HttpChatModel, LlmSession, PipelineConfig,
    ProcessExecutor, ProviderConfig, RunContext, RunnerConfig, ScriptedModel, Task, Transcript,
};
use toolcoder_eval::{cumulative_csv, render_table, run_suite, Suite, SuiteOptions};
use toolcoder_world::{MockWorld, WorldFixture};

const RUNNER_ENV: &str = "TOOLCODER_RUNNER";
const DEFAULT_RUNNER: &str = "python3 -m toolcoder_runner {program}";
const BASE_URL_ENV: &str = "BASE_URL";
const TOKEN_ENV: &str = "TOOL_API_TOKEN";

#[derive(Parser)]
#[command(name = "toolcoder", version, about = "Solve API tasks by generating, running and repairing Python programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task end to end and print its answer.
    Run(RunArgs),
    /// Run a scenario suite and write a metrics report.
    Bench(BenchArgs),
    /// Inspect or clear the function repository.
    Repo {
        #[command(subcommand)]
        action: RepoAction,
    },
    /// Check that a toolbox file loads.
    ValidateToolbox { path: PathBuf },
}

#[derive(Subcommand)]
enum RepoAction {
    /// Stored paths with their function names.
    List {
        #[arg(long)]
        repo: PathBuf,
    },
    /// Source stored for one API path.
    Show {
        #[arg(long)]
        repo: PathBuf,
        api_path: String,
    },
    /// Remove every entry.
    Clear {
        #[arg(long)]
        repo: PathBuf,
    },
}

#[derive(Args)]
struct ModelArgs {
    /// Scripted transcript replacing the live model.
    #[arg(long = "mock-llm", value_name = "TRANSCRIPT")]
    mock_llm: Option<PathBuf>,
    /// Chat-completions endpoint of a live model.
    #[arg(long, value_name = "URL")]
    provider_url: Option<String>,
    #[arg(long, default_value = "gpt-4o-mini")]
    model: String,
    /// Environment variable holding the provider API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
}

#[derive(Args)]
struct PipelineArgs {
    /// Toolbox of API documents (JSON).
    #[arg(long)]
    toolbox: PathBuf,
    /// Function repository store (JSONL).
    #[arg(long)]
    repo: Option<PathBuf>,
    /// Runner command; `{program}` marks the program path. Defaults to
    /// $TOOLCODER_RUNNER, then the Python runner module.
    #[arg(long)]
    runner: Option<String>,
    /// Neither read nor write the function repository.
    #[arg(long)]
    no_repo: bool,
    /// Skip the review loop after a failed execution.
    #[arg(long)]
    no_reflection: bool,
    /// Plan from the raw query instead of the generated scaffold.
    #[arg(long)]
    plan_without_scaffold: bool,
    /// Review rounds after failed executions.
    #[arg(long = "max-review", default_value_t = 3)]
    max_review: u32,
    /// Attempts to repair a plan that names unknown tools.
    #[arg(long, default_value_t = 2)]
    max_reformulations: u32,
    /// Wall-clock limit per program execution.
    #[arg(long, default_value_t = 60_000)]
    timeout_ms: u64,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            max_review_rounds: self.max_review,
            max_reformulations: self.max_reformulations,
            use_repository: !self.no_repo,
            use_reflection: !self.no_reflection,
            plan_without_scaffold: self.plan_without_scaffold,
            sandbox_timeout_ms: self.timeout_ms,
        }
    }

    fn runner(&self) -> Result<RunnerConfig> {
        let line = self
            .runner
            .clone()
            .or_else(|| std::env::var(RUNNER_ENV).ok())
            .unwrap_or_else(|| DEFAULT_RUNNER.to_string());
        Ok(RunnerConfig::from_command_line(&line, self.timeout_ms)?)
    }

    fn open_repo(&self) -> Result<Option<FunctionRepository>> {
        if self.no_repo {
            return Ok(None);
        }
        let Some(path) = &self.repo else { return Ok(None) };
        let (repo, corruption) = FunctionRepository::open_recovering(path)?;
        if let Some(c) = corruption {
            eprintln!("warning: repository {} was corrupt at line {} ({}); later lines dropped", path.display(), c.line, c.message);
        }
        Ok(Some(repo))
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Mock API world fixture to run against.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// Task id recorded in the trace and in harvested entries.
    #[arg(long, default_value = "task")]
    task_id: String,
    /// Write the full run trace as JSON.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Natural-language task.
    query: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Suite manifest (JSON).
    #[arg(long)]
    suite: PathBuf,
    /// Live model used for every scenario instead of their transcripts.
    #[arg(long, value_name = "URL")]
    provider_url: Option<String>,
    #[arg(long, default_value = "gpt-4o-mini")]
    model: String,
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Scenarios run in parallel.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Metrics report destination.
    #[arg(long, default_value = "metrics.json")]
    out: PathBuf,
    /// Also write the cumulative curve as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// Failure the user can fix by changing the command line.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn live_model(url: &str, model: &str, key_env: &str) -> Arc<dyn ChatModel> {
    let mut cfg = ProviderConfig::new(url, model);
    cfg.api_key_env = key_env.to_string();
    Arc::new(HttpChatModel::new(cfg))
}

fn chat_model(args: &ModelArgs) -> Result<Arc<dyn ChatModel>> {
    match (&args.mock_llm, &args.provider_url) {
        (Some(_), Some(_)) => Err(UsageError("give either --mock-llm or --provider-url, not both".into()).into()),
        (Some(path), None) => Ok(Arc::new(ScriptedModel::new(Transcript::load(path)?))),
        (None, Some(url)) => Ok(live_model(url, &args.model, &args.api_key_env)),
        (None, None) => Err(UsageError("`run` needs a model: pass --mock-llm <transcript> or --provider-url <url>".into()).into()),
    }
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let model = chat_model(&args.model)?;
    let toolbox = load_toolbox(&args.pipeline.toolbox)?;
    let config = args.pipeline.config();
    let task = Task::new(&args.task_id, &args.query).map_err(|e| UsageError(e.to_string()))?;
    let world = match &args.fixture {
        Some(p) => Some(MockWorld::serve(WorldFixture::load(p)?)?),
        None => None,
    };
    let mut runner = args.pipeline.runner()?;
    if let Some(w) = &world {
        runner = runner.with_env(BASE_URL_ENV, w.base_url());
        if let Some(t) = w.auth_token() {
            runner = runner.with_env(TOKEN_ENV, t);
        }
    }
    let sandbox = ProcessExecutor::new(runner)?;
    let repo = args.pipeline.open_repo()?;

    let mut ctx = RunContext::new(&toolbox, &config, &sandbox);
    if let Some(r) = &repo {
        ctx = ctx.with_repo(r);
    }
    if let Some(w) = &world {
        ctx = ctx.with_world(w);
    }
    if let Ok(token) = std::env::var(TOKEN_ENV) {
        ctx = ctx.with_api_token(token);
    }
    let session = LlmSession::new(&task.id, model, Arc::new(CallCounter::new()));
    let trace = run_task(&ctx, &task, &session);

    if let Some(path) = &args.trace_out {
        std::fs::write(path, serde_json::to_string_pretty(&trace)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(answer) = &trace.final_answer {
        println!("{answer}");
    }
    let stages: Vec<&str> = trace.stages().into_iter().map(|s| s.as_str()).collect();
    println!("llm_calls: {} ({})", trace.llm_calls.len(), stages.join(" "));
    println!("reflection_rounds: {}", trace.reflection_rounds);
    println!("called_paths: {}", trace.called_paths.join(", "));
    if let Some(r) = trace.last_report() {
        println!("status: {:?}", r.status);
    }
    if !trace.harvested.is_empty() {
        println!("harvested: {}", trace.harvested.join(", "));
    }
    for w in &trace.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(e) = &trace.error {
        eprintln!("error: {e}");
    }
    Ok(if trace.succeeded() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    let suite = Suite::load(&args.suite)?;
    suite.validate(args.provider_url.is_none())?;
    let toolbox = load_toolbox(&args.pipeline.toolbox)?;
    let config = args.pipeline.config();
    let mut opts = SuiteOptions::new(config.clone(), args.pipeline.runner()?);
    opts.workers = args.workers.max(1);
    opts.model = args
        .provider_url
        .as_deref()
        .map(|url| live_model(url, &args.model, &args.api_key_env));
    if config.use_repository {
        opts.repo = Some(Arc::new(args.pipeline.open_repo()?.unwrap_or_else(FunctionRepository::in_memory)));
    }
    let (report, _) = run_suite(&suite, &toolbox, &opts);
    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&args.out, &json).with_context(|| format!("writing {}", args.out.display()))?;
    if let Some(csv) = &args.csv {
        std::fs::write(csv, cumulative_csv(&report)).with_context(|| format!("writing {}", csv.display()))?;
    }
    println!("{json}");
    eprint!("{}", render_table(&report));
    Ok(ExitCode::SUCCESS)
}

fn open_strict(path: &Path) -> Result<FunctionRepository> {
    Ok(FunctionRepository::open(path)?)
}

fn cmd_repo(action: RepoAction) -> Result<ExitCode> {
    match action {
        RepoAction::List { repo } => {
            for e in open_strict(&repo)?.entries() {
                println!("{}\t{}\t{}", e.api_path, e.function_name, e.origin_task_id);
            }
        }
        RepoAction::Show { repo, api_path } => match open_strict(&repo)?.get(&api_path) {
            Some(e) => print!("{}", e.source),
            None => bail!("no entry for {api_path}"),
        },
        RepoAction::Clear { repo } => {
            let r = open_strict(&repo)?;
            let n = r.len();
            r.clear()?;
            println!("cleared {n} entries");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Repo { action } => cmd_repo(action),
        Command::ValidateToolbox { path } => load_toolbox(&path).map_err(Into::into).map(|t| {
            println!("{}: {} tools", path.display(), t.len());
            ExitCode::SUCCESS
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
