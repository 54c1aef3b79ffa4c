//! The generation stages and the orchestrator that runs one task end to end:
//! task-to-code, subtask planning, tool selection (with plan reformulation),
//! code generation, execution, and the code-review loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::executor::Sandbox;
use crate::llm::{LlmError, LlmSession};
use crate::model::{
    ExecutionReport, ExecutionStatus, GeneratedProgram, PseudoProgram, RequestRecord, RunTrace, Scaffold, StageTag,
    SubtaskPlan, Task, Toolbox,
};
use crate::prompts;
use crate::reflection::{self, ReflectionError, ReviewContext};
use crate::repo::{FunctionRepository, RepoSnapshot};
use crate::toolbox::{augment_with_repo, render_catalog, render_docs};

/// Placeholder generated programs use for the whole Authorization value.
pub const API_KEY_HEADER_PLACEHOLDER: &str = "YOUR API KEY";
/// Placeholder the codegen prompt asks for inside the bearer header.
pub const API_KEY_PLACEHOLDER: &str = "{API_KEY}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub max_review_rounds: u32,
    pub max_reformulations: u32,
    pub use_repository: bool,
    pub use_reflection: bool,
    pub plan_without_scaffold: bool,
    pub sandbox_timeout_ms: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_review_rounds: 3,
            max_reformulations: 2,
            use_repository: true,
            use_reflection: true,
            plan_without_scaffold: false,
            sandbox_timeout_ms: 60_000,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.sandbox_timeout_ms == 0 {
            return Err(PipelineError::Config("sandbox_timeout_ms must be positive".into()));
        }
        Ok(())
    }

    /// Names of the ablations switched on, for report headers.
    pub fn ablations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !self.use_repository {
            v.push("no-repo");
        }
        if !self.use_reflection {
            v.push("no-reflection");
        }
        if self.plan_without_scaffold {
            v.push("plan-without-scaffold");
        }
        v
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PipelineError {
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("scaffold could not be parsed: {0}")]
    ScaffoldParse(AnalysisError),
    #[error("planner response contains no `# Step` comments")]
    NoSubtasksFound,
    #[error("pseudocode could not be parsed: {0}")]
    PseudoParse(AnalysisError),
    #[error("tools not in the toolbox after reformulation: {}", .0.join(", "))]
    UnresolvableTools(Vec<String>),
    #[error("generated code contains no function definitions")]
    EmptyProgram,
    #[error("generated code could not be parsed: {0}")]
    ProgramParse(AnalysisError),
    #[error(transparent)]
    Reflection(#[from] ReflectionError),
}

/// An API backend the generated programs talk to, with a request log.
pub trait ApiWorld: Send + Sync {
    fn base_url(&self) -> String;
    fn auth_token(&self) -> Option<String>;
    /// Returns and clears the request log.
    fn drain_log(&self) -> Vec<RequestRecord>;
}

fn retry_prompt(prompt: &str, error: &dyn std::fmt::Display) -> String {
    format!(
        "{prompt}\n\nYour previous response could not be used: {error}.\nAnswer again, following the required format exactly."
    )
}

pub fn task_to_code_prompt(task: &Task) -> String {
    prompts::TASK_TO_CODE.render(&[("question", &task.query)])
}

/// Stage 1: the query becomes a function scaffold. One re-prompt on a parse
/// failure.
pub fn task_to_code(llm: &LlmSession, task: &Task) -> Result<Scaffold, PipelineError> {
    let prompt = task_to_code_prompt(task);
    let reply = llm.complete(StageTag::T2c, &prompt)?;
    match analysis::parse_scaffold(&analysis::extract_code(&reply)) {
        Ok(s) => Ok(s),
        Err(e) => {
            let reply = llm.complete(StageTag::T2c, &retry_prompt(&prompt, &e))?;
            analysis::parse_scaffold(&analysis::extract_code(&reply)).map_err(PipelineError::ScaffoldParse)
        }
    }
}

pub fn plan_prompt(task: &Task, scaffold: &Scaffold, toolbox: &Toolbox, without_scaffold: bool) -> String {
    let context = if without_scaffold { task.query.as_str() } else { scaffold.render() };
    prompts::SUBTASK_PLANNING.render(&[
        ("toolbox", &render_catalog(toolbox)),
        ("question", &task.query),
        ("pseudo_code_task", context),
    ])
}

/// Sorted subtasks, plus a warning when the model numbered them out of order.
fn order_steps(reply: &str) -> Option<(Vec<String>, Option<String>)> {
    let mut steps = analysis::parse_step_comments(reply);
    if steps.is_empty() {
        return None;
    }
    let numbers: Vec<u32> = steps.iter().map(|s| s.number).collect();
    let warning = (!numbers.windows(2).all(|w| w[0] < w[1]))
        .then(|| format!("planner step numbers out of order ({numbers:?}); reordered"));
    steps.sort_by_key(|s| s.number);
    Some((steps.into_iter().map(|s| s.text).collect(), warning))
}

/// Stage 2: numbered `# Step` comments from the planner, embedded into the
/// scaffold body.
pub fn plan_subtasks(
    llm: &LlmSession,
    task: &Task,
    scaffold: &Scaffold,
    toolbox: &Toolbox,
    without_scaffold: bool,
    warnings: &mut Vec<String>,
) -> Result<SubtaskPlan, PipelineError> {
    let prompt = plan_prompt(task, scaffold, toolbox, without_scaffold);
    let reply = llm.complete(StageTag::Plan, &prompt)?;
    let parsed = match order_steps(&reply) {
        Some(p) => p,
        None => {
            let reply = llm.complete(StageTag::Plan, &retry_prompt(&prompt, &PipelineError::NoSubtasksFound))?;
            order_steps(&reply).ok_or(PipelineError::NoSubtasksFound)?
        }
    };
    let (subtasks, warning) = parsed;
    warnings.extend(warning);
    Ok(analysis::embed_subtasks(scaffold, &subtasks))
}

pub fn selection_prompt(task: &Task, plan: &SubtaskPlan, toolbox: &Toolbox) -> String {
    prompts::TOOL_SELECTION.render(&[
        ("toolbox", &render_catalog(toolbox)),
        ("question", &task.query),
        ("pseudo_code_task", &plan.annotated_source),
    ])
}

/// Stage 3: `call_api` placeholders for each step. Invented paths are sent
/// back for reformulation at most `max_reformulations` times; returns the
/// pseudocode and the number of reformulation rounds used.
pub fn select_tools(
    llm: &LlmSession,
    task: &Task,
    plan: &SubtaskPlan,
    toolbox: &Toolbox,
    max_reformulations: u32,
) -> Result<(PseudoProgram, u32), PipelineError> {
    let reply = llm.complete(StageTag::Select, &selection_prompt(task, plan, toolbox))?;
    let source = analysis::extract_code(&reply);
    let call_sites = analysis::extract_call_sites(&source).map_err(PipelineError::PseudoParse)?;
    let mut pseudo = PseudoProgram { source, call_sites };
    let mut rounds = 0;
    loop {
        let invalid = reflection::validate_plan(&pseudo, toolbox);
        if invalid.is_empty() {
            return Ok((pseudo, rounds));
        }
        if rounds >= max_reformulations {
            return Err(PipelineError::UnresolvableTools(invalid));
        }
        rounds += 1;
        pseudo = match reflection::reformulate_plan(llm, task, &pseudo, &invalid, toolbox) {
            Ok(p) => p,
            Err(ReflectionError::Analysis(e)) => return Err(PipelineError::PseudoParse(e)),
            Err(e) => return Err(e.into()),
        };
    }
}

pub fn codegen_prompt(task: &Task, pseudo: &PseudoProgram, toolbox: &Toolbox, repo: Option<&RepoSnapshot>) -> String {
    let docs: Vec<_> = pseudo
        .selected_paths()
        .iter()
        .filter_map(|p| toolbox.lookup(p).cloned())
        .collect();
    let docs = match repo {
        Some(snapshot) => augment_with_repo(&docs, snapshot),
        None => docs,
    };
    prompts::CODE_GENERATION.render(&[
        ("base_url", &task.base_url),
        ("question", &task.query),
        ("code_solution", &pseudo.source),
        ("api_doc", &render_docs(&docs)),
    ])
}

/// Stage 4: the executable program, one sub-function per API. Pass `None` for
/// `repo` to leave reusable code out of the prompt.
pub fn generate_program(
    llm: &LlmSession,
    task: &Task,
    pseudo: &PseudoProgram,
    toolbox: &Toolbox,
    repo: Option<&RepoSnapshot>,
) -> Result<GeneratedProgram, PipelineError> {
    let reply = llm.complete(StageTag::Codegen, &codegen_prompt(task, pseudo, toolbox, repo))?;
    let source = analysis::extract_code(&reply);
    analysis::analyze_program(&source, toolbox)
        .map_err(PipelineError::ProgramParse)?
        .ok_or(PipelineError::EmptyProgram)
}

/// Points a program at the attached world: the task's base URL becomes the
/// world's and the key placeholders become the token. Line structure is kept,
/// so traceback line numbers still refer to the stored program.
pub fn bind_placeholders(source: &str, task_base_url: &str, base_url: Option<&str>, token: Option<&str>) -> String {
    let mut out = source.to_string();
    if let Some(url) = base_url {
        let from = task_base_url.trim_end_matches('/');
        if !from.is_empty() {
            out = out.replace(from, url.trim_end_matches('/'));
        }
    }
    if let Some(token) = token {
        out = out
            .replace(API_KEY_HEADER_PLACEHOLDER, &format!("Bearer {token}"))
            .replace(API_KEY_PLACEHOLDER, token);
    }
    out
}

/// What one run needs besides the task and the model session.
pub struct RunContext<'a> {
    pub toolbox: &'a Toolbox,
    pub config: &'a PipelineConfig,
    pub sandbox: &'a dyn Sandbox,
    pub repo: Option<&'a FunctionRepository>,
    pub world: Option<&'a dyn ApiWorld>,
    /// Token substituted for key placeholders when no world supplies one.
    pub api_token: Option<String>,
}

impl<'a> RunContext<'a> {
    pub fn new(toolbox: &'a Toolbox, config: &'a PipelineConfig, sandbox: &'a dyn Sandbox) -> Self {
        Self {
            toolbox,
            config,
            sandbox,
            repo: None,
            world: None,
            api_token: None,
        }
    }

    pub fn with_repo(mut self, repo: &'a FunctionRepository) -> Self {
        self.repo = Some(repo);
        self
    }

    pub fn with_world(mut self, world: &'a dyn ApiWorld) -> Self {
        self.world = Some(world);
        self
    }

    pub fn with_api_token(mut self, token: impl Into<String>) -> Self {
        self.api_token = Some(token.into());
        self
    }

    fn execute(&self, task: &Task, program: &GeneratedProgram, trace: &mut RunTrace) -> ExecutionReport {
        let base_url = self.world.map(|w| w.base_url());
        let token = self.world.and_then(|w| w.auth_token()).or_else(|| self.api_token.clone());
        let bound = GeneratedProgram {
            source: bind_placeholders(&program.source, &task.base_url, base_url.as_deref(), token.as_deref()),
            sub_functions: Vec::new(),
        };
        let report = self
            .sandbox
            .execute(&bound)
            .unwrap_or_else(|e| ExecutionReport::runner_failure(e.to_string(), 0));
        if let Some(world) = self.world {
            let log = world.drain_log();
            trace.record_called_paths(log.iter().map(|r| r.path.as_str()));
            trace.requests.extend(log);
        }
        report
    }
}

/// Runs one task through every stage. Task-level failures never escape: they
/// are recorded in the trace (`error`, and the last report's status).
pub fn run_task(ctx: &RunContext<'_>, task: &Task, llm: &LlmSession) -> RunTrace {
    let mut trace = RunTrace::new(task.id.clone());
    let outcome = run_stages(ctx, task, llm, &mut trace);
    if let Err(e) = outcome {
        trace.error = Some(e.to_string());
    }
    trace.llm_calls = llm.calls();
    trace.final_answer = trace.last_report().filter(|r| r.is_ok()).and_then(|r| r.answer.clone());
    trace
}

fn run_stages(ctx: &RunContext<'_>, task: &Task, llm: &LlmSession, trace: &mut RunTrace) -> Result<(), PipelineError> {
    ctx.config.validate()?;
    let cfg = ctx.config;
    if let Some(world) = ctx.world {
        // requests from an earlier run on the same world are not ours
        world.drain_log();
    }
    let snapshot = match ctx.repo {
        Some(repo) if cfg.use_repository => Some(repo.snapshot()),
        _ => None,
    };

    let scaffold = task_to_code(llm, task)?;
    let plan = plan_subtasks(llm, task, &scaffold, ctx.toolbox, cfg.plan_without_scaffold, &mut trace.warnings)?;
    trace.subtasks = plan.subtasks.clone();
    let (pseudo, reformulations) = match select_tools(llm, task, &plan, ctx.toolbox, cfg.max_reformulations) {
        Ok(v) => v,
        Err(e) => {
            if matches!(e, PipelineError::UnresolvableTools(_)) {
                trace.reformulation_rounds = cfg.max_reformulations;
            }
            return Err(e);
        }
    };
    trace.reformulation_rounds = reformulations;
    let mut program = generate_program(llm, task, &pseudo, ctx.toolbox, snapshot.as_ref())?;

    let mut report = ctx.execute(task, &program, trace);
    loop {
        let status = report.status;
        let exception = report.exception.clone();
        trace.reports.push(report);
        let retryable = matches!(status, ExecutionStatus::Exception | ExecutionStatus::Timeout);
        if status == ExecutionStatus::Ok
            || !retryable
            || !cfg.use_reflection
            || trace.reflection_rounds >= cfg.max_review_rounds
        {
            break;
        }
        trace.reflection_rounds += 1;
        let exception = match (status, exception) {
            (ExecutionStatus::Exception, Some(e)) => e,
            _ => reflection::timeout_exception(cfg.sandbox_timeout_ms),
        };
        let review = ReviewContext {
            program_source: program.source.clone(),
            exception,
            round: trace.reflection_rounds,
        };
        program = reflection::review_code(llm, task, &review, ctx.toolbox)?;
        report = ctx.execute(task, &program, trace);
    }

    if ctx.world.is_none() {
        trace.record_called_paths(pseudo.call_sites.iter().map(|c| c.api_path.as_str()));
    }

    let last = trace.last_report().expect("at least one report").clone();
    if last.is_ok() && cfg.use_repository {
        if let Some(repo) = ctx.repo {
            match repo.harvest(&program, &last, &task.id) {
                Ok(entries) => trace.harvested = entries.into_iter().map(|e| e.api_path).collect(),
                Err(e) => trace.warnings.push(format!("repository harvest failed: {e}")),
            }
        }
    }
    Ok(())
}
