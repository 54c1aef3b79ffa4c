//! Suite manifests and scenario execution.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toolcoder_core::executor::ProcessExecutor;
use toolcoder_core::{
    run_task, CallCounter, ChatModel, FunctionRepository, LlmSession, PipelineConfig, RunContext, RunTrace,
    RunnerConfig, ScriptedModel, Task, Toolbox, Transcript,
};
use toolcoder_world::{MockWorld, WorldFixture};

use crate::metrics::{self, GroundTruthCall};

/// Environment variable carrying the world's base URL into the guest.
pub const BASE_URL_ENV: &str = "BASE_URL";
/// Environment variable carrying the API token into the guest.
pub const TOKEN_ENV: &str = "TOOL_API_TOKEN";

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("cannot read suite {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed suite manifest: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("suite has no scenarios")]
    Empty,
    #[error("scenario {index} ({task_id}): missing file {path}")]
    MissingFile { index: usize, task_id: String, path: String },
    #[error("scenario {index}: {message}")]
    InvalidScenario { index: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub task: Task,
    /// Scripted model transcript; required unless a live model is supplied.
    #[serde(default)]
    pub transcript_path: Option<PathBuf>,
    /// API world fixture; without one, called paths come from the program.
    #[serde(default)]
    pub fixture_path: Option<PathBuf>,
    #[serde(default)]
    pub ground_truth_calls: Vec<GroundTruthCall>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Suite {
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_true")]
    pub trailing_number_extraction: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Manifest {
    List(Vec<Scenario>),
    Suite(Suite),
}

impl Suite {
    pub fn new(scenarios: Vec<Scenario>) -> Self {
        Self {
            scenarios,
            trailing_number_extraction: true,
        }
    }

    /// Reads a manifest (a list of scenarios, or an object with `scenarios`),
    /// resolving relative paths against the manifest's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SuiteError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SuiteError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut suite = match serde_json::from_str(&text)? {
            Manifest::List(scenarios) => Suite::new(scenarios),
            Manifest::Suite(s) => s,
        };
        let dir = path.parent().unwrap_or(Path::new("."));
        for s in &mut suite.scenarios {
            for p in [&mut s.transcript_path, &mut s.fixture_path].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(suite)
    }

    /// Checks that the suite is non-empty, tasks are valid and referenced
    /// files exist. `needs_transcripts` is false when a live model is used.
    pub fn validate(&self, needs_transcripts: bool) -> Result<(), SuiteError> {
        if self.scenarios.is_empty() {
            return Err(SuiteError::Empty);
        }
        for (index, s) in self.scenarios.iter().enumerate() {
            s.task.validate().map_err(|e| SuiteError::InvalidScenario { index, message: e.to_string() })?;
            if needs_transcripts && s.transcript_path.is_none() {
                return Err(SuiteError::InvalidScenario { index, message: "no transcript_path".into() });
            }
            for p in [&s.transcript_path, &s.fixture_path].into_iter().flatten() {
                if !p.is_file() {
                    return Err(SuiteError::MissingFile {
                        index,
                        task_id: s.task.id.clone(),
                        path: p.display().to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// How a suite is run.
#[derive(Clone)]
pub struct SuiteOptions {
    pub config: PipelineConfig,
    /// Runner command; its timeout is replaced by the pipeline's.
    pub runner: RunnerConfig,
    pub workers: usize,
    pub repo: Option<Arc<FunctionRepository>>,
    /// A live model shared by all scenarios instead of their transcripts.
    pub model: Option<Arc<dyn ChatModel>>,
}

impl SuiteOptions {
    pub fn new(config: PipelineConfig, runner: RunnerConfig) -> Self {
        Self {
            config,
            runner,
            workers: 1,
            repo: None,
            model: None,
        }
    }
}

/// Result of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub index: usize,
    pub task_id: String,
    pub success: bool,
    pub accuracy: Option<bool>,
    pub path_rate: Option<f64>,
    pub correctness: Option<f64>,
    pub llm_calls: u64,
    pub reflection_rounds: u32,
    pub final_answer: Option<String>,
    pub error: Option<String>,
    pub trace: RunTrace,
}

impl ScenarioOutcome {
    fn failed(index: usize, task: &Task, message: String) -> Self {
        let mut trace = RunTrace::new(task.id.clone());
        trace.error = Some(message.clone());
        Self {
            index,
            task_id: task.id.clone(),
            success: false,
            accuracy: task.ground_truth_answer.as_ref().map(|_| false),
            path_rate: (!task.ground_truth_tools.is_empty()).then_some(0.0),
            correctness: None,
            llm_calls: 0,
            reflection_rounds: 0,
            final_answer: None,
            error: Some(message),
            trace,
        }
    }
}

/// Runs one scenario in its own world, sandbox and model session.
pub fn run_scenario(
    index: usize,
    scenario: &Scenario,
    toolbox: &Toolbox,
    opts: &SuiteOptions,
    counter: &Arc<CallCounter>,
    trailing_number_extraction: bool,
) -> ScenarioOutcome {
    let task = &scenario.task;
    let world = match &scenario.fixture_path {
        Some(p) => match WorldFixture::load(p).and_then(MockWorld::serve) {
            Ok(w) => Some(w),
            Err(e) => return ScenarioOutcome::failed(index, task, format!("world: {e}")),
        },
        None => None,
    };
    let model: Arc<dyn ChatModel> = match (&opts.model, &scenario.transcript_path) {
        (Some(m), _) => m.clone(),
        (None, Some(p)) => match Transcript::load(p) {
            Ok(t) => Arc::new(ScriptedModel::new(t)),
            Err(e) => return ScenarioOutcome::failed(index, task, format!("transcript: {e}")),
        },
        (None, None) => return ScenarioOutcome::failed(index, task, "no transcript and no live model".into()),
    };

    let mut runner = opts.runner.clone();
    runner.timeout_ms = opts.config.sandbox_timeout_ms;
    if let Some(w) = &world {
        runner = runner.with_env(BASE_URL_ENV, w.base_url());
        if let Some(token) = w.auth_token() {
            runner = runner.with_env(TOKEN_ENV, token);
        }
    }
    let sandbox = match ProcessExecutor::new(runner) {
        Ok(s) => s,
        Err(e) => return ScenarioOutcome::failed(index, task, format!("sandbox: {e}")),
    };

    let session = LlmSession::new(format!("{index}:{}", task.id), model, counter.clone());
    let mut ctx = RunContext::new(toolbox, &opts.config, &sandbox);
    if let Some(repo) = &opts.repo {
        ctx = ctx.with_repo(repo);
    }
    if let Some(w) = &world {
        ctx = ctx.with_world(w);
    }
    let trace = run_task(&ctx, task, &session);
    score(index, scenario, trace, session.call_count(), trailing_number_extraction)
}

fn score(index: usize, scenario: &Scenario, trace: RunTrace, llm_calls: u64, trailing: bool) -> ScenarioOutcome {
    let task = &scenario.task;
    let accuracy = task
        .ground_truth_answer
        .as_deref()
        .map(|gt| metrics::accuracy(trace.final_answer.as_deref(), gt, trailing));
    let path_rate = metrics::path_rate(&trace.called_paths, &task.ground_truth_tools).ok();
    // without a world there is no request log to judge
    let correctness = scenario
        .fixture_path
        .as_ref()
        .and_then(|_| metrics::correctness(&trace.requests, &scenario.ground_truth_calls).ok());
    ScenarioOutcome {
        index,
        task_id: task.id.clone(),
        success: trace.succeeded() && accuracy.unwrap_or(true),
        accuracy,
        path_rate,
        correctness,
        llm_calls,
        reflection_rounds: trace.reflection_rounds,
        final_answer: trace.final_answer.clone(),
        error: trace.error.clone(),
        trace,
    }
}

/// Runs every scenario on a pool of `opts.workers` threads. Outcomes come
/// back in scenario order whatever the completion order.
pub fn run_scenarios(suite: &Suite, toolbox: &Toolbox, opts: &SuiteOptions) -> Vec<ScenarioOutcome> {
    let counter = Arc::new(CallCounter::new());
    let n = suite.scenarios.len();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<ScenarioOutcome>>> = Mutex::new(vec![None; n]);
    std::thread::scope(|s| {
        for _ in 0..opts.workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let outcome = run_scenario(
                    i,
                    &suite.scenarios[i],
                    toolbox,
                    opts,
                    &counter,
                    suite.trailing_number_extraction,
                );
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every scenario ran"))
        .collect()
}
