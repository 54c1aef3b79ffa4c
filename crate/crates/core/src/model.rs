//! Domain types shared across the pipeline.
//!
//! Everything here is a plain value: construction and validation only. Parsing
//! of guest source lives in [`crate::analysis`].

use std::collections::{BTreeMap, HashSet};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// On-disk format version written into every top-level document.
pub const FORMAT_VERSION: u32 = 1;

/// Milliseconds since the Unix epoch.
pub type TimestampMs = u64;

pub fn now_ms() -> TimestampMs {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("task query is empty")]
    EmptyQuery,
    #[error("ground-truth tool `{0}` listed twice")]
    DuplicateGroundTruthTool(String),
    #[error("api_path `{0}` must start with '/'")]
    BadApiPath(String),
    #[error("tool `{path}` declares parameter `{name}` twice")]
    DuplicateParameter { path: String, name: String },
    #[error("tool `{0}` has an empty reusable_code field")]
    EmptyReusableCode(String),
    #[error("toolbox is empty")]
    EmptyToolbox,
    #[error("duplicate api_path `{0}`")]
    DuplicatePath(String),
    #[error("call site for `{0}` has an empty or inverted span")]
    BadCallSite(String),
    #[error("execution report is inconsistent: {0}")]
    InconsistentReport(&'static str),
}

/// A user query plus the scenario metadata needed to score it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub ground_truth_tools: Vec<String>,
    #[serde(default)]
    pub ground_truth_answer: Option<String>,
    #[serde(default = "default_base_url")]
    pub base_url: String,
}

pub fn default_base_url() -> String {
    "https://api.themoviedb.org".to_string()
}

impl Task {
    pub fn new(id: impl Into<String>, query: impl Into<String>) -> Result<Self, ModelError> {
        let task = Self {
            id: id.into(),
            query: query.into(),
            ground_truth_tools: Vec::new(),
            ground_truth_answer: None,
            base_url: default_base_url(),
        };
        task.validate()?;
        Ok(task)
    }

    pub fn with_ground_truth_tools<I, S>(mut self, tools: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.ground_truth_tools = tools.into_iter().map(Into::into).collect();
        self.validate()?;
        Ok(self)
    }

    pub fn with_answer(mut self, answer: impl Into<String>) -> Self {
        self.ground_truth_answer = Some(answer.into());
        self
    }

    pub fn with_base_url(mut self, base_url: impl Into<String>) -> Self {
        self.base_url = base_url.into();
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.query.trim().is_empty() {
            return Err(ModelError::EmptyQuery);
        }
        let mut seen = HashSet::new();
        for tool in &self.ground_truth_tools {
            if !seen.insert(tool.as_str()) {
                return Err(ModelError::DuplicateGroundTruthTool(tool.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolParameter {
    pub name: String,
    #[serde(rename = "type", alias = "type_name")]
    pub type_name: String,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

/// Documentation for one REST endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDoc {
    pub api_path: String,
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub parameters: Vec<ToolParameter>,
    #[serde(default)]
    pub response_schema: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reusable_code: Option<String>,
}

fn default_method() -> String {
    "GET".to_string()
}

impl ToolDoc {
    pub fn new(api_path: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            api_path: api_path.into(),
            method: default_method(),
            description: description.into(),
            parameters: Vec::new(),
            response_schema: serde_json::Value::Null,
            reusable_code: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !self.api_path.starts_with('/') {
            return Err(ModelError::BadApiPath(self.api_path.clone()));
        }
        let mut seen = HashSet::new();
        for p in &self.parameters {
            if !seen.insert(p.name.as_str()) {
                return Err(ModelError::DuplicateParameter {
                    path: self.api_path.clone(),
                    name: p.name.clone(),
                });
            }
        }
        if matches!(&self.reusable_code, Some(code) if code.trim().is_empty()) {
            return Err(ModelError::EmptyReusableCode(self.api_path.clone()));
        }
        Ok(())
    }
}

/// The candidate toolbox, keyed by exact path template.
///
/// Insertion order is kept so prompts render tools in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Toolbox {
    tools: Vec<ToolDoc>,
    index: BTreeMap<String, usize>,
}

impl Toolbox {
    pub fn new(tools: Vec<ToolDoc>) -> Result<Self, ModelError> {
        if tools.is_empty() {
            return Err(ModelError::EmptyToolbox);
        }
        let mut index = BTreeMap::new();
        for (i, doc) in tools.iter().enumerate() {
            doc.validate()?;
            if index.insert(doc.api_path.clone(), i).is_some() {
                return Err(ModelError::DuplicatePath(doc.api_path.clone()));
            }
        }
        Ok(Self { tools, index })
    }

    /// Exact template lookup; a concretized path such as
    /// `/3/person/1769/movie_credits` never matches its template.
    pub fn lookup(&self, api_path: &str) -> Option<&ToolDoc> {
        self.index.get(api_path).map(|&i| &self.tools[i])
    }

    pub fn contains(&self, api_path: &str) -> bool {
        self.index.contains_key(api_path)
    }

    pub fn tools(&self) -> &[ToolDoc] {
        &self.tools
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.tools.iter().map(|t| t.api_path.as_str())
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldParam {
    pub name: String,
    pub annotation: String,
}

/// A parsed function skeleton: signature, docstring, empty body, main guard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scaffold {
    pub function_name: String,
    pub params: Vec<ScaffoldParam>,
    pub return_annotation: String,
    pub docstring: String,
    pub body_source: String,
    pub main_guard_source: String,
    pub raw_source: String,
}

impl Scaffold {
    pub fn render(&self) -> &str {
        &self.raw_source
    }
}

/// Subtasks embedded into the scaffold body as numbered step comments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskPlan {
    pub subtasks: Vec<String>,
    pub annotated_source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallSite {
    pub api_path: String,
    pub params_literal: String,
    pub byte_span: (usize, usize),
}

impl CallSite {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.api_path.is_empty() || self.byte_span.0 >= self.byte_span.1 {
            return Err(ModelError::BadCallSite(self.api_path.clone()));
        }
        Ok(())
    }
}

/// Pseudocode: the plan with `call_api` placeholders filled in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoProgram {
    pub source: String,
    pub call_sites: Vec<CallSite>,
}

impl PseudoProgram {
    /// Distinct call-site paths in first-occurrence order.
    pub fn selected_paths(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.call_sites
            .iter()
            .filter(|c| seen.insert(c.api_path.as_str()))
            .map(|c| c.api_path.clone())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubFunction {
    pub name: String,
    pub api_path: Option<String>,
    pub span: (usize, usize),
    /// Byte span of the `# api_path:` marker line directly above the def, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker_span: Option<(usize, usize)>,
}

/// An executable program assembled from the pseudocode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedProgram {
    pub source: String,
    pub sub_functions: Vec<SubFunction>,
}

impl GeneratedProgram {
    pub fn function_source(&self, f: &SubFunction) -> &str {
        &self.source[f.span.0..f.span.1]
    }

    /// Paths of the tools the program actually wraps (T_s as realized).
    pub fn bound_paths(&self) -> Vec<&str> {
        self.sub_functions
            .iter()
            .filter_map(|f| f.api_path.as_deref())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Ok,
    Exception,
    Timeout,
    RunnerFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub file: String,
    pub line: u32,
    pub function: String,
    #[serde(default)]
    pub source_line: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionInfo {
    pub type_name: String,
    pub message: String,
    pub frames: Vec<Frame>,
}

/// The outcome `(r, e)` of running a program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub status: ExecutionStatus,
    pub stdout: String,
    pub answer: Option<String>,
    pub exception: Option<ExceptionInfo>,
    pub duration_ms: u64,
}

impl ExecutionReport {
    pub fn ok(stdout: impl Into<String>, duration_ms: u64) -> Self {
        let stdout = stdout.into();
        Self {
            answer: last_nonempty_line(&stdout),
            status: ExecutionStatus::Ok,
            stdout,
            exception: None,
            duration_ms,
        }
    }

    pub fn exception(stdout: impl Into<String>, info: ExceptionInfo, duration_ms: u64) -> Self {
        Self {
            status: ExecutionStatus::Exception,
            stdout: stdout.into(),
            answer: None,
            exception: Some(info),
            duration_ms,
        }
    }

    pub fn timeout(stdout: impl Into<String>, duration_ms: u64) -> Self {
        Self {
            status: ExecutionStatus::Timeout,
            stdout: stdout.into(),
            answer: None,
            exception: None,
            duration_ms,
        }
    }

    pub fn runner_failure(diagnostic: impl Into<String>, duration_ms: u64) -> Self {
        Self {
            status: ExecutionStatus::RunnerFailure,
            stdout: diagnostic.into(),
            answer: None,
            exception: None,
            duration_ms,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecutionStatus::Ok
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match self.status {
            ExecutionStatus::Ok if self.exception.is_some() => {
                Err(ModelError::InconsistentReport("ok report carries an exception"))
            }
            ExecutionStatus::Exception => match &self.exception {
                None => Err(ModelError::InconsistentReport("exception report without exception")),
                Some(e) if e.frames.is_empty() => {
                    Err(ModelError::InconsistentReport("exception without frames"))
                }
                Some(e) if e.frames.iter().any(|f| f.line == 0) => {
                    Err(ModelError::InconsistentReport("frame line numbers start at 1"))
                }
                Some(_) => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

/// The final non-empty line of `text`, trimmed.
pub fn last_nonempty_line(text: &str) -> Option<String> {
    text.lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(str::to_string)
}

/// One harvested sub-function, keyed by the endpoint it wraps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepoEntry {
    pub api_path: String,
    pub function_name: String,
    pub source: String,
    pub origin_task_id: String,
    pub created_at: TimestampMs,
}

/// Pipeline stage that issued a model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTag {
    T2c,
    Plan,
    Select,
    Codegen,
    Reformulate,
    Review,
}

impl StageTag {
    pub const ALL: [StageTag; 6] = [
        StageTag::T2c,
        StageTag::Plan,
        StageTag::Select,
        StageTag::Codegen,
        StageTag::Reformulate,
        StageTag::Review,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageTag::T2c => "t2c",
            StageTag::Plan => "plan",
            StageTag::Select => "select",
            StageTag::Codegen => "codegen",
            StageTag::Reformulate => "reformulate",
            StageTag::Review => "review",
        }
    }
}

impl std::fmt::Display for StageTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmCall {
    pub stage: StageTag,
    pub prompt: String,
    pub response: String,
}

/// One request observed by an API world.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestRecord {
    /// Matched path template, or the raw request path when no route matched.
    pub path: String,
    pub matched: bool,
    pub params: BTreeMap<String, String>,
    pub status: u16,
    pub timestamp_ms: TimestampMs,
}

/// Everything observable about one pipeline run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunTrace {
    pub task_id: String,
    pub llm_calls: Vec<LlmCall>,
    pub called_paths: Vec<String>,
    pub reports: Vec<ExecutionReport>,
    pub reflection_rounds: u32,
    pub reformulation_rounds: u32,
    pub final_answer: Option<String>,
    #[serde(default)]
    pub subtasks: Vec<String>,
    #[serde(default)]
    pub requests: Vec<RequestRecord>,
    #[serde(default)]
    pub harvested: Vec<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
}

impl RunTrace {
    pub fn new(task_id: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            ..Self::default()
        }
    }

    pub fn last_report(&self) -> Option<&ExecutionReport> {
        self.reports.last()
    }

    pub fn succeeded(&self) -> bool {
        self.last_report().is_some_and(ExecutionReport::is_ok)
    }

    pub fn stages(&self) -> Vec<StageTag> {
        self.llm_calls.iter().map(|c| c.stage).collect()
    }

    /// Appends paths keeping only the first occurrence of each.
    pub fn record_called_paths<'a>(&mut self, paths: impl IntoIterator<Item = &'a str>) {
        for p in paths {
            if !self.called_paths.iter().any(|c| c == p) {
                self.called_paths.push(p.to_string());
            }
        }
    }

    /// Blanks wall-clock fields so two traces can be compared for determinism.
    pub fn without_timings(&self) -> Self {
        let mut t = self.clone();
        for r in &mut t.reports {
            r.duration_ms = 0;
        }
        for r in &mut t.requests {
            r.timestamp_ms = 0;
        }
        t
    }
}
