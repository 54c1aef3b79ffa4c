//! Core of the ToolCoder pipeline: domain types, lexical Python analysis,
//! prompt templates, the model gateway, the sandbox supervisor, the reusable
//! function repository, error reflection, and the stage orchestrator.

pub mod analysis;
pub mod executor;
pub mod llm;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod reflection;
pub mod repo;
pub mod toolbox;

pub use executor::{ExecError, ProcessExecutor, RunnerConfig, Sandbox};
pub use llm::{CallCounter, ChatModel, HttpChatModel, LlmError, LlmSession, ProviderConfig, ScriptedModel, Transcript, TranscriptEntry};
pub use model::*;
pub use pipeline::{run_task, ApiWorld, PipelineConfig, PipelineError, RunContext};
pub use repo::{FunctionRepository, RepoError, RepoSnapshot};
pub use toolbox::{load_toolbox, parse_toolbox, ToolboxError};
