//! Sandbox supervision.
//!
//! A program is written to a fresh work directory and handed to an external
//! runner command, which executes it in the guest runtime and prints exactly
//! one JSON result document on stdout. The runner is killed (with its whole
//! process group) when the wall-clock limit passes.

use std::collections::BTreeMap;
use std::io::Read;
use std::os::unix::process::CommandExt;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ExceptionInfo, ExecutionReport, Frame, GeneratedProgram};

pub const PROGRAM_SLOT: &str = "{program}";
pub const PROGRAM_FILE_NAME: &str = "program.py";
const POLL_INTERVAL: Duration = Duration::from_millis(5);

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("invalid runner config: {0}")]
    Config(String),
    #[error("runner failure: {0}")]
    RunnerFailure(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunnerConfig {
    /// argv template; `{program}` is replaced by the program path, or the path
    /// is appended when no slot is present.
    pub command: Vec<String>,
    pub timeout_ms: u64,
    pub env: BTreeMap<String, String>,
    /// Parent for per-run work directories; the system temp dir when unset.
    pub work_root: Option<PathBuf>,
}

impl RunnerConfig {
    pub fn new(command: Vec<String>, timeout_ms: u64) -> Result<Self, ExecError> {
        let cfg = Self {
            command,
            timeout_ms,
            env: BTreeMap::new(),
            work_root: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Splits a shell-style command line.
    pub fn from_command_line(line: &str, timeout_ms: u64) -> Result<Self, ExecError> {
        let argv = shlex::split(line).ok_or_else(|| ExecError::Config(format!("cannot split `{line}`")))?;
        Self::new(argv, timeout_ms)
    }

    pub fn with_env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env.insert(key.into(), value.into());
        self
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.command.is_empty() {
            return Err(ExecError::Config("runner command is empty".into()));
        }
        if self.timeout_ms == 0 {
            return Err(ExecError::Config("timeout_ms must be positive".into()));
        }
        Ok(())
    }

    fn argv(&self, program: &std::path::Path) -> Vec<String> {
        let path = program.display().to_string();
        let mut argv: Vec<String> = self.command.iter().map(|a| a.replace(PROGRAM_SLOT, &path)).collect();
        // the runner starts inside the work directory, so a relative program
        // path like `target/debug/runner` must be pinned to our own cwd
        let exe = std::path::Path::new(&argv[0]);
        if exe.is_relative() && exe.components().count() > 1 {
            if let Ok(cwd) = std::env::current_dir() {
                argv[0] = cwd.join(exe).display().to_string();
            }
        }
        if !self.command.iter().any(|a| a.contains(PROGRAM_SLOT)) {
            argv.push(path);
        }
        argv
    }
}

/// Anything that can run a program and report `(r, e)`.
pub trait Sandbox: Send + Sync {
    fn execute(&self, program: &GeneratedProgram) -> Result<ExecutionReport, ExecError>;
}

/// The runner's wire document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub status: String,
    #[serde(default, alias = "stdout")]
    pub stdout_text: String,
    #[serde(default)]
    pub exception: Option<DocException>,
    #[serde(default)]
    pub duration_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocException {
    #[serde(rename = "type")]
    pub type_name: String,
    #[serde(default)]
    pub message: String,
    #[serde(default)]
    pub frames: Vec<DocFrame>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocFrame {
    pub file: String,
    pub line: u32,
    pub func: String,
    #[serde(default)]
    pub code: String,
}

/// Maps a result document onto a report. `wall_ms` is used when the document
/// does not carry its own duration.
pub fn report_from_document(doc: ResultDocument, wall_ms: u64) -> Result<ExecutionReport, ExecError> {
    let duration = doc.duration_ms.unwrap_or(wall_ms);
    match doc.status.as_str() {
        "ok" => Ok(ExecutionReport::ok(doc.stdout_text, duration)),
        "exception" => {
            let exc = doc
                .exception
                .ok_or_else(|| ExecError::RunnerFailure("exception document without exception".into()))?;
            if exc.frames.is_empty() {
                return Err(ExecError::RunnerFailure("exception document without frames".into()));
            }
            if exc.frames.iter().any(|f| f.line == 0) {
                return Err(ExecError::RunnerFailure("frame line numbers start at 1".into()));
            }
            let info = ExceptionInfo {
                type_name: exc.type_name,
                message: exc.message,
                frames: exc
                    .frames
                    .into_iter()
                    .map(|f| Frame {
                        file: f.file,
                        line: f.line,
                        function: f.func,
                        source_line: f.code,
                    })
                    .collect(),
            };
            Ok(ExecutionReport::exception(doc.stdout_text, info, duration))
        }
        other => Err(ExecError::RunnerFailure(format!("unknown status `{other}`"))),
    }
}

/// Parses the runner's stdout, tolerating surrounding whitespace only.
pub fn parse_document(stdout: &str) -> Result<ResultDocument, ExecError> {
    serde_json::from_str(stdout.trim())
        .map_err(|e| ExecError::RunnerFailure(format!("malformed result document: {e}")))
}

#[derive(Debug, Clone)]
pub struct ProcessExecutor {
    config: RunnerConfig,
}

impl ProcessExecutor {
    pub fn new(config: RunnerConfig) -> Result<Self, ExecError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &RunnerConfig {
        &self.config
    }

    pub fn execute_source(&self, source: &str) -> Result<ExecutionReport, ExecError> {
        let mut builder = tempfile::Builder::new();
        builder.prefix("toolcoder-run-");
        let dir = match &self.config.work_root {
            Some(root) => builder.tempdir_in(root)?,
            None => builder.tempdir()?,
        };
        let program_path = dir.path().join(PROGRAM_FILE_NAME);
        std::fs::write(&program_path, source)?;
        let result = self.spawn_and_wait(&program_path, dir.path());
        // keep the work directory around when something went wrong
        if !matches!(&result, Ok(r) if r.is_ok()) {
            let _ = dir.keep();
        }
        result
    }

    fn spawn_and_wait(&self, program: &std::path::Path, cwd: &std::path::Path) -> Result<ExecutionReport, ExecError> {
        let argv = self.config.argv(program);
        let mut cmd = Command::new(&argv[0]);
        cmd.args(&argv[1..])
            .current_dir(cwd)
            .envs(&self.config.env)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .process_group(0);
        let started = Instant::now();
        let mut child = cmd
            .spawn()
            .map_err(|e| ExecError::RunnerFailure(format!("cannot spawn `{}`: {e}", argv[0])))?;
        let pid = child.id() as libc::pid_t;

        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stdout.read_to_end(&mut buf);
            buf
        });
        let err_reader = std::thread::spawn(move || {
            let mut buf = Vec::new();
            let _ = stderr.read_to_end(&mut buf);
            buf
        });

        let deadline = started + Duration::from_millis(self.config.timeout_ms);
        let status = loop {
            if let Some(s) = child.try_wait()? {
                break Some(s);
            }
            let now = Instant::now();
            if now >= deadline {
                break None;
            }
            std::thread::sleep(POLL_INTERVAL.min(deadline - now));
        };
        // the group may still hold grandchildren either way; reap them all
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
        let status = match status {
            Some(s) => Some(s),
            None => {
                let _ = child.kill();
                let _ = child.wait();
                None
            }
        };
        let out = out_reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        let wall_ms = started.elapsed().as_millis() as u64;
        let out = String::from_utf8_lossy(&out).into_owned();

        let Some(status) = status else {
            return Ok(ExecutionReport::timeout(String::new(), wall_ms));
        };
        match parse_document(&out) {
            Ok(doc) => report_from_document(doc, wall_ms),
            Err(e) if status.success() => Err(e),
            Err(_) => Err(ExecError::RunnerFailure(format!(
                "runner exited with {status} without a result document: {}",
                String::from_utf8_lossy(&err).trim()
            ))),
        }
    }
}

impl Sandbox for ProcessExecutor {
    fn execute(&self, program: &GeneratedProgram) -> Result<ExecutionReport, ExecError> {
        if program.source.trim().is_empty() {
            return Err(ExecError::RunnerFailure("program source is empty".into()));
        }
        self.execute_source(&program.source)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ExecutionStatus;

    fn program() -> GeneratedProgram {
        GeneratedProgram {
            source: "print('hi')\n".into(),
            sub_functions: vec![],
        }
    }

    fn sh(script: &str, timeout_ms: u64) -> ProcessExecutor {
        let cfg = RunnerConfig::new(
            vec!["sh".into(), "-c".into(), script.into(), "runner".into(), "{program}".into()],
            timeout_ms,
        )
        .unwrap();
        ProcessExecutor::new(cfg).unwrap()
    }

    #[test]
    fn ok_document_maps_to_report() {
        let exec = sh(r#"printf '%s' '{"status":"ok","stdout":"Number of movies...: 8\n"}'"#, 5_000);
        let r = exec.execute(&program()).unwrap();
        assert_eq!(r.status, ExecutionStatus::Ok);
        assert_eq!(r.answer.as_deref(), Some("Number of movies...: 8"));
        assert!(r.exception.is_none());
    }

    #[test]
    fn exception_document_maps_frames() {
        let doc = r#"{"status":"exception","stdout_text":"","exception":{"type":"KeyError","message":"'results'","frames":[{"file":"program.py","line":40,"func":"<module>","code":"main()"},{"file":"program.py","line":17,"func":"main","code":"x = r['results']"}]},"duration_ms":4}"#;
        let exec = sh(&format!("printf '%s' '{doc}'"), 5_000);
        let r = exec.execute(&program()).unwrap();
        assert_eq!(r.status, ExecutionStatus::Exception);
        let e = r.exception.unwrap();
        assert_eq!(e.type_name, "KeyError");
        assert_eq!(e.frames.len(), 2);
        assert_eq!(e.frames[1].line, 17);
        assert_eq!(r.duration_ms, 4);
    }

    #[test]
    fn program_path_and_env_reach_the_runner() {
        let cfg = RunnerConfig::new(
            vec![
                "sh".into(),
                "-c".into(),
                r#"printf '{"status":"ok","stdout_text":"%s %s\\n"}' "$(cat "$1" | tr -d "\n'")" "$BASE_URL""#.into(),
                "runner".into(),
            ],
            5_000,
        )
        .unwrap()
        .with_env("BASE_URL", "http://127.0.0.1:1");
        let r = ProcessExecutor::new(cfg).unwrap().execute(&program()).unwrap();
        assert_eq!(r.answer.as_deref(), Some("print(hi) http://127.0.0.1:1"));
    }

    #[test]
    fn timeout_kills_the_runner() {
        let exec = sh("sleep 5", 100);
        let started = Instant::now();
        let r = exec.execute(&program()).unwrap();
        let elapsed = started.elapsed().as_millis() as u64;
        assert_eq!(r.status, ExecutionStatus::Timeout);
        assert!(r.duration_ms >= 100);
        assert!(elapsed < 100 + 500, "took {elapsed} ms");
    }

    #[test]
    fn missing_document_is_runner_failure() {
        assert!(matches!(sh("exit 3", 5_000).execute(&program()), Err(ExecError::RunnerFailure(_))));
        assert!(matches!(sh("echo nope", 5_000).execute(&program()), Err(ExecError::RunnerFailure(_))));
        let no_frames = r#"printf '%s' '{"status":"exception","exception":{"type":"E","frames":[]}}'"#;
        assert!(matches!(sh(no_frames, 5_000).execute(&program()), Err(ExecError::RunnerFailure(_))));
    }

    #[test]
    fn config_validation() {
        assert!(RunnerConfig::new(vec![], 10).is_err());
        assert!(RunnerConfig::new(vec!["x".into()], 0).is_err());
        let cfg = RunnerConfig::from_command_line("python3 -u 'my runner.py' {program}", 10).unwrap();
        assert_eq!(cfg.command, vec!["python3", "-u", "my runner.py", "{program}"]);
    }
}
