//! Language-model gateway.
//!
//! Two backends sit behind [`ChatModel`]: a scripted transcript for
//! deterministic runs and an HTTP adapter speaking the common
//! chat-completions wire format. [`CallCounter`] keeps per-task call counts and
//! [`LlmSession`] binds a backend to one task, logging every exchange.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LlmCall, StageTag};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("provider error after {attempts} attempt(s): {message}")]
    Provider { attempts: u32, message: String },
    #[error("transcript exhausted at {stage} call")]
    TranscriptExhausted { stage: StageTag },
    #[error("transcript mismatch: {0}")]
    TranscriptMismatch(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("cannot load transcript: {0}")]
    BadTranscript(String),
}

pub trait ChatModel: Send + Sync {
    fn chat(&self, stage: StageTag, prompt: &str) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub stage: StageTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub must_contain: Option<Vec<String>>,
    pub response: String,
}

impl TranscriptEntry {
    pub fn new(stage: StageTag, response: impl Into<String>) -> Self {
        Self { stage, must_contain: None, response: response.into() }
    }

    pub fn expecting<I, S>(mut self, needles: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.must_contain = Some(needles.into_iter().map(Into::into).collect());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new(entries: Vec<TranscriptEntry>) -> Self {
        Self { entries }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::BadTranscript(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| LlmError::BadTranscript(format!("{}: {e}", path.display())))
    }
}

/// Replays a transcript strictly in order, one entry per call.
#[derive(Debug)]
pub struct ScriptedModel {
    remaining: Mutex<VecDeque<TranscriptEntry>>,
}

impl ScriptedModel {
    pub fn new(transcript: Transcript) -> Self {
        Self {
            remaining: Mutex::new(transcript.entries.into()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.remaining.lock().unwrap().len()
    }
}

impl ChatModel for ScriptedModel {
    fn chat(&self, stage: StageTag, prompt: &str) -> Result<String, LlmError> {
        let mut queue = self.remaining.lock().unwrap();
        let Some(entry) = queue.front() else {
            return Err(LlmError::TranscriptExhausted { stage });
        };
        if entry.stage != stage {
            return Err(LlmError::TranscriptMismatch(format!(
                "expected a {} call, got {stage}",
                entry.stage
            )));
        }
        if let Some(needles) = &entry.must_contain {
            if let Some(missing) = needles.iter().find(|n| !prompt.contains(n.as_str())) {
                return Err(LlmError::TranscriptMismatch(format!(
                    "{stage} prompt does not contain {missing:?}"
                )));
            }
        }
        Ok(queue.pop_front().unwrap().response)
    }
}

/// Endpoint settings for a hosted chat model. The API key itself is read from
/// the named environment variable at call time and never stored or logged.
#[derive(Clone, PartialEq)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub system_prompt: String,
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
}

impl std::fmt::Debug for ProviderConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProviderConfig")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key_env", &self.api_key_env)
            .field("temperature", &self.temperature)
            .finish_non_exhaustive()
    }
}

impl ProviderConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: "OPENAI_API_KEY".to_string(),
            temperature: 0.0,
            system_prompt: "You are a helpful assistant.".to_string(),
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
        }
    }
}

pub struct HttpChatModel {
    config: ProviderConfig,
    agent: ureq::Agent,
}

impl HttpChatModel {
    pub fn new(config: ProviderConfig) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Self { config, agent }
    }

    fn request_body(&self, prompt: &str) -> serde_json::Value {
        serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": self.config.system_prompt},
                {"role": "user", "content": prompt},
            ],
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> Result<String, String> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_json(body.clone()).map_err(|e| match e {
            ureq::Error::Status(code, _) => format!("HTTP {code}"),
            ureq::Error::Transport(t) => format!("transport: {}", t.kind()),
        })?;
        let value: serde_json::Value = resp.into_json().map_err(|e| format!("bad response body: {e}"))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| "response has no choices[0].message.content".to_string())
    }
}

impl ChatModel for HttpChatModel {
    fn chat(&self, _stage: StageTag, prompt: &str) -> Result<String, LlmError> {
        let body = self.request_body(prompt);
        let attempts = self.config.max_attempts.max(1);
        let mut backoff = self.config.initial_backoff;
        let mut last = String::new();
        for n in 1..=attempts {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => last = e,
            }
            if n < attempts {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
        }
        Err(LlmError::Provider { attempts, message: last })
    }
}

/// Per-task model call counts, shared across worker threads.
#[derive(Debug, Default)]
pub struct CallCounter {
    counts: Mutex<HashMap<String, u64>>,
}

impl CallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, task_id: &str) {
        self.counts.lock().unwrap().entry(task_id.to_string()).or_insert(0);
    }

    fn increment(&self, task_id: &str) {
        *self.counts.lock().unwrap().entry(task_id.to_string()).or_insert(0) += 1;
    }

    pub fn call_count(&self, task_id: &str) -> Result<u64, LlmError> {
        self.counts
            .lock()
            .unwrap()
            .get(task_id)
            .copied()
            .ok_or_else(|| LlmError::UnknownTask(task_id.to_string()))
    }
}

/// A model bound to one task: counts and logs every call.
pub struct LlmSession {
    task_id: String,
    model: Arc<dyn ChatModel>,
    counter: Arc<CallCounter>,
    log: Mutex<Vec<LlmCall>>,
}

impl LlmSession {
    pub fn new(task_id: impl Into<String>, model: Arc<dyn ChatModel>, counter: Arc<CallCounter>) -> Self {
        let task_id = task_id.into();
        counter.register(&task_id);
        Self {
            task_id,
            model,
            counter,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn complete(&self, stage: StageTag, prompt: &str) -> Result<String, LlmError> {
        if prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        self.counter.increment(&self.task_id);
        let response = self.model.chat(stage, prompt)?;
        self.log.lock().unwrap().push(LlmCall {
            stage,
            prompt: prompt.to_string(),
            response: response.clone(),
        });
        Ok(response)
    }

    pub fn call_count(&self) -> u64 {
        self.counter.call_count(&self.task_id).unwrap_or(0)
    }

    pub fn calls(&self) -> Vec<LlmCall> {
        self.log.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(entries: Vec<TranscriptEntry>) -> LlmSession {
        LlmSession::new("t", Arc::new(ScriptedModel::new(Transcript::new(entries))), Arc::new(CallCounter::new()))
    }

    #[test]
    fn scripted_echo() {
        let s = session(vec![TranscriptEntry::new(StageTag::T2c, "def f...")]);
        assert_eq!(s.complete(StageTag::T2c, "p").unwrap(), "def f...");
        assert_eq!(s.call_count(), 1);
        assert_eq!(
            s.complete(StageTag::Plan, "p"),
            Err(LlmError::TranscriptExhausted { stage: StageTag::Plan })
        );
    }

    #[test]
    fn wrong_stage_is_a_mismatch() {
        let s = session(vec![TranscriptEntry::new(StageTag::T2c, "def f...")]);
        assert!(matches!(s.complete(StageTag::Plan, "p"), Err(LlmError::TranscriptMismatch(_))));
    }

    #[test]
    fn must_contain_is_checked() {
        let s = session(vec![TranscriptEntry::new(StageTag::Select, "x").expecting(["call_api"])]);
        assert!(matches!(s.complete(StageTag::Select, "no token here"), Err(LlmError::TranscriptMismatch(_))));
        let s = session(vec![TranscriptEntry::new(StageTag::Select, "x").expecting(["call_api"])]);
        assert_eq!(s.complete(StageTag::Select, "use call_api(...)").unwrap(), "x");
    }

    #[test]
    fn unknown_and_fresh_tasks() {
        let counter = Arc::new(CallCounter::new());
        assert_eq!(counter.call_count("nope"), Err(LlmError::UnknownTask("nope".into())));
        let _s = LlmSession::new("fresh", Arc::new(ScriptedModel::new(Transcript::default())), counter.clone());
        assert_eq!(counter.call_count("fresh"), Ok(0));
    }

    #[test]
    fn counting_is_exact_under_concurrency() {
        struct Echo;
        impl ChatModel for Echo {
            fn chat(&self, _: StageTag, p: &str) -> Result<String, LlmError> {
                Ok(p.to_string())
            }
        }
        let counter = Arc::new(CallCounter::new());
        let model: Arc<dyn ChatModel> = Arc::new(Echo);
        std::thread::scope(|scope| {
            for t in 0..8 {
                let counter = counter.clone();
                let model = model.clone();
                scope.spawn(move || {
                    let s = LlmSession::new(format!("task{}", t % 2), model, counter);
                    for _ in 0..250 {
                        s.complete(StageTag::Plan, "p").unwrap();
                    }
                });
            }
        });
        assert_eq!(counter.call_count("task0").unwrap(), 1000);
        assert_eq!(counter.call_count("task1").unwrap(), 1000);
    }

    #[test]
    fn transcript_json_shape() {
        let t: Transcript = serde_json::from_str(
            r#"{"entries":[{"stage":"t2c","must_contain":["Python Function"],"response":"..."}]}"#,
        )
        .unwrap();
        assert_eq!(t.entries[0].stage, StageTag::T2c);
        assert_eq!(t.entries[0].must_contain.as_deref(), Some(&["Python Function".to_string()][..]));
    }

    #[test]
    fn provider_retries_then_succeeds() {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = server.server_addr().to_ip().unwrap();
        let handle = std::thread::spawn(move || {
            let mut seen = Vec::new();
            for (i, mut req) in server.incoming_requests().take(3).enumerate() {
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                seen.push(body);
                let resp = if i < 2 {
                    tiny_http::Response::from_string("busy").with_status_code(503)
                } else {
                    tiny_http::Response::from_string(r#"{"choices":[{"message":{"content":"hello"}}]}"#)
                };
                req.respond(resp).unwrap();
            }
            seen
        });
        let mut cfg = ProviderConfig::new(format!("http://{addr}/v1/chat/completions"), "m");
        cfg.initial_backoff = Duration::from_millis(5);
        cfg.api_key_env = "TOOLCODER_TEST_NO_SUCH_KEY".into();
        let model = HttpChatModel::new(cfg);
        assert_eq!(model.chat(StageTag::T2c, "hi").unwrap(), "hello");
        let seen = handle.join().unwrap();
        assert_eq!(seen.len(), 3);
        let body: serde_json::Value = serde_json::from_str(&seen[0]).unwrap();
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][1]["content"], "hi");
        assert_eq!(body["messages"][0]["role"], "system");
    }

    #[test]
    fn provider_gives_up_after_three_attempts() {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = server.server_addr().to_ip().unwrap();
        let handle = std::thread::spawn(move || {
            let mut n = 0;
            for req in server.incoming_requests().take(3) {
                n += 1;
                req.respond(tiny_http::Response::from_string("no").with_status_code(500)).unwrap();
            }
            n
        });
        let mut cfg = ProviderConfig::new(format!("http://{addr}/"), "m");
        cfg.initial_backoff = Duration::from_millis(1);
        let err = HttpChatModel::new(cfg).chat(StageTag::Plan, "x").unwrap_err();
        assert!(matches!(err, LlmError::Provider { attempts: 3, .. }));
        assert_eq!(handle.join().unwrap(), 3);
    }
}
