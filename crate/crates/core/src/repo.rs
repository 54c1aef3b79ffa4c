//! Reusable function repository.
//!
//! Sub-functions from programs that ran successfully are stored per endpoint
//! in an append-only JSONL file and fed back into later codegen prompts. The
//! newest entry for a path wins.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use thiserror::Error;

use crate::model::{now_ms, ExecutionReport, GeneratedProgram, RepoEntry};

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("repository storage failed: {0}")]
    Storage(#[from] std::io::Error),
    #[error("corrupt repository store at line {line}: {message}")]
    CorruptStore { line: usize, message: String },
    #[error("harvest requires a successful run (status was {0:?})")]
    NotSuccessful(crate::model::ExecutionStatus),
}

/// Read-only view of the latest entry per path, taken at run start.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RepoSnapshot {
    entries: HashMap<String, RepoEntry>,
}

impl RepoSnapshot {
    pub fn from_entries(entries: impl IntoIterator<Item = RepoEntry>) -> Self {
        let mut map = HashMap::new();
        for e in entries {
            map.insert(e.api_path.clone(), e);
        }
        Self { entries: map }
    }

    pub fn get(&self, api_path: &str) -> Option<&RepoEntry> {
        self.entries.get(api_path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Default)]
struct State {
    latest: HashMap<String, RepoEntry>,
    history: Vec<RepoEntry>,
}

/// Problem found while replaying the store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corruption {
    pub line: usize,
    pub message: String,
}

pub struct FunctionRepository {
    state: RwLock<State>,
    writer: Mutex<Option<File>>,
    storage_path: Option<PathBuf>,
}

impl std::fmt::Debug for FunctionRepository {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FunctionRepository")
            .field("storage_path", &self.storage_path)
            .field("entries", &self.len())
            .finish()
    }
}

struct Replay {
    history: Vec<RepoEntry>,
    /// Byte length of the prefix made of complete, valid lines.
    good_len: u64,
    corruption: Option<Corruption>,
}

fn replay(path: &Path) -> Result<Replay, RepoError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Ok(Replay { history: vec![], good_len: 0, corruption: None })
        }
        Err(e) => return Err(e.into()),
    };
    let mut reader = BufReader::new(file);
    let mut history = Vec::new();
    let mut good_len = 0u64;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf)?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !buf.ends_with('\n') {
            return Ok(Replay {
                history,
                good_len,
                corruption: Some(Corruption { line: line_no, message: "truncated line".into() }),
            });
        }
        if buf.trim().is_empty() {
            good_len += n as u64;
            continue;
        }
        match serde_json::from_str::<RepoEntry>(buf.trim_end()) {
            Ok(entry) => {
                history.push(entry);
                good_len += n as u64;
            }
            Err(e) => {
                return Ok(Replay {
                    history,
                    good_len,
                    corruption: Some(Corruption { line: line_no, message: e.to_string() }),
                })
            }
        }
    }
    Ok(Replay { history, good_len, corruption: None })
}

impl FunctionRepository {
    /// A repository that never touches disk.
    pub fn in_memory() -> Self {
        Self {
            state: RwLock::new(State::default()),
            writer: Mutex::new(None),
            storage_path: None,
        }
    }

    fn from_history(history: Vec<RepoEntry>, writer: Option<File>, path: Option<PathBuf>) -> Self {
        let mut state = State::default();
        for e in history {
            state.latest.insert(e.api_path.clone(), e.clone());
            state.history.push(e);
        }
        Self {
            state: RwLock::new(state),
            writer: Mutex::new(writer),
            storage_path: path,
        }
    }

    /// Replays the store strictly: any malformed line is an error.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, RepoError> {
        let path = path.as_ref();
        let replay = replay(path)?;
        if let Some(c) = replay.corruption {
            return Err(RepoError::CorruptStore { line: c.line, message: c.message });
        }
        let writer = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::from_history(replay.history, Some(writer), Some(path.to_path_buf())))
    }

    /// Replays the store, keeping every entry before the first bad line and
    /// truncating the file back to that point so later appends replay cleanly.
    pub fn open_recovering(path: impl AsRef<Path>) -> Result<(Self, Option<Corruption>), RepoError> {
        let path = path.as_ref();
        let replay = replay(path)?;
        if replay.corruption.is_some() {
            let f = OpenOptions::new().write(true).open(path)?;
            f.set_len(replay.good_len)?;
            f.sync_all()?;
        }
        let writer = OpenOptions::new().create(true).append(true).open(path)?;
        Ok((
            Self::from_history(replay.history, Some(writer), Some(path.to_path_buf())),
            replay.corruption,
        ))
    }

    pub fn storage_path(&self) -> Option<&Path> {
        self.storage_path.as_deref()
    }

    pub fn get(&self, api_path: &str) -> Option<RepoEntry> {
        self.state.read().unwrap().latest.get(api_path).cloned()
    }

    pub fn len(&self) -> usize {
        self.state.read().unwrap().latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn history(&self) -> Vec<RepoEntry> {
        self.state.read().unwrap().history.clone()
    }

    /// Latest entry per path, sorted by path.
    pub fn entries(&self) -> Vec<RepoEntry> {
        let mut v: Vec<_> = self.state.read().unwrap().latest.values().cloned().collect();
        v.sort_by(|a, b| a.api_path.cmp(&b.api_path));
        v
    }

    pub fn snapshot(&self) -> RepoSnapshot {
        RepoSnapshot {
            entries: self.state.read().unwrap().latest.clone(),
        }
    }

    /// Persists then publishes. A failed write leaves memory untouched.
    pub fn append(&self, entries: Vec<RepoEntry>) -> Result<(), RepoError> {
        if entries.is_empty() {
            return Ok(());
        }
        let mut writer = self.writer.lock().unwrap();
        if let Some(file) = writer.as_mut() {
            let mut buf = Vec::new();
            for e in &entries {
                serde_json::to_writer(&mut buf, e).map_err(std::io::Error::from)?;
                buf.push(b'\n');
            }
            file.write_all(&buf)?;
            file.flush()?;
        }
        let mut state = self.state.write().unwrap();
        for e in entries {
            state.latest.insert(e.api_path.clone(), e.clone());
            state.history.push(e);
        }
        Ok(())
    }

    /// Stores every path-bound sub-function of a program that ran cleanly.
    pub fn harvest(
        &self,
        program: &GeneratedProgram,
        report: &ExecutionReport,
        task_id: &str,
    ) -> Result<Vec<RepoEntry>, RepoError> {
        if !report.is_ok() {
            return Err(RepoError::NotSuccessful(report.status));
        }
        let created_at = now_ms();
        let entries: Vec<RepoEntry> = program
            .sub_functions
            .iter()
            .filter_map(|f| {
                let path = f.api_path.as_ref()?;
                let body = program.function_source(f);
                Some(RepoEntry {
                    api_path: path.clone(),
                    function_name: f.name.clone(),
                    source: format!("# api_path: {path}\n{body}\n"),
                    origin_task_id: task_id.to_string(),
                    created_at,
                })
            })
            .collect();
        self.append(entries.clone())?;
        Ok(entries)
    }

    /// Drops every entry and empties the backing file.
    pub fn clear(&self) -> Result<(), RepoError> {
        let writer = self.writer.lock().unwrap();
        if let Some(file) = writer.as_ref() {
            file.set_len(0)?;
        }
        let mut state = self.state.write().unwrap();
        state.latest.clear();
        state.history.clear();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExceptionInfo, Frame, SubFunction};

    fn entry(path: &str, src: &str) -> RepoEntry {
        RepoEntry {
            api_path: path.into(),
            function_name: "f".into(),
            source: src.into(),
            origin_task_id: "t".into(),
            created_at: 7,
        }
    }

    fn program() -> GeneratedProgram {
        let source = "def a():\n    return 1\n\ndef b():\n    return 2\n".to_string();
        GeneratedProgram {
            sub_functions: vec![
                SubFunction { name: "a".into(), api_path: Some("/a".into()), span: (0, 21), marker_span: None },
                SubFunction { name: "b".into(), api_path: None, span: (23, 44), marker_span: None },
            ],
            source,
        }
    }

    #[test]
    fn harvest_requires_success() {
        let repo = FunctionRepository::in_memory();
        let failed = ExecutionReport::exception(
            "",
            ExceptionInfo {
                type_name: "KeyError".into(),
                message: "x".into(),
                frames: vec![Frame { file: "p.py".into(), line: 1, function: "<module>".into(), source_line: String::new() }],
            },
            1,
        );
        assert!(matches!(repo.harvest(&program(), &failed, "t"), Err(RepoError::NotSuccessful(_))));
        assert!(repo.is_empty());

        let got = repo.harvest(&program(), &ExecutionReport::ok("1\n", 1), "t").unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].source, "# api_path: /a\ndef a():\n    return 1\n");
        assert!(repo.get("/a").is_some());
        assert!(repo.get("/b").is_none());
    }

    #[test]
    fn later_entry_wins() {
        let repo = FunctionRepository::in_memory();
        repo.append(vec![entry("/a", "old")]).unwrap();
        repo.append(vec![entry("/a", "new")]).unwrap();
        assert_eq!(repo.get("/a").unwrap().source, "new");
        assert_eq!(repo.history().len(), 2);
    }

    #[test]
    fn reload_replays_history() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repo.jsonl");
        {
            let repo = FunctionRepository::open(&path).unwrap();
            assert!(repo.is_empty());
            repo.append(vec![entry("/a", "1"), entry("/b", "2")]).unwrap();
            repo.append(vec![entry("/a", "3")]).unwrap();
        }
        let repo = FunctionRepository::open(&path).unwrap();
        assert_eq!(repo.history().len(), 3);
        assert_eq!(repo.get("/a").unwrap().source, "3");
    }

    #[test]
    fn empty_file_is_empty_repository() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repo.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(FunctionRepository::open(&path).unwrap().is_empty());
    }

    #[test]
    fn garbage_line_stops_loading() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("repo.jsonl");
        let good = serde_json::to_string(&entry("/a", "1")).unwrap();
        let later = serde_json::to_string(&entry("/c", "3")).unwrap();
        std::fs::write(&path, format!("{good}\nnot json\n{later}\n")).unwrap();
        assert!(matches!(FunctionRepository::open(&path), Err(RepoError::CorruptStore { line: 2, .. })));
        let (repo, corruption) = FunctionRepository::open_recovering(&path).unwrap();
        assert_eq!(corruption.unwrap().line, 2);
        assert_eq!(repo.history().len(), 1);
        repo.append(vec![entry("/b", "2")]).unwrap();
        drop(repo);
        let repo = FunctionRepository::open(&path).unwrap();
        assert_eq!(repo.history().len(), 2);
    }
}
