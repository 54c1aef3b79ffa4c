//! Toolbox files: loading, validation, prompt rendering and repository
//! augmentation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ToolDoc, Toolbox, FORMAT_VERSION};
use crate::repo::RepoSnapshot;

#[derive(Debug, Error)]
pub enum ToolboxError {
    #[error("cannot read toolbox {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed toolbox: {0}")]
    Parse(String),
    #[error("duplicate api_path `{0}`")]
    DuplicatePath(String),
}

/// The on-disk toolbox document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolboxFile {
    #[serde(default = "format_version")]
    pub format_version: u32,
    pub tools: Vec<ToolDoc>,
}

fn format_version() -> u32 {
    FORMAT_VERSION
}

impl From<&Toolbox> for ToolboxFile {
    fn from(t: &Toolbox) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            tools: t.tools().to_vec(),
        }
    }
}

pub fn parse_toolbox(text: &str) -> Result<Toolbox, ToolboxError> {
    let file: ToolboxFile = serde_json::from_str(text).map_err(|e| ToolboxError::Parse(e.to_string()))?;
    if file.format_version != FORMAT_VERSION {
        return Err(ToolboxError::Parse(format!(
            "unsupported format_version {}",
            file.format_version
        )));
    }
    Toolbox::new(file.tools).map_err(|e| match e {
        ModelError::DuplicatePath(p) => ToolboxError::DuplicatePath(p),
        other => ToolboxError::Parse(other.to_string()),
    })
}

pub fn load_toolbox(path: impl AsRef<Path>) -> Result<Toolbox, ToolboxError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ToolboxError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_toolbox(&text)
}

/// Fills `reusable_code` from the repository for every doc that has an entry.
pub fn augment_with_repo(docs: &[ToolDoc], repo: &RepoSnapshot) -> Vec<ToolDoc> {
    docs.iter()
        .map(|doc| match repo.get(&doc.api_path) {
            Some(entry) => ToolDoc {
                reusable_code: Some(entry.source.clone()),
                ..doc.clone()
            },
            None => doc.clone(),
        })
        .collect()
}

/// One line per tool, `path: description`, the shape the planner sees.
pub fn render_catalog(toolbox: &Toolbox) -> String {
    toolbox
        .tools()
        .iter()
        .map(|t| {
            let desc = t.description.split_whitespace().collect::<Vec<_>>().join(" ");
            format!("{}: {}", t.api_path, desc)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Full documentation of the given tools as a JSON array.
pub fn render_docs(docs: &[ToolDoc]) -> String {
    let values: Vec<serde_json::Value> = docs
        .iter()
        .map(|d| {
            let mut v = serde_json::json!({
                "path": d.api_path,
                "method": d.method,
                "description": d.description,
                "parameters": d.parameters,
                "schema": d.response_schema,
            });
            if let Some(code) = &d.reusable_code {
                v["reusable_code"] = serde_json::Value::String(code.clone());
            }
            v
        })
        .collect();
    serde_json::to_string_pretty(&values).expect("tool docs serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RepoEntry;

    fn doc(path: &str) -> ToolDoc {
        ToolDoc::new(path, format!("docs for {path}"))
    }

    #[test]
    fn rejects_empty_and_duplicate_files() {
        assert!(matches!(parse_toolbox(r#"{"format_version":1,"tools":[]}"#), Err(ToolboxError::Parse(_))));
        let dup = r#"{"format_version":1,"tools":[{"api_path":"/3/search/person"},{"api_path":"/3/search/person"}]}"#;
        assert!(matches!(parse_toolbox(dup), Err(ToolboxError::DuplicatePath(p)) if p == "/3/search/person"));
        assert!(matches!(parse_toolbox("{"), Err(ToolboxError::Parse(_))));
        assert!(matches!(
            parse_toolbox(r#"{"format_version":9,"tools":[{"api_path":"/a"}]}"#),
            Err(ToolboxError::Parse(_))
        ));
    }

    #[test]
    fn lookup_is_exact() {
        let tb = Toolbox::new(vec![doc("/3/search/person"), doc("/3/person/{person_id}/movie_credits")]).unwrap();
        assert!(tb.lookup("/3/search/person").is_some());
        assert!(tb.lookup("/3/person/{person_id}/movie_credits").is_some());
        assert!(tb.lookup("/3/person/1769/movie_credits").is_none());
        assert!(tb.lookup("/3/fake/path").is_none());
        assert!(tb.lookup("").is_none());
    }

    #[test]
    fn augmentation_touches_only_matching_docs() {
        let docs = vec![doc("/3/search/person"), doc("/3/person/{person_id}/movie_credits")];
        let empty = RepoSnapshot::default();
        assert_eq!(augment_with_repo(&docs, &empty), docs);

        let snap = RepoSnapshot::from_entries([RepoEntry {
            api_path: "/3/search/person".into(),
            function_name: "search_person".into(),
            source: "def search_person(query):\n    pass\n".into(),
            origin_task_id: "t0".into(),
            created_at: 1,
        }]);
        let out = augment_with_repo(&docs, &snap);
        let modified = out.iter().zip(&docs).filter(|(a, b)| a != b).count();
        assert_eq!(modified, 1);
        assert_eq!(out[0].reusable_code.as_deref(), Some("def search_person(query):\n    pass\n"));
        assert_eq!(out[1], docs[1]);
        assert_eq!(augment_with_repo(&out, &snap), out, "idempotent");
        assert!(render_docs(&out).contains("\"reusable_code\""));
        assert!(!render_docs(&docs).contains("\"reusable_code\""));
    }
}
