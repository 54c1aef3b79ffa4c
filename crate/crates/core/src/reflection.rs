//! Error reflection: plan reformulation for invented tools and traceback-driven
//! code review.

use std::collections::HashSet;

use thiserror::Error;

use crate::analysis::{self, AnalysisError};
use crate::llm::{LlmError, LlmSession};
use crate::model::{ExceptionInfo, Frame, GeneratedProgram, PseudoProgram, StageTag, Task, Toolbox};
use crate::prompts;
use crate::toolbox::{render_catalog, render_docs};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReflectionError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("review produced no function definitions")]
    EmptyProgram,
    #[error("reviewed program is malformed: {0}")]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewContext {
    pub program_source: String,
    pub exception: ExceptionInfo,
    /// 1-based review round.
    pub round: u32,
}

/// Call-site paths with no exact toolbox entry, deduplicated, in order.
pub fn validate_plan(pseudo: &PseudoProgram, toolbox: &Toolbox) -> Vec<String> {
    let mut seen = HashSet::new();
    pseudo
        .call_sites
        .iter()
        .map(|c| c.api_path.as_str())
        .filter(|p| !toolbox.contains(p))
        .filter(|p| seen.insert(*p))
        .map(str::to_string)
        .collect()
}

pub fn reformulation_prompt(task: &Task, pseudo: &PseudoProgram, invalid: &[String], toolbox: &Toolbox) -> String {
    let invalid_tools = invalid
        .iter()
        .map(|p| format!("- {p}: not in the toolbox; replace it with an existing API path"))
        .collect::<Vec<_>>()
        .join("\n");
    prompts::PLAN_REFORMULATION.render(&[
        ("invalid_tools", &invalid_tools),
        ("toolbox", &render_catalog(toolbox)),
        ("question", &task.query),
        ("program", &pseudo.source),
    ])
}

/// Asks the model to swap every invalid path for a toolbox alternative and
/// re-extracts the call sites. Whether the result is valid is the caller's
/// concern.
pub fn reformulate_plan(
    llm: &LlmSession,
    task: &Task,
    pseudo: &PseudoProgram,
    invalid: &[String],
    toolbox: &Toolbox,
) -> Result<PseudoProgram, ReflectionError> {
    let prompt = reformulation_prompt(task, pseudo, invalid, toolbox);
    let reply = llm.complete(StageTag::Reformulate, &prompt)?;
    let source = analysis::extract_code(&reply);
    let call_sites = analysis::extract_call_sites(&source)?;
    Ok(PseudoProgram { source, call_sites })
}

/// Python-style traceback text.
pub fn render_traceback(e: &ExceptionInfo) -> String {
    let mut out = String::from("Traceback (most recent call last):\n");
    for f in &e.frames {
        out.push_str(&format!("  File \"{}\", line {}, in {}\n", f.file, f.line, f.function));
        let code = f.source_line.trim();
        if !code.is_empty() {
            out.push_str("    ");
            out.push_str(code);
            out.push('\n');
        }
    }
    out.push_str(&e.type_name);
    if !e.message.is_empty() {
        out.push_str(": ");
        out.push_str(&e.message);
    }
    out
}

/// Inverse of [`render_traceback`].
pub fn parse_traceback(text: &str) -> Option<ExceptionInfo> {
    let rest = text.strip_prefix("Traceback (most recent call last):\n")?;
    let mut frames = Vec::new();
    let mut remaining = rest;
    while let Some(line_rest) = remaining.strip_prefix("  File \"") {
        let (line, after) = line_rest.split_once('\n').unwrap_or((line_rest, ""));
        let (file, tail) = line.split_once("\", line ")?;
        let (num, func) = tail.split_once(", in ")?;
        let mut frame = Frame {
            file: file.to_string(),
            line: num.parse().ok()?,
            function: func.to_string(),
            source_line: String::new(),
        };
        remaining = after;
        if let Some(code_rest) = remaining.strip_prefix("    ") {
            let (code, after) = code_rest.split_once('\n').unwrap_or((code_rest, ""));
            frame.source_line = code.to_string();
            remaining = after;
        }
        frames.push(frame);
    }
    let (type_name, message) = match remaining.split_once(": ") {
        Some((t, m)) if !t.contains('\n') => (t.to_string(), m.to_string()),
        _ => (remaining.to_string(), String::new()),
    };
    Some(ExceptionInfo { type_name, message, frames })
}

pub fn review_prompt(task: &Task, ctx: &ReviewContext, toolbox: &Toolbox) -> String {
    let bound: Vec<_> = analysis::extract_sub_functions(&ctx.program_source, toolbox)
        .into_iter()
        .filter_map(|f| f.api_path)
        .filter_map(|p| toolbox.lookup(&p).cloned())
        .collect();
    let numbered: String = ctx
        .program_source
        .lines()
        .enumerate()
        .map(|(i, l)| format!("{:>4} | {l}\n", i + 1))
        .collect();
    prompts::CODE_REVIEW.render(&[
        ("question", &task.query),
        ("program", &numbered),
        ("traceback", &render_traceback(&ctx.exception)),
        ("api_doc", &render_docs(&bound)),
    ])
}

/// One review round: the full program and its traceback go to the model and
/// the reply replaces the program wholesale.
pub fn review_code(
    llm: &LlmSession,
    task: &Task,
    ctx: &ReviewContext,
    toolbox: &Toolbox,
) -> Result<GeneratedProgram, ReflectionError> {
    let prompt = review_prompt(task, ctx, toolbox);
    let reply = llm.complete(StageTag::Review, &prompt)?;
    let source = analysis::extract_code(&reply);
    if source.trim().is_empty() {
        return Err(ReflectionError::EmptyProgram);
    }
    analysis::analyze_program(&source, toolbox)?.ok_or(ReflectionError::EmptyProgram)
}

/// The synthetic exception a timed-out run is reviewed with.
pub fn timeout_exception(limit_ms: u64) -> ExceptionInfo {
    ExceptionInfo {
        type_name: "TimeoutError".to_string(),
        message: format!("program did not finish within the {limit_ms} ms limit"),
        frames: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CallCounter, ScriptedModel, Transcript, TranscriptEntry};
    use crate::model::{CallSite, ToolDoc};
    use proptest::prelude::*;
    use std::sync::Arc;

    fn toolbox() -> Toolbox {
        Toolbox::new(vec![
            ToolDoc::new("/3/search/person", "search"),
            ToolDoc::new("/3/person/{person_id}/movie_credits", "credits"),
        ])
        .unwrap()
    }

    fn pseudo(paths: &[&str]) -> PseudoProgram {
        let mut source = String::new();
        let mut call_sites = Vec::new();
        for p in paths {
            let start = source.len();
            source.push_str(&format!("call_api(api_path=\"{p}\", params={{}})"));
            call_sites.push(CallSite { api_path: p.to_string(), params_literal: "{}".into(), byte_span: (start, source.len()) });
            source.push('\n');
        }
        PseudoProgram { source, call_sites }
    }

    fn session(entries: Vec<TranscriptEntry>) -> LlmSession {
        LlmSession::new("t", Arc::new(ScriptedModel::new(Transcript::new(entries))), Arc::new(CallCounter::new()))
    }

    fn task() -> Task {
        Task::new("t", "give me the number of movies directed by Sofia Coppola").unwrap()
    }

    #[test]
    fn validate_plan_examples() {
        let tb = toolbox();
        assert!(validate_plan(&pseudo(&["/3/search/person", "/3/person/{person_id}/movie_credits"]), &tb).is_empty());
        assert_eq!(validate_plan(&pseudo(&["/3/fake"]), &tb), vec!["/3/fake"]);
        assert_eq!(validate_plan(&pseudo(&["/3/fake", "/3/search/person", "/3/fake"]), &tb), vec!["/3/fake"]);
    }

    #[test]
    fn reformulation_lists_every_invalid_path() {
        let invalid = vec!["/3/fake".to_string(), "/3/other".to_string()];
        let prompt = reformulation_prompt(&task(), &pseudo(&["/3/fake", "/3/other"]), &invalid, &toolbox());
        assert!(prompt.contains("/3/fake") && prompt.contains("/3/other"));
        assert!(prompt.contains("/3/search/person"));
    }

    #[test]
    fn reformulation_reextracts_call_sites() {
        let tb = toolbox();
        let fixed = "r = call_api(api_path=\"/3/search/person\", params={\"query\": q})\n";
        let llm = session(vec![TranscriptEntry::new(StageTag::Reformulate, fixed)]);
        let out = reformulate_plan(&llm, &task(), &pseudo(&["/3/fake"]), &["/3/fake".into()], &tb).unwrap();
        assert!(validate_plan(&out, &tb).is_empty());
        assert_eq!(out.call_sites.len(), 1);

        let still = "r = call_api(api_path=\"/3/fake\", params={})\n";
        let llm = session(vec![TranscriptEntry::new(StageTag::Reformulate, still)]);
        let out = reformulate_plan(&llm, &task(), &pseudo(&["/3/fake"]), &["/3/fake".into()], &tb).unwrap();
        assert_eq!(validate_plan(&out, &tb), vec!["/3/fake"]);
    }

    fn key_error() -> ExceptionInfo {
        ExceptionInfo {
            type_name: "KeyError".into(),
            message: "'crew'".into(),
            frames: vec![
                Frame { file: "program.py".into(), line: 30, function: "<module>".into(), source_line: "main()".into() },
                Frame { file: "program.py".into(), line: 17, function: "main".into(), source_line: "r['crew']".into() },
            ],
        }
    }

    #[test]
    fn review_prompt_carries_traceback() {
        let ctx = ReviewContext { program_source: "def main():\n    pass\n".into(), exception: key_error(), round: 1 };
        let p = review_prompt(&task(), &ctx, &toolbox());
        assert!(p.contains("KeyError"));
        assert!(p.contains("line 17"));
        assert!(p.contains("def main():"));
    }

    #[test]
    fn empty_review_reply_is_an_error() {
        let ctx = ReviewContext { program_source: "def main():\n    pass\n".into(), exception: key_error(), round: 1 };
        let llm = session(vec![TranscriptEntry::new(StageTag::Review, "")]);
        assert_eq!(review_code(&llm, &task(), &ctx, &toolbox()), Err(ReflectionError::EmptyProgram));
    }

    #[test]
    fn traceback_examples() {
        let text = render_traceback(&key_error());
        assert_eq!(
            text,
            "Traceback (most recent call last):\n  File \"program.py\", line 30, in <module>\n    main()\n  File \"program.py\", line 17, in main\n    r['crew']\nKeyError: 'crew'"
        );
        assert_eq!(parse_traceback(&text).unwrap(), key_error());
        let t = timeout_exception(100);
        assert_eq!(parse_traceback(&render_traceback(&t)).unwrap(), t);
    }

    proptest! {
        #[test]
        fn traceback_rendering_is_lossless(
            type_name in "[A-Za-z_][A-Za-z0-9_.]{0,20}",
            message in "\\PC{0,40}(\n\\PC{0,20}){0,2}",
            frames in prop::collection::vec(("[a-z_./]{1,12}", 1u32..5000, "[A-Za-z_<>][A-Za-z0-9_<>]{0,12}", "[ -~]{0,30}"), 0..6),
        ) {
            let e = ExceptionInfo {
                type_name,
                message,
                frames: frames
                    .into_iter()
                    .map(|(file, line, function, code)| Frame { file, line, function, source_line: code.trim().to_string() })
                    .collect(),
            };
            let parsed = parse_traceback(&render_traceback(&e)).unwrap();
            prop_assert_eq!(&parsed.type_name, &e.type_name);
            prop_assert_eq!(&parsed.message, &e.message);
            let want: Vec<_> = e.frames.iter().map(|f| (f.line, f.function.clone())).collect();
            let got: Vec<_> = parsed.frames.iter().map(|f| (f.line, f.function.clone())).collect();
            prop_assert_eq!(got, want);
        }
    }
}
