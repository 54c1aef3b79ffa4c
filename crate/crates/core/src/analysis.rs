//! Lexical analysis of guest (Python) source.
//!
//! This is a line and bracket level grammar, not a parser: it knows about
//! string literals, comments, bracket nesting and indentation, which is enough
//! to recognize every shape the stage prompts ask the model to produce.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::model::{CallSite, GeneratedProgram, Scaffold, ScaffoldParam, SubFunction, SubtaskPlan, Toolbox};

/// Fixed lexical conventions the prompts impose on generated code.
pub struct LexGrammar;

impl LexGrammar {
    pub const DEF_KEYWORD: &'static str = "def";
    pub const DOCSTRING_DELIMITERS: [&'static str; 2] = ["'''", "\"\"\""];
    pub const COMMENT_PREFIX: &'static str = "#";
    pub const MAIN_GUARD: &'static str = r#"^if\s+__name__\s*==\s*['"]__main__['"]\s*:"#;
    pub const CALL_API_TOKEN: &'static str = "call_api";
    pub const API_PATH_MARKER: &'static str = "# api_path:";
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("no top-level function definition found")]
    NoFunction,
    #[error("expected exactly one top-level function, found {0}")]
    MultipleFunctions(usize),
    #[error("function `{0}` has no docstring")]
    MissingDocstring(String),
    #[error("function body contains an executable statement at line {line}: `{text}`")]
    NonEmptyBody { line: usize, text: String },
    #[error("no `if __name__ == \"__main__\":` block found")]
    MissingMainGuard,
    #[error("main guard does not call `{0}`")]
    MainGuardMissingCall(String),
    #[error("docstring does not mention parameter `{0}`")]
    UndocumentedParam(String),
    #[error("malformed function header at line {0}")]
    MalformedHeader(usize),
    #[error("call_api at byte {0} is never closed")]
    UnterminatedCall(usize),
    #[error("unterminated string literal starting at line {0}")]
    UnterminatedString(usize),
    #[error("unbalanced bracket `{ch}` at line {line}")]
    UnbalancedBracket { ch: char, line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Code,
    Str,
    Comment,
}

#[derive(Debug, Clone, Copy)]
struct StrLit {
    start: usize,
    end: usize,
    /// Offsets of the literal's content (between the quotes).
    body: (usize, usize),
    prefix_len: usize,
    triple: bool,
    terminated: bool,
}

impl StrLit {
    fn prefix<'a>(&self, src: &'a str) -> &'a str {
        &src[self.start..self.start + self.prefix_len]
    }
}

/// Per-byte classification plus the list of string literals.
struct Lexed<'a> {
    src: &'a str,
    kinds: Vec<Kind>,
    strings: Vec<StrLit>,
}

fn is_ident(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn lex(src: &str) -> Lexed<'_> {
    let bytes = src.as_bytes();
    let n = bytes.len();
    let mut kinds = vec![Kind::Code; n];
    let mut strings = Vec::new();
    let mut i = 0;
    while i < n {
        let b = bytes[i];
        if b == b'#' {
            let end = memchr_newline(bytes, i);
            kinds[i..end].fill(Kind::Comment);
            i = end;
            continue;
        }
        // string prefix: up to two letters from rbfu directly before a quote
        let mut prefix_len = 0;
        if b.is_ascii_alphabetic() && (i == 0 || !is_ident(bytes[i - 1])) {
            let mut j = i;
            while j < n && j - i < 2 && matches!(bytes[j].to_ascii_lowercase(), b'r' | b'b' | b'f' | b'u') {
                j += 1;
            }
            if j < n && (bytes[j] == b'\'' || bytes[j] == b'"') && j > i {
                prefix_len = j - i;
            }
        }
        let q = i + prefix_len;
        if q < n && (bytes[q] == b'\'' || bytes[q] == b'"') && (prefix_len > 0 || b == bytes[q]) {
            let quote = bytes[q];
            let triple = q + 2 < n && bytes[q + 1] == quote && bytes[q + 2] == quote;
            let open = if triple { 3 } else { 1 };
            let body_start = q + open;
            let mut j = body_start;
            let mut terminated = false;
            let mut body_end = n;
            while j < n {
                let c = bytes[j];
                if c == b'\\' {
                    j += 2;
                    continue;
                }
                if !triple && c == b'\n' {
                    body_end = j;
                    break;
                }
                if c == quote && (!triple || (j + 2 < n && bytes[j + 1] == quote && bytes[j + 2] == quote)) {
                    body_end = j;
                    j += open;
                    terminated = true;
                    break;
                }
                j += 1;
            }
            let end = if terminated { j } else { body_end.min(n) };
            let body_end = body_end.min(n);
            kinds[i..end].fill(Kind::Str);
            strings.push(StrLit {
                start: i,
                end,
                body: (body_start.min(body_end), body_end),
                prefix_len,
                triple,
                terminated,
            });
            i = end.max(i + 1);
            continue;
        }
        if b.is_ascii_alphanumeric() || b == b'_' {
            // skip the rest of an identifier so `br` inside `abr"..."` is not a prefix
            while i < n && is_ident(bytes[i]) {
                i += 1;
            }
            continue;
        }
        i += 1;
    }
    Lexed { src, kinds, strings }
}

fn memchr_newline(bytes: &[u8], from: usize) -> usize {
    bytes[from..]
        .iter()
        .position(|&b| b == b'\n')
        .map_or(bytes.len(), |p| from + p)
}

fn line_of(src: &str, offset: usize) -> usize {
    src.as_bytes()[..offset.min(src.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

#[derive(Debug, Clone)]
struct Line {
    start: usize,
    /// End offset, excluding the newline.
    end: usize,
    /// End offset including the newline when present.
    next: usize,
    indent: usize,
    /// True when this physical line begins a new logical line.
    logical: bool,
    blank: bool,
    comment_only: bool,
}

impl<'a> Lexed<'a> {
    fn lines(&self) -> Vec<Line> {
        let bytes = self.src.as_bytes();
        let mut out = Vec::new();
        let mut depth: i64 = 0;
        let mut continued = false;
        let mut start = 0;
        while start < bytes.len() {
            let end = memchr_newline(bytes, start);
            let next = if end < bytes.len() { end + 1 } else { end };
            let in_string = start > 0 && self.kinds[start] == Kind::Str && self.kinds[start - 1] == Kind::Str;
            let logical = depth == 0 && !continued && !in_string;
            let text = &self.src[start..end];
            let indent = text.len() - text.trim_start().len();
            let trimmed = text.trim();
            let blank = trimmed.is_empty();
            let comment_only = !blank && trimmed.starts_with('#') && self.kinds[start + indent] == Kind::Comment;
            for k in start..end {
                if self.kinds[k] != Kind::Code {
                    continue;
                }
                match bytes[k] {
                    b'(' | b'[' | b'{' => depth += 1,
                    b')' | b']' | b'}' => depth = (depth - 1).max(0),
                    _ => {}
                }
            }
            let last_code = (start..end).rev().find(|&k| self.kinds[k] == Kind::Code && !bytes[k].is_ascii_whitespace());
            continued = last_code.is_some_and(|k| bytes[k] == b'\\');
            out.push(Line { start, end, next, indent, logical, blank, comment_only });
            start = next;
        }
        out
    }

    fn code_find(&self, from: usize, to: usize, needle: u8) -> Option<usize> {
        (from..to).find(|&k| self.kinds[k] == Kind::Code && self.src.as_bytes()[k] == needle)
    }

    /// Matches the bracket at `open` and returns the offset of its partner.
    fn match_bracket(&self, open: usize) -> Result<usize, usize> {
        let bytes = self.src.as_bytes();
        let mut stack: Vec<u8> = Vec::new();
        for k in open..bytes.len() {
            if self.kinds[k] != Kind::Code {
                continue;
            }
            match bytes[k] {
                b @ (b'(' | b'[' | b'{') => stack.push(b),
                b @ (b')' | b']' | b'}') => {
                    let want = match b {
                        b')' => b'(',
                        b']' => b'[',
                        _ => b'{',
                    };
                    if stack.pop() != Some(want) {
                        return Err(k);
                    }
                    if stack.is_empty() {
                        return Ok(k);
                    }
                }
                _ => {}
            }
        }
        Err(bytes.len())
    }

    fn string_at(&self, offset: usize) -> Option<&StrLit> {
        self.strings.iter().find(|s| s.start == offset)
    }

    /// Splits `[from, to)` at code commas that sit at bracket depth zero.
    fn split_top_level(&self, from: usize, to: usize, sep: u8) -> Vec<(usize, usize)> {
        let bytes = self.src.as_bytes();
        let mut parts = Vec::new();
        let mut depth = 0i64;
        let mut part_start = from;
        for k in from..to {
            if self.kinds[k] != Kind::Code {
                continue;
            }
            match bytes[k] {
                b'(' | b'[' | b'{' => depth += 1,
                b')' | b']' | b'}' => depth -= 1,
                c if c == sep && depth == 0 => {
                    parts.push((part_start, k));
                    part_start = k + 1;
                }
                _ => {}
            }
        }
        parts.push((part_start, to));
        parts
    }
}

/// Verifies strings are terminated and brackets balance.
pub fn check_lexical(source: &str) -> Result<(), AnalysisError> {
    let lexed = lex(source);
    if let Some(s) = lexed.strings.iter().find(|s| !s.terminated) {
        return Err(AnalysisError::UnterminatedString(line_of(source, s.start)));
    }
    let bytes = source.as_bytes();
    let mut stack: Vec<(u8, usize)> = Vec::new();
    for (k, &b) in bytes.iter().enumerate() {
        if lexed.kinds[k] != Kind::Code {
            continue;
        }
        match b {
            b'(' | b'[' | b'{' => stack.push((b, k)),
            b')' | b']' | b'}' => {
                let want = match b {
                    b')' => b'(',
                    b']' => b'[',
                    _ => b'{',
                };
                match stack.pop() {
                    Some((open, _)) if open == want => {}
                    _ => {
                        return Err(AnalysisError::UnbalancedBracket {
                            ch: b as char,
                            line: line_of(source, k),
                        })
                    }
                }
            }
            _ => {}
        }
    }
    if let Some((b, k)) = stack.pop() {
        return Err(AnalysisError::UnbalancedBracket {
            ch: b as char,
            line: line_of(source, k),
        });
    }
    Ok(())
}

/// A top-level `def` block located in a source.
#[derive(Debug, Clone)]
struct DefBlock {
    name: String,
    /// Index of the header line.
    header_line: usize,
    /// Offset of the `def` keyword line start.
    start: usize,
    /// End of the block, trailing blank lines excluded.
    end: usize,
    /// Index one past the last line of the block.
    end_line: usize,
}

fn def_name(text: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"^(?:async\s+)?def\s+([A-Za-z_][A-Za-z0-9_]*)").unwrap());
    re.captures(text).map(|c| c[1].to_string())
}

/// True when a column-0 line at `idx` ends the enclosing top-level block.
fn ends_block(lines: &[Line], idx: usize) -> bool {
    let line = &lines[idx];
    if !line.logical || line.blank || line.indent > 0 {
        return false;
    }
    if !line.comment_only {
        return true;
    }
    // a column-0 comment only ends the block if what follows is top level too
    lines[idx + 1..]
        .iter()
        .find(|l| !l.blank && !l.comment_only)
        .is_none_or(|l| l.indent == 0 && l.logical)
}

fn top_level_defs(lexed: &Lexed<'_>, lines: &[Line]) -> Vec<DefBlock> {
    let mut out = Vec::new();
    for (idx, line) in lines.iter().enumerate() {
        if !line.logical || line.indent != 0 || lexed.kinds.get(line.start) != Some(&Kind::Code) {
            continue;
        }
        let Some(name) = def_name(&lexed.src[line.start..line.end]) else { continue };
        let mut end_line = idx + 1;
        while end_line < lines.len() && !ends_block(lines, end_line) {
            end_line += 1;
        }
        let mut last = end_line;
        while last > idx + 1 && lines[last - 1].blank {
            last -= 1;
        }
        // comment lines directly above the next top-level block belong to it
        while last > idx + 1 && lines[last - 1].comment_only && lines[last - 1].indent == 0 {
            last -= 1;
            while last > idx + 1 && lines[last - 1].blank {
                last -= 1;
            }
        }
        out.push(DefBlock {
            name,
            header_line: idx,
            start: line.start,
            end: lines[last - 1].end,
            end_line: last,
        });
    }
    out
}

fn main_guard_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(LexGrammar::MAIN_GUARD).unwrap())
}

/// Python's `inspect.cleandoc`, roughly: strip, then dedent continuation lines.
fn clean_docstring(raw: &str) -> String {
    let mut lines: Vec<&str> = raw.lines().collect();
    let indent = lines
        .iter()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let mut out: Vec<String> = Vec::with_capacity(lines.len());
    if let Some(first) = lines.first_mut() {
        out.push(first.trim().to_string());
    }
    for l in lines.iter().skip(1) {
        out.push(if l.len() >= indent { l[indent..].trim_end().to_string() } else { l.trim().to_string() });
    }
    out.join("\n").trim().to_string()
}

/// Layout of a scaffold's function, shared by parsing and comment embedding.
struct ScaffoldLayout {
    scaffold: Scaffold,
    /// Offset just past the newline that ends the docstring's closing line.
    body_insert_at: usize,
    body_indent: String,
}

fn parse_params(header: &str) -> Vec<ScaffoldParam> {
    let lexed = lex(header);
    let Some(open) = lexed.code_find(0, header.len(), b'(') else { return vec![] };
    let Ok(close) = lexed.match_bracket(open) else { return vec![] };
    let mut params = Vec::new();
    for (a, b) in lexed.split_top_level(open + 1, close, b',') {
        let raw = header[a..b].trim();
        if raw.is_empty() || raw == "*" || raw == "/" {
            continue;
        }
        let offset = a + (header[a..b].len() - header[a..b].trim_start().len());
        let end = offset + raw.len();
        // drop a default value: first top-level `=` not part of a comparison
        let bytes = header.as_bytes();
        let mut cut = end;
        let mut depth = 0i64;
        for k in offset..end {
            if lexed.kinds[k] != Kind::Code {
                continue;
            }
            match bytes[k] {
                b'(' | b'[' | b'{' => depth += 1,
                b')' | b']' | b'}' => depth -= 1,
                b'=' if depth == 0
                    && bytes.get(k + 1) != Some(&b'=')
                    && !matches!(bytes.get(k.wrapping_sub(1)), Some(b'=' | b'!' | b'<' | b'>')) =>
                {
                    cut = k;
                    break;
                }
                _ => {}
            }
        }
        let decl = header[offset..cut].trim();
        let (name, annotation) = match decl.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (decl, ""),
        };
        params.push(ScaffoldParam {
            name: name.trim_start_matches('*').to_string(),
            annotation: annotation.to_string(),
        });
    }
    params
}

fn layout_scaffold(source: &str) -> Result<ScaffoldLayout, AnalysisError> {
    check_lexical(source)?;
    let lexed = lex(source);
    let lines = lexed.lines();
    let defs = top_level_defs(&lexed, &lines);
    let def = match defs.len() {
        0 => return Err(AnalysisError::NoFunction),
        1 => defs.into_iter().next().unwrap(),
        n => return Err(AnalysisError::MultipleFunctions(n)),
    };

    // header: from `def` to the first depth-0 code colon after the parameter list
    let header_no = line_of(source, def.start);
    let open = lexed
        .code_find(def.start, def.end, b'(')
        .ok_or(AnalysisError::MalformedHeader(header_no))?;
    let close = lexed
        .match_bracket(open)
        .map_err(|_| AnalysisError::MalformedHeader(header_no))?;
    let bytes = source.as_bytes();
    let mut depth = 0i64;
    let mut colon = None;
    for k in close + 1..def.end {
        if lexed.kinds[k] != Kind::Code {
            continue;
        }
        match bytes[k] {
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' => depth -= 1,
            b':' if depth == 0 => {
                colon = Some(k);
                break;
            }
            _ => {}
        }
    }
    let colon = colon.ok_or(AnalysisError::MalformedHeader(header_no))?;
    let header = &source[def.start..colon];
    let params = parse_params(header);
    let after_params = &source[close + 1..colon];
    let return_annotation = after_params
        .trim()
        .strip_prefix("->")
        .map(|s| s.trim().to_string())
        .unwrap_or_default();

    // anything after the colon on the header line is an inline body
    let colon_line_end = memchr_newline(bytes, colon);
    let inline = source[colon + 1..colon_line_end].trim();
    let inline_is_comment = inline.starts_with('#');
    if !inline.is_empty() && !inline_is_comment {
        if inline == "pass" || inline == "..." {
            return Err(AnalysisError::MissingDocstring(def.name));
        }
        if !inline.starts_with("'''") && !inline.starts_with("\"\"\"") {
            return Err(AnalysisError::NonEmptyBody {
                line: line_of(source, colon),
                text: inline.to_string(),
            });
        }
    }
    let body_first = lines
        .iter()
        .position(|l| l.start > colon)
        .unwrap_or(lines.len())
        .min(def.end_line);

    // docstring: first non-blank, non-comment statement
    let doc_line_idx = (body_first..def.end_line).find(|&i| !lines[i].blank && !lines[i].comment_only);
    let docstring_lit = doc_line_idx.and_then(|i| {
        let first = lines[i].start + lines[i].indent;
        lexed
            .string_at(first)
            .filter(|s| s.triple && s.terminated && !s.prefix(source).to_ascii_lowercase().contains('f'))
            .filter(|s| {
                let q = &source[s.start + s.prefix_len..s.start + s.prefix_len + 3];
                LexGrammar::DOCSTRING_DELIMITERS.contains(&q)
            })
            .copied()
    });
    let Some(doc) = docstring_lit else {
        return Err(AnalysisError::MissingDocstring(def.name));
    };
    let doc_idx = doc_line_idx.unwrap();
    let body_indent = source[lines[doc_idx].start..lines[doc_idx].start + lines[doc_idx].indent].to_string();
    let docstring = clean_docstring(&source[doc.body.0..doc.body.1]);

    let close_line_end = memchr_newline(bytes, doc.end);
    let trailing = source[doc.end..close_line_end].trim();
    if !trailing.is_empty() && !trailing.starts_with('#') {
        return Err(AnalysisError::NonEmptyBody {
            line: line_of(source, doc.end),
            text: trailing.to_string(),
        });
    }
    let body_insert_at = if close_line_end < source.len() { close_line_end + 1 } else { close_line_end };
    let body_start_idx = lines.iter().position(|l| l.start >= body_insert_at).unwrap_or(lines.len());

    for line in lines.iter().take(def.end_line).skip(body_start_idx) {
        if line.blank || line.comment_only || !line.logical {
            continue;
        }
        let text = source[line.start..line.end].trim();
        let stmt = text.split('#').next().unwrap_or("").trim();
        if stmt == "pass" || stmt == "..." {
            continue;
        }
        return Err(AnalysisError::NonEmptyBody {
            line: line_of(source, line.start),
            text: text.to_string(),
        });
    }
    let body_source = if body_insert_at <= def.end {
        source[body_insert_at.min(def.end)..def.end].to_string()
    } else {
        String::new()
    };

    // main guard
    let guard_idx = lines
        .iter()
        .position(|l| l.logical && l.indent == 0 && main_guard_re().is_match(&source[l.start..l.end]))
        .ok_or(AnalysisError::MissingMainGuard)?;
    let mut guard_end = guard_idx + 1;
    while guard_end < lines.len() && !ends_block(&lines, guard_end) {
        guard_end += 1;
    }
    while guard_end > guard_idx + 1 && lines[guard_end - 1].blank {
        guard_end -= 1;
    }
    let guard_src_end = lines[guard_end - 1].end;
    let main_guard_source = source[lines[guard_idx].start..guard_src_end].to_string();
    if !calls_function(&lexed, lines[guard_idx].start, guard_src_end, &def.name) {
        return Err(AnalysisError::MainGuardMissingCall(def.name));
    }

    for p in &params {
        if matches!(p.name.as_str(), "self" | "cls") {
            continue;
        }
        if !docstring.contains(p.name.as_str()) {
            return Err(AnalysisError::UndocumentedParam(p.name.clone()));
        }
    }

    Ok(ScaffoldLayout {
        scaffold: Scaffold {
            function_name: def.name,
            params,
            return_annotation,
            docstring,
            body_source,
            main_guard_source,
            raw_source: source.to_string(),
        },
        body_insert_at,
        body_indent,
    })
}

fn calls_function(lexed: &Lexed<'_>, from: usize, to: usize, name: &str) -> bool {
    let src = lexed.src;
    let bytes = src.as_bytes();
    let mut at = from;
    while let Some(p) = src[at..to].find(name) {
        let k = at + p;
        let after = k + name.len();
        let boundary_before = k == 0 || !is_ident(bytes[k - 1]);
        let rest = src[after..to].trim_start();
        if boundary_before && lexed.kinds[k] == Kind::Code && rest.starts_with('(') {
            return true;
        }
        at = after;
    }
    false
}

/// Parses a generated scaffold: lexically sound source holding one function
/// with a docstring, an empty body and a main guard that calls it.
pub fn parse_scaffold(source: &str) -> Result<Scaffold, AnalysisError> {
    layout_scaffold(source).map(|l| l.scaffold)
}

/// Renders one step comment line (without indentation).
pub fn step_comment(k: usize, text: &str) -> String {
    let flat: Vec<&str> = text.split_whitespace().collect();
    format!("# Step {k}. {}", flat.join(" "))
}

/// Inserts numbered step comments right after the scaffold's docstring.
pub fn embed_subtasks(scaffold: &Scaffold, subtasks: &[String]) -> SubtaskPlan {
    let layout = layout_scaffold(&scaffold.raw_source)
        .expect("a Scaffold value always re-parses from its raw source");
    let src = &scaffold.raw_source;
    let mut annotated = String::with_capacity(src.len() + subtasks.len() * 64);
    annotated.push_str(&src[..layout.body_insert_at]);
    if !annotated.ends_with('\n') {
        annotated.push('\n');
    }
    for (i, s) in subtasks.iter().enumerate() {
        annotated.push_str(&layout.body_indent);
        annotated.push_str(&step_comment(i + 1, s));
        annotated.push('\n');
    }
    annotated.push_str(&src[layout.body_insert_at..]);
    SubtaskPlan {
        subtasks: subtasks.iter().map(|s| s.split_whitespace().collect::<Vec<_>>().join(" ")).collect(),
        annotated_source: annotated,
    }
}

/// A `# Step N. text` comment found in model output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepComment {
    pub number: u32,
    pub text: String,
}

pub fn parse_step_comments(text: &str) -> Vec<StepComment> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?mi)^[ \t]*#+[ \t]*Step[ \t]+(\d+)[ \t]*[.:)\-]?[ \t]*(.*?)[ \t]*$").unwrap());
    re.captures_iter(text)
        .filter_map(|c| {
            let number = c[1].parse().ok()?;
            let text = c[2].trim().to_string();
            (!text.is_empty()).then_some(StepComment { number, text })
        })
        .collect()
}

/// Finds every `call_api(api_path="...", params=...)` placeholder in code,
/// nested ones included, ordered by where they start.
pub fn extract_call_sites(source: &str) -> Result<Vec<CallSite>, AnalysisError> {
    let lexed = lex(source);
    let bytes = source.as_bytes();
    let token = LexGrammar::CALL_API_TOKEN;
    let mut sites = Vec::new();
    let mut at = 0;
    while let Some(p) = source[at..].find(token) {
        let k = at + p;
        at = k + token.len();
        if lexed.kinds[k] != Kind::Code {
            continue;
        }
        if k > 0 && is_ident(bytes[k - 1]) || bytes.get(at).is_some_and(|&b| is_ident(b)) {
            continue;
        }
        if source[..k].trim_end().ends_with("def") {
            continue;
        }
        let mut open = at;
        while open < bytes.len() && bytes[open].is_ascii_whitespace() {
            open += 1;
        }
        if bytes.get(open) != Some(&b'(') || lexed.kinds[open] != Kind::Code {
            continue;
        }
        let close = match lexed.match_bracket(open) {
            Ok(c) => c,
            Err(_) => return Err(AnalysisError::UnterminatedCall(k)),
        };
        let mut api_path = None;
        let mut params_literal = String::new();
        for (a, b) in lexed.split_top_level(open + 1, close, b',') {
            let arg = &source[a..b];
            let lead = arg.len() - arg.trim_start().len();
            let arg_start = a + lead;
            let Some((kw, _)) = arg.trim_start().split_once('=') else { continue };
            let kw = kw.trim();
            let eq = arg_start + arg.trim_start().find('=').unwrap();
            if bytes.get(eq + 1) == Some(&b'=') {
                continue;
            }
            let value = source[eq + 1..b].trim();
            let value_start = eq + 1 + (source[eq + 1..b].len() - source[eq + 1..b].trim_start().len());
            match kw {
                "api_path" => {
                    if let Some(lit) = lexed.string_at(value_start) {
                        let plain = lit.prefix_len == 0
                            || !lit.prefix(source).to_ascii_lowercase().contains('f');
                        let whole = source[lit.start..lit.end].len() == strip_trailing_comment(value).len();
                        if plain && whole && lit.terminated {
                            api_path = Some(source[lit.body.0..lit.body.1].to_string());
                        }
                    }
                }
                "params" => params_literal = strip_trailing_comment(value).to_string(),
                _ => {}
            }
        }
        if let Some(api_path) = api_path.filter(|p| !p.is_empty()) {
            sites.push(CallSite {
                api_path,
                params_literal,
                byte_span: (k, close + 1),
            });
        }
        // keep scanning inside the arguments: params may hold nested calls
        at = open + 1;
    }
    Ok(sites)
}

fn strip_trailing_comment(value: &str) -> &str {
    // values are already comma-split at depth 0, so a remaining comment can
    // only trail the literal on its last line
    let lexed = lex(value);
    match (0..value.len()).find(|&k| lexed.kinds[k] == Kind::Comment) {
        Some(c) => value[..c].trim_end(),
        None => value,
    }
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*#\s*api_path:\s*(\S+)\s*$").unwrap())
}

/// True when `template` ends a URL-ish literal: followed by end, `?` or `#`.
fn literal_ends_with_template(literal: &str, template: &str) -> bool {
    literal.match_indices(template).any(|(i, m)| {
        let after = &literal[i + m.len()..];
        after.is_empty() || after.starts_with('?') || after.starts_with('#')
    })
}

/// Every top-level function with the endpoint it wraps, when one can be told.
pub fn extract_sub_functions(source: &str, toolbox: &Toolbox) -> Vec<SubFunction> {
    let lexed = lex(source);
    let lines = lexed.lines();
    let defs = top_level_defs(&lexed, &lines);
    defs.into_iter()
        .map(|def| {
            let marker = def.header_line.checked_sub(1).and_then(|i| {
                let l = &lines[i];
                marker_re()
                    .captures(&source[l.start..l.end])
                    .map(|c| (c[1].to_string(), (l.start, l.next)))
            });
            let (marker_path, marker_span) = match marker {
                Some((p, span)) if toolbox.contains(&p) => (Some(p), Some(span)),
                Some((_, span)) => (None, Some(span)),
                None => (None, None),
            };
            let api_path = marker_path.or_else(|| {
                let literals: Vec<&str> = lexed
                    .strings
                    .iter()
                    .filter(|s| s.start >= def.start && s.end <= def.end && !s.triple)
                    .map(|s| &source[s.body.0..s.body.1])
                    .collect();
                let hits: BTreeSet<&str> = toolbox
                    .paths()
                    .filter(|t| literals.iter().any(|lit| literal_ends_with_template(lit, t)))
                    .collect();
                (hits.len() == 1).then(|| hits.into_iter().next().unwrap().to_string())
            });
            SubFunction {
                name: def.name,
                api_path,
                span: (def.start, def.end),
                marker_span,
            }
        })
        .collect()
}

/// Takes the code out of a model reply: the first fenced block when fences are
/// present (preferring a `python` block), otherwise the whole reply.
pub fn extract_code(reply: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"(?ms)^[ \t]*```[ \t]*([A-Za-z0-9_+-]*)[ \t]*\n(.*?)^[ \t]*```").unwrap());
    let blocks: Vec<(String, String)> = re
        .captures_iter(reply)
        .map(|c| (c[1].to_ascii_lowercase(), c[2].to_string()))
        .collect();
    let chosen = blocks
        .iter()
        .find(|(lang, _)| lang == "python" || lang == "py")
        .or_else(|| blocks.first());
    match chosen {
        Some((_, code)) => code.clone(),
        None => {
            let t = reply.trim_matches('\n');
            let mut s = t.to_string();
            if !s.ends_with('\n') {
                s.push('\n');
            }
            s
        }
    }
}

/// Builds a [`GeneratedProgram`] from source; requires at least one function
/// and a lexically well-formed text.
pub fn analyze_program(source: &str, toolbox: &Toolbox) -> Result<Option<GeneratedProgram>, AnalysisError> {
    check_lexical(source)?;
    let sub_functions = extract_sub_functions(source, toolbox);
    if sub_functions.is_empty() {
        return Ok(None);
    }
    Ok(Some(GeneratedProgram {
        source: source.to_string(),
        sub_functions,
    }))
}
