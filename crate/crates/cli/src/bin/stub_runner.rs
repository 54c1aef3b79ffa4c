//! A canned runner that speaks the result-document protocol without a guest
//! runtime. It never interprets the program; it only obeys directive comments:
//!
//! - `# stub-get: /path?query` GETs `$BASE_URL/path` with `$TOOL_API_TOKEN`
//!   as bearer token; an HTTP error status raises `HTTPError` at that line
//! - `# stub-stdout: text` appends a line to the captured stdout
//! - `# stub-raise: Type: message` raises at that line
//! - `# stub-sleep-ms: N` sleeps
//! - `# stub-exit: N` exits with code N without a document
//! - `# stub-garbage` prints a non-document and exits 0
//!
//! A directive may also trail code on the same line. Directives run in file
//! order. Raised exceptions carry a `<module>` frame and, when the directive
//! sits inside a function, a frame for that function.

use std::time::{Duration, Instant};

use serde_json::{json, Value};

const DIRECTIVE: &str = "# stub-";

struct Program {
    file: String,
    lines: Vec<String>,
}

impl Program {
    /// Name of the `def` whose body holds line `idx` (0-based), if any.
    fn enclosing_function(&self, idx: usize) -> Option<String> {
        let indent = |l: &str| l.len() - l.trim_start().len();
        let here = indent(&self.lines[idx]);
        self.lines[..idx].iter().rev().find_map(|l| {
            let t = l.trim_start();
            if t.is_empty() || t.starts_with('#') || indent(l) >= here {
                return None;
            }
            let rest = t.strip_prefix("def ")?;
            Some(rest.split('(').next().unwrap_or(rest).trim().to_string())
        })
    }

    /// The statement that starts the program: the first code line inside the
    /// main guard, or the directive line itself.
    fn module_line(&self, fallback: usize) -> usize {
        let guard = self
            .lines
            .iter()
            .position(|l| l.starts_with("if __name__"));
        guard
            .and_then(|g| {
                self.lines[g + 1..]
                    .iter()
                    .position(|l| {
                        let t = l.trim();
                        !t.is_empty() && !t.starts_with('#')
                    })
                    .map(|p| g + 1 + p)
            })
            .unwrap_or(fallback)
    }

    fn frame(&self, idx: usize, func: &str) -> Value {
        let line = &self.lines[idx];
        let code = match directive_at(line) {
            Some(pos) if !line[..pos].trim().is_empty() => line[..pos].trim(),
            _ => line.trim(),
        };
        json!({"file": self.file, "line": idx + 1, "func": func, "code": code})
    }

    fn exception(&self, idx: usize, type_name: &str, message: &str) -> Value {
        let mut frames = Vec::new();
        match self.enclosing_function(idx) {
            Some(func) => {
                frames.push(self.frame(self.module_line(idx), "<module>"));
                frames.push(self.frame(idx, &func));
            }
            None => frames.push(self.frame(idx, "<module>")),
        }
        json!({"type": type_name, "message": message, "frames": frames})
    }
}

/// Byte offset of a directive comment, at line start or trailing code.
fn directive_at(line: &str) -> Option<usize> {
    line.match_indices(DIRECTIVE)
        .map(|(i, _)| i)
        .find(|&i| line[..i].trim().is_empty() || line[..i].ends_with(char::is_whitespace))
}

fn http_get(path: &str) -> Result<(), String> {
    let base = std::env::var("BASE_URL").map_err(|_| "BASE_URL is not set".to_string())?;
    let mut req = ureq::get(&format!("{}{}", base.trim_end_matches('/'), path)).timeout(Duration::from_secs(10));
    if let Ok(token) = std::env::var("TOOL_API_TOKEN") {
        req = req.set("Authorization", &format!("Bearer {token}"));
    }
    match req.call() {
        Ok(_) => Ok(()),
        Err(ureq::Error::Status(code, _)) => Err(format!("{code} Client Error for url: {path}")),
        Err(e) => Err(format!("connection failed: {e}")),
    }
}

fn run(program: &Program) -> Value {
    let started = Instant::now();
    let mut stdout = String::new();
    let done = |status: &str, stdout: &str, exception: Option<Value>| {
        let mut doc = json!({
            "status": status,
            "stdout_text": stdout,
            "duration_ms": started.elapsed().as_millis() as u64,
        });
        if let Some(e) = exception {
            doc["exception"] = e;
        }
        doc
    };
    for (idx, line) in program.lines.iter().enumerate() {
        let Some(pos) = directive_at(line) else { continue };
        let directive = &line[pos + DIRECTIVE.len()..];
        let (name, arg) = directive.split_once(':').unwrap_or((directive, ""));
        let arg = arg.trim();
        match name.trim() {
            "get" => {
                if let Err(message) = http_get(arg) {
                    return done("exception", &stdout, Some(program.exception(idx, "requests.exceptions.HTTPError", &message)));
                }
            }
            "stdout" => {
                stdout.push_str(arg);
                stdout.push('\n');
            }
            "raise" => {
                let (type_name, message) = arg.split_once(':').unwrap_or((arg, ""));
                return done("exception", &stdout, Some(program.exception(idx, type_name.trim(), message.trim())));
            }
            "sleep-ms" => std::thread::sleep(Duration::from_millis(arg.parse().unwrap_or(0))),
            "exit" => std::process::exit(arg.parse().unwrap_or(1)),
            "garbage" => {
                println!("this is not a result document");
                std::process::exit(0);
            }
            _ => {}
        }
    }
    done("ok", &stdout, None)
}

fn main() {
    let Some(path) = std::env::args().nth(1) else {
        eprintln!("usage: toolcoder-stub-runner <program-file>");
        std::process::exit(2);
    };
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {path}: {e}");
            std::process::exit(2);
        }
    };
    let file = std::path::Path::new(&path)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.clone());
    let program = Program {
        file,
        lines: text.lines().map(str::to_string).collect(),
    };
    println!("{}", run(&program));
}
