//! Random programs with nested `call_api` placeholders, generated together
//! with the call sites a bracket-matching reader must find in them.
//!
//! Shared by the core integration tests and the acceptance target.

use rand::seq::SliceRandom;
use rand::Rng;

/// Expected call site: path and byte span `[start, end)` of the whole call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expected {
    pub api_path: String,
    pub span: (usize, usize),
}

pub struct Generated {
    pub source: String,
    pub expected: Vec<Expected>,
}

const PATHS: &[&str] = &[
    "/3/search/person",
    "/3/person/{person_id}",
    "/3/person/{person_id}/movie_credits",
    "/3/movie/{movie_id}",
    "/3/search/movie",
];

/// Decoys that mention `call_api(` without being a call site.
const DECOYS: &[&str] = &[
    "\"call_api(api_path='/3/in/string', params={})\"",
    "'(unbalanced ( inside a string'",
    "call_api_v2(api_path=\"/3/other\")",
    "my_call_api(api_path=\"/3/other\")",
    "\"\"\"triple ) quoted call_api(api_path=\"/3/x\")\"\"\"",
];

struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    out: String,
    expected: Vec<Expected>,
}

impl<R: Rng> Gen<'_, R> {
    fn value(&mut self, depth: u32) {
        let choice = if depth == 0 { self.rng.gen_range(0..4) } else { self.rng.gen_range(0..7) };
        match choice {
            0 => {
                let n: u32 = self.rng.gen_range(0..1000);
                self.out.push_str(&n.to_string());
            }
            1 => self.out.push_str("\"text, with (parens] and {braces\""),
            2 => self.out.push_str(DECOYS.choose(self.rng).unwrap()),
            3 => self.out.push_str("person_id"),
            4 => {
                self.out.push('[');
                let n = self.rng.gen_range(0..3);
                for i in 0..n {
                    if i > 0 {
                        self.out.push_str(", ");
                    }
                    self.value(depth - 1);
                }
                self.out.push(']');
            }
            5 => {
                self.out.push_str("len(");
                self.value(depth - 1);
                self.out.push(')');
            }
            _ => self.call(depth - 1),
        }
    }

    fn call(&mut self, depth: u32) {
        let start = self.out.len();
        let index = self.expected.len();
        let path = PATHS.choose(self.rng).unwrap().to_string();
        self.expected.push(Expected { api_path: path.clone(), span: (start, start) });
        self.out.push_str("call_api(");
        if self.rng.gen_bool(0.5) {
            self.out.push_str("\n        ");
        }
        let params_first = self.rng.gen_bool(0.3);
        if params_first {
            self.params(depth);
            self.out.push_str(", ");
        }
        self.out.push_str(&format!("api_path=\"{path}\""));
        if !params_first {
            self.out.push_str(", ");
            self.params(depth);
        }
        if self.rng.gen_bool(0.3) {
            self.out.push_str(",  # trailing ) comment\n    ");
        }
        self.out.push(')');
        self.expected[index].span.1 = self.out.len();
    }

    fn params(&mut self, depth: u32) {
        self.out.push_str("params={");
        let n = self.rng.gen_range(0..3);
        for i in 0..n {
            if i > 0 {
                self.out.push_str(", ");
            }
            self.out.push_str(&format!("\"k{i}\": "));
            self.value(depth);
        }
        self.out.push('}');
    }
}

/// One program of a few statements whose `call_api` calls nest up to
/// `max_depth` deep.
pub fn generate<R: Rng>(rng: &mut R, max_depth: u32) -> Generated {
    let mut g = Gen { rng, out: String::from("def solve(person_id):\n    '''Solve with person_id.'''\n"), expected: Vec::new() };
    let statements = g.rng.gen_range(1..5);
    for s in 0..statements {
        match g.rng.gen_range(0..4) {
            0 => g.out.push_str("    # call_api(api_path=\"/3/commented\", params={})\n"),
            1 => {
                g.out.push_str(&format!("    x{s} = "));
                g.value(max_depth);
                g.out.push('\n');
            }
            _ => {
                g.out.push_str(&format!("    r{s} = "));
                let depth = g.rng.gen_range(0..=max_depth);
                g.call(depth);
                g.out.push('\n');
            }
        }
    }
    g.out.push_str("    return None\n");
    Generated { source: g.out, expected: g.expected }
}
