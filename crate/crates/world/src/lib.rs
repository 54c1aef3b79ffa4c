//! A deterministic loopback HTTP server that stands in for the benchmark APIs.
//!
//! Routes come from a JSON fixture: method, path template (`{param}` segments
//! bind values), optional parameter matchers, and a canned response. Every
//! request is logged (matched template or raw path, bound params, status) so
//! the harness can tell which tools a program really called.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use percent_encoding::percent_decode_str;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tiny_http::{Header, Response, Server};
use toolcoder_core::{now_ms, ApiWorld, RequestRecord};

/// Matcher value that accepts anything, including absence.
pub const WILDCARD: &str = "*";
const WORKERS: usize = 8;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("cannot read fixture {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed fixture: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("route {index} is invalid: {message}")]
    InvalidRoute { index: usize, message: String },
    #[error("routes {first} and {second} overlap ({method} {template})")]
    OverlappingRoutes { first: usize, second: usize, method: String, template: String },
    #[error("cannot bind loopback listener: {0}")]
    Bind(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    #[serde(default = "default_method")]
    pub method: String,
    pub path_template: String,
    /// Path or query parameter → required value, or `"*"` for any.
    #[serde(default)]
    pub param_matchers: BTreeMap<String, String>,
    #[serde(default = "default_status")]
    pub response_status: u16,
    #[serde(default)]
    pub response_body: Value,
}

fn default_method() -> String {
    "GET".into()
}

fn default_status() -> u16 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFixture {
    #[serde(default)]
    pub auth_token: Option<String>,
    pub routes: Vec<Route>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Param(String),
}

fn segments(template: &str) -> Vec<Segment> {
    template
        .trim_start_matches('/')
        .split('/')
        .map(|s| match s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
            Some(name) => Segment::Param(name.to_string()),
            None => Segment::Literal(s.to_string()),
        })
        .collect()
}

/// Could some concrete path match both templates?
fn templates_overlap(a: &[Segment], b: &[Segment]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|pair| match pair {
            (Segment::Literal(x), Segment::Literal(y)) => x == y,
            _ => true,
        })
}

/// Could one set of parameters satisfy both matcher maps?
fn matchers_overlap(a: &BTreeMap<String, String>, b: &BTreeMap<String, String>) -> bool {
    a.iter().all(|(k, va)| match b.get(k) {
        Some(vb) => va == WILDCARD || vb == WILDCARD || va == vb,
        None => true,
    })
}

impl WorldFixture {
    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let fixture: Self = serde_json::from_str(text)?;
        fixture.validate()?;
        Ok(fixture)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, WorldError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Rejects malformed templates and any two routes a single request could
    /// both match.
    pub fn validate(&self) -> Result<(), WorldError> {
        let parsed: Vec<Vec<Segment>> = self.routes.iter().map(|r| segments(&r.path_template)).collect();
        for (i, route) in self.routes.iter().enumerate() {
            let bad = |message: String| WorldError::InvalidRoute { index: i, message };
            if !route.path_template.starts_with('/') {
                return Err(bad(format!("template `{}` must start with `/`", route.path_template)));
            }
            if route.path_template.contains('?') {
                return Err(bad("template must not carry a query string".into()));
            }
            if !(100..=599).contains(&route.response_status) {
                return Err(bad(format!("status {} out of range", route.response_status)));
            }
            for seg in &parsed[i] {
                if let Segment::Literal(l) = seg {
                    if l.contains('{') || l.contains('}') {
                        return Err(bad(format!("segment `{l}` mixes literal text and a parameter")));
                    }
                }
            }
            for j in 0..i {
                let other = &self.routes[j];
                if other.method.eq_ignore_ascii_case(&route.method)
                    && templates_overlap(&parsed[i], &parsed[j])
                    && matchers_overlap(&route.param_matchers, &other.param_matchers)
                {
                    return Err(WorldError::OverlappingRoutes {
                        first: j,
                        second: i,
                        method: route.method.clone(),
                        template: route.path_template.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Answers one request without any I/O: returns the status, the body, and
    /// the log record. `url` is the request target (path plus query).
    pub fn respond(&self, method: &str, url: &str, authorization: Option<&str>) -> (u16, Option<String>, RequestRecord) {
        let (raw_path, query) = url.split_once('?').unwrap_or((url, ""));
        let raw_path = raw_path.split('#').next().unwrap_or_default();
        let mut params: BTreeMap<String, String> = form_urlencoded::parse(query.as_bytes())
            .map(|(k, v)| (k.into_owned(), v.into_owned()))
            .collect();
        let concrete: Vec<String> = raw_path
            .trim_start_matches('/')
            .split('/')
            .map(|s| percent_decode_str(s).decode_utf8_lossy().into_owned())
            .collect();

        let hit = self.routes.iter().find_map(|route| {
            if !route.method.eq_ignore_ascii_case(method) {
                return None;
            }
            let template = segments(&route.path_template);
            if template.len() != concrete.len() {
                return None;
            }
            let mut bound = params.clone();
            for (seg, value) in template.iter().zip(&concrete) {
                match seg {
                    Segment::Literal(l) if l == value => {}
                    Segment::Literal(_) => return None,
                    Segment::Param(name) => {
                        bound.insert(name.clone(), value.clone());
                    }
                }
            }
            let ok = route.param_matchers.iter().all(|(k, want)| {
                want == WILDCARD || bound.get(k).is_some_and(|got| got.trim() == want.trim())
            });
            ok.then_some((route, bound))
        });

        let authorized = match &self.auth_token {
            None => true,
            Some(token) => authorization.is_some_and(|h| h.trim() == format!("Bearer {token}")),
        };
        let (path, matched, status, body) = match hit {
            Some((route, bound)) => {
                params = bound;
                if authorized {
                    (route.path_template.clone(), true, route.response_status, Some(route.response_body.to_string()))
                } else {
                    (route.path_template.clone(), true, 401, Some(r#"{"status_message":"Invalid API key"}"#.to_string()))
                }
            }
            None if !authorized => (raw_path.to_string(), false, 401, Some(r#"{"status_message":"Invalid API key"}"#.to_string())),
            None => (raw_path.to_string(), false, 404, None),
        };
        let record = RequestRecord {
            path,
            matched,
            params,
            status,
            timestamp_ms: now_ms(),
        };
        (status, body, record)
    }
}

/// A running world. Dropping it stops the server.
pub struct MockWorld {
    base_url: String,
    auth_token: Option<String>,
    log: Arc<Mutex<Vec<RequestRecord>>>,
    server: Arc<Server>,
    workers: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for MockWorld {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockWorld").field("base_url", &self.base_url).finish()
    }
}

impl MockWorld {
    /// Validates the fixture and starts listening on an ephemeral loopback port.
    pub fn serve(fixture: WorldFixture) -> Result<Self, WorldError> {
        fixture.validate()?;
        let server = Arc::new(Server::http("127.0.0.1:0").map_err(|e| WorldError::Bind(e.to_string()))?);
        let port = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| WorldError::Bind("listener has no IP address".into()))?
            .port();
        let log = Arc::new(Mutex::new(Vec::new()));
        let auth_token = fixture.auth_token.clone();
        let fixture = Arc::new(fixture);
        let json = Header::from_bytes("Content-Type", "application/json").expect("static header");
        let workers = (0..WORKERS)
            .map(|_| {
                let (server, log, fixture, json) = (server.clone(), log.clone(), fixture.clone(), json.clone());
                std::thread::spawn(move || {
                    for request in server.incoming_requests() {
                        let auth = request
                            .headers()
                            .iter()
                            .find(|h| h.field.equiv("Authorization"))
                            .map(|h| h.value.as_str().to_string());
                        let (status, body, record) =
                            fixture.respond(request.method().as_str(), request.url(), auth.as_deref());
                        // logged before the reply goes out, so a client that has
                        // its response always finds its record
                        log.lock().unwrap().push(record);
                        let response = Response::from_string(body.unwrap_or_default())
                            .with_status_code(status)
                            .with_header(json.clone());
                        let _ = request.respond(response);
                    }
                })
            })
            .collect();
        Ok(Self {
            base_url: format!("http://127.0.0.1:{port}"),
            auth_token,
            log,
            server,
            workers,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn auth_token(&self) -> Option<&str> {
        self.auth_token.as_deref()
    }

    /// Returns and clears the log in one step.
    pub fn drain_log(&self) -> Vec<RequestRecord> {
        std::mem::take(&mut *self.log.lock().unwrap())
    }
}

impl ApiWorld for MockWorld {
    fn base_url(&self) -> String {
        self.base_url.clone()
    }

    fn auth_token(&self) -> Option<String> {
        self.auth_token.clone()
    }

    fn drain_log(&self) -> Vec<RequestRecord> {
        MockWorld::drain_log(self)
    }
}

impl Drop for MockWorld {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}
