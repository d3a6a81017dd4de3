//! In-process stand-ins for the model endpoints and the sandbox, for tests
//! and offline demonstrations.
//!
//! [`ScriptedTransport`] answers chat requests from per-model queues or
//! closures. [`StubSandbox`] answers sandbox requests from a closure, with a
//! lexical Python plausibility check ([`looks_like_python`]) as the default
//! compile oracle.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use async_trait::async_trait;
use regex::Regex;
use url::Url;

use crate::extract::scan::{indent_of, scan};
use crate::gateway::wire::{completion_body, WireRequest};
use crate::gateway::{ChatTransport, Gateway, Role, RoleConfig, TransportFailure};
use crate::pipelines::{PipelineContext, PipelineOptions};
use crate::prompts::PromptKit;
use crate::sandbox::{Sandbox, SandboxError, SandboxMode, SandboxRequest, SandboxResponse, WireFailure};

pub const CODER_MODEL: &str = "scripted-coder";
pub const PLANNER_MODEL: &str = "scripted-planner";

/// One scripted endpoint answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    /// A well-formed completion carrying this text.
    Text(String),
    /// A raw response body, for malformed-response tests.
    Body(String),
    Transient(String),
    Rejected(String),
}

impl Reply {
    pub fn text(s: impl Into<String>) -> Self {
        Reply::Text(s.into())
    }
}

type Responder = Box<dyn Fn(&WireRequest) -> Reply + Send + Sync>;

/// Answers each model from its queue first, then from its responder.
#[derive(Default)]
pub struct ScriptedTransport {
    queues: Mutex<HashMap<String, VecDeque<Reply>>>,
    responders: HashMap<String, Responder>,
    log: Mutex<Vec<WireRequest>>,
}

impl ScriptedTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, model: &str, reply: Reply) -> &Self {
        self.queues
            .lock()
            .expect("queue lock")
            .entry(model.to_string())
            .or_default()
            .push_back(reply);
        self
    }

    pub fn with_responder(mut self, model: &str, f: impl Fn(&WireRequest) -> Reply + Send + Sync + 'static) -> Self {
        self.responders.insert(model.to_string(), Box::new(f));
        self
    }

    /// Every request received, in arrival order.
    pub fn requests(&self) -> Vec<WireRequest> {
        self.log.lock().expect("log lock").clone()
    }

    pub fn request_count(&self, model: &str) -> usize {
        self.log
            .lock()
            .expect("log lock")
            .iter()
            .filter(|r| r.model == model)
            .count()
    }
}

#[async_trait]
impl ChatTransport for ScriptedTransport {
    async fn send(
        &self,
        _base_url: &Url,
        _api_key: Option<&str>,
        request: &WireRequest,
        _timeout: Duration,
    ) -> Result<String, TransportFailure> {
        self.log.lock().expect("log lock").push(request.clone());
        let queued = self
            .queues
            .lock()
            .expect("queue lock")
            .get_mut(&request.model)
            .and_then(VecDeque::pop_front);
        let reply = match queued {
            Some(reply) => reply,
            None => match self.responders.get(&request.model) {
                Some(f) => f(request),
                None => {
                    return Err(TransportFailure::Rejected(format!(
                        "no script left for `{}`",
                        request.model
                    )))
                }
            },
        };
        match reply {
            Reply::Text(text) => Ok(completion_body(&text)),
            Reply::Body(body) => Ok(body),
            Reply::Transient(m) => Err(TransportFailure::Transient(m)),
            Reply::Rejected(m) => Err(TransportFailure::Rejected(m)),
        }
    }
}

/// The user message of a request, where the task text lives.
pub fn user_text(request: &WireRequest) -> &str {
    request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == "user")
        .map_or("", |m| m.content.as_str())
}

const KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue", "def", "del",
    "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in", "is", "lambda", "nonlocal",
    "not", "or", "pass", "raise", "return", "try", "while", "with", "yield", "match", "case", "type", "print",
];

/// A lexical approximation of "this parses as a Python module".
///
/// Catches what messy model output typically contains: prose sentences,
/// markdown fences and bullets, unexpected or missing indentation,
/// unbalanced brackets and unterminated strings. Not a parser.
pub fn looks_like_python(code: &str) -> Result<(), String> {
    static PROSE: OnceLock<Regex> = OnceLock::new();
    static LIST_ITEM: OnceLock<Regex> = OnceLock::new();
    let prose = PROSE.get_or_init(|| Regex::new(r"^([A-Za-z_][A-Za-z0-9_]*)\s+[A-Za-z0-9_(\[\x22']").unwrap());
    let list_item = LIST_ITEM.get_or_init(|| Regex::new(r"^(?:\d+[.)]|[-*•])\s+\S").unwrap());

    let mut lines: Vec<&str> = code.lines().collect();
    lines.push("");
    let infos = scan(&lines);
    let end = infos.last().expect("sentinel line");
    if end.starts_in_string {
        return Err("unterminated triple-quoted string".into());
    }
    if end.depth_at_start != 0 {
        return Err("unbalanced brackets".into());
    }

    let mut stack: Vec<usize> = vec![0];
    let mut expect_block = false;
    for (i, (line, info)) in lines.iter().zip(&infos).enumerate() {
        let trimmed = line.trim();
        if !info.is_statement_start() || trimmed.starts_with('#') {
            continue;
        }
        let n = i + 1;
        if line.contains("```") {
            return Err(format!("line {n}: invalid syntax (markdown fence)"));
        }
        let indent = indent_of(line);
        let current = *stack.last().expect("stack never empty");
        if expect_block {
            if indent <= current {
                return Err(format!("line {n}: expected an indented block"));
            }
            stack.push(indent);
        } else if indent > current {
            return Err(format!("line {n}: unexpected indent"));
        } else if indent < current {
            while *stack.last().expect("stack never empty") > indent {
                stack.pop();
            }
            if *stack.last().expect("stack never empty") != indent {
                return Err(format!("line {n}: unindent does not match any outer indentation level"));
            }
        }
        if list_item.is_match(trimmed) {
            return Err(format!("line {n}: invalid syntax"));
        }
        if let Some(c) = prose.captures(trimmed) {
            if !KEYWORDS.contains(&&c[1]) {
                return Err(format!("line {n}: invalid syntax"));
            }
        }
        expect_block = info.opens_block;
    }
    if expect_block {
        return Err("expected an indented block at end of input".into());
    }
    Ok(())
}

type Rule = Box<dyn Fn(&SandboxRequest) -> SandboxResponse + Send + Sync>;

/// A sandbox that never runs anything.
///
/// Compile requests go through [`looks_like_python`]. Run requests go to the
/// configured rule; the default rule reports every test as passing once the
/// code looks like Python.
pub struct StubSandbox {
    rule: Rule,
    log: Mutex<Vec<SandboxRequest>>,
}

impl StubSandbox {
    pub fn compile_oracle() -> Self {
        Self::with_runner(|_| SandboxResponse::with_status("all_passed"))
    }

    /// `run` answers run_visible and run_program requests whose code passes
    /// the compile oracle.
    pub fn with_runner(run: impl Fn(&SandboxRequest) -> SandboxResponse + Send + Sync + 'static) -> Self {
        Self::with_rule(move |request| {
            if let Err(message) = looks_like_python(&request.code) {
                return compile_error(&message);
            }
            match request.mode {
                SandboxMode::CompileOnly => SandboxResponse::with_status("ok"),
                _ => run(request),
            }
        })
    }

    /// `rule` answers every request, compile checks included.
    pub fn with_rule(rule: impl Fn(&SandboxRequest) -> SandboxResponse + Send + Sync + 'static) -> Self {
        Self {
            rule: Box::new(rule),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn requests(&self) -> Vec<SandboxRequest> {
        self.log.lock().expect("log lock").clone()
    }
}

pub fn compile_error(message: &str) -> SandboxResponse {
    SandboxResponse {
        stderr_excerpt: format!("SyntaxError: {message}"),
        ..SandboxResponse::with_status("compile_error")
    }
}

/// A `failed` response with one failure.
pub fn failed(test: &str, expected: &str, actual: &str) -> SandboxResponse {
    SandboxResponse {
        failures: vec![WireFailure {
            test: test.into(),
            expected: expected.into(),
            actual: actual.into(),
        }],
        ..SandboxResponse::with_status("failed")
    }
}

#[async_trait]
impl Sandbox for StubSandbox {
    async fn execute(&self, request: &SandboxRequest) -> Result<SandboxResponse, SandboxError> {
        self.log.lock().expect("log lock").push(request.clone());
        Ok((self.rule)(request))
    }
}

/// Role configs pointing at the scripted model names.
pub fn scripted_roles() -> (RoleConfig, RoleConfig) {
    let coder = RoleConfig::new(
        Role::Coder,
        Url::parse("http://coder.invalid").expect("static url"),
        CODER_MODEL,
    );
    let planner = RoleConfig::new(
        Role::Planner,
        Url::parse("http://planner.invalid").expect("static url"),
        PLANNER_MODEL,
    );
    (coder, planner)
}

/// A pipeline context wired to the given stand-ins, without a cache.
pub fn scripted_context(transport: Arc<ScriptedTransport>, sandbox: Arc<dyn Sandbox>) -> PipelineContext {
    let (coder, planner) = scripted_roles();
    PipelineContext {
        gateway: Arc::new(Gateway::new(transport).with_backoff(Duration::from_millis(1))),
        sandbox,
        prompts: PromptKit::default(),
        coder,
        planner,
        options: PipelineOptions::default(),
    }
}
