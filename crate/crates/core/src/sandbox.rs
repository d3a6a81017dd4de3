//! Client side of the sandbox runner protocol.
//!
//! The runner is a separate program, invoked once per request with no
//! arguments. It reads one JSON document on stdin and writes one on stdout:
//!
//! ```text
//! request:  {"mode": "compile_only" | "run_visible" | "run_program",
//!            "code": "...", "tests": [...], "program": "...", "timeout_s": 10.0}
//! response: {"status": "...", "failures": [...], "stderr_excerpt": "...", "elapsed_ms": 12}
//! ```
//!
//! `tests` is present only for `run_visible` and `program` only for
//! `run_program`. Each test is `{"kind": "doctest" | "equals" | "truthy",
//! "call": "...", "expected": "..."}`: a doctest compares `repr(call)` with
//! `expected` after stripping trailing whitespace, `equals` compares the two
//! evaluated expressions with `==`, `truthy` checks `bool(call)`. Each failure
//! is `{"test", "expected", "actual"}`. Status is `ok` (compile succeeded),
//! `all_passed`, `failed`, `crashed`, `timeout`, `compile_error`, or `error`
//! for a request the runner could not understand.

use std::process::Stdio;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::io::AsyncWriteExt;
use tokio::process::Command;
use tokio::sync::Semaphore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SandboxMode {
    CompileOnly,
    RunVisible,
    RunProgram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    Doctest,
    Equals,
    Truthy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTest {
    pub kind: TestKind,
    pub call: String,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxRequest {
    pub mode: SandboxMode,
    pub code: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tests: Option<Vec<WireTest>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub program: Option<String>,
    pub timeout_s: f64,
}

impl SandboxRequest {
    pub fn compile_only(code: impl Into<String>, timeout: Duration) -> Self {
        Self {
            mode: SandboxMode::CompileOnly,
            code: code.into(),
            tests: None,
            program: None,
            timeout_s: timeout.as_secs_f64(),
        }
    }

    pub fn run_visible(code: impl Into<String>, tests: Vec<WireTest>, timeout: Duration) -> Self {
        Self {
            mode: SandboxMode::RunVisible,
            code: code.into(),
            tests: Some(tests),
            program: None,
            timeout_s: timeout.as_secs_f64(),
        }
    }

    pub fn run_program(code: impl Into<String>, program: impl Into<String>, timeout: Duration) -> Self {
        Self {
            mode: SandboxMode::RunProgram,
            code: code.into(),
            tests: None,
            program: Some(program.into()),
            timeout_s: timeout.as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireFailure {
    #[serde(default)]
    pub test: String,
    #[serde(default)]
    pub expected: String,
    #[serde(default)]
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxResponse {
    pub status: String,
    #[serde(default)]
    pub failures: Vec<WireFailure>,
    #[serde(default)]
    pub stderr_excerpt: String,
    #[serde(default)]
    pub elapsed_ms: u64,
}

impl SandboxResponse {
    pub fn with_status(status: &str) -> Self {
        Self {
            status: status.to_string(),
            failures: Vec::new(),
            stderr_excerpt: String::new(),
            elapsed_ms: 0,
        }
    }
}

/// Every way the sandbox can be unavailable to the caller.
#[derive(Debug, thiserror::Error)]
pub enum SandboxError {
    #[error("sandbox runner could not be started: {0}")]
    Spawn(#[source] std::io::Error),
    #[error("sandbox runner did not answer within {0:?}")]
    Unresponsive(Duration),
    #[error("sandbox runner failed: {0}")]
    Runner(String),
    #[error("sandbox runner rejected the request: {0}")]
    Rejected(String),
}

/// Anything that can answer sandbox requests.
#[async_trait]
pub trait Sandbox: Send + Sync {
    async fn execute(&self, request: &SandboxRequest) -> Result<SandboxResponse, SandboxError>;
}

/// Spawns the configured runner command once per request.
pub struct ProcessSandbox {
    program: String,
    args: Vec<String>,
    permits: Semaphore,
    grace: Duration,
}

impl ProcessSandbox {
    /// `command` is split on whitespace: `python3 /opt/runner/sandbox_runner.py`.
    pub fn new(command: &str, max_processes: usize) -> Self {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts.next().unwrap_or_default();
        Self {
            program,
            args: parts.collect(),
            permits: Semaphore::new(max_processes.max(1)),
            grace: Duration::from_secs(5),
        }
    }
}

#[async_trait]
impl Sandbox for ProcessSandbox {
    async fn execute(&self, request: &SandboxRequest) -> Result<SandboxResponse, SandboxError> {
        let _permit = self.permits.acquire().await.expect("semaphore never closed");
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true)
            .spawn()
            .map_err(SandboxError::Spawn)?;

        let payload = serde_json::to_vec(request).expect("request serializes");
        let mut stdin = child.stdin.take().expect("stdin piped");
        stdin
            .write_all(&payload)
            .await
            .map_err(|e| SandboxError::Runner(format!("writing request: {e}")))?;
        drop(stdin);

        // The runner enforces the per-request timeout itself; this bound only
        // catches a runner that hangs.
        let limit = Duration::from_secs_f64(request.timeout_s * 2.0) + self.grace;
        let output = tokio::time::timeout(limit, child.wait_with_output())
            .await
            .map_err(|_| SandboxError::Unresponsive(limit))?
            .map_err(|e| SandboxError::Runner(e.to_string()))?;

        let parsed: Result<SandboxResponse, _> = serde_json::from_slice(&output.stdout);
        match parsed {
            Ok(response) if response.status == "error" => Err(SandboxError::Rejected(response.stderr_excerpt)),
            Ok(response) => Ok(response),
            Err(e) => Err(SandboxError::Runner(format!(
                "unreadable response ({e}), exit {:?}: {}",
                output.status.code(),
                String::from_utf8_lossy(&output.stderr)
                    .chars()
                    .take(2000)
                    .collect::<String>()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_field_names() {
        let req = SandboxRequest::run_visible(
            "def f(): pass",
            vec![WireTest {
                kind: TestKind::Doctest,
                call: "f()".into(),
                expected: "None".into(),
            }],
            Duration::from_secs(10),
        );
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["mode"], "run_visible");
        assert_eq!(v["timeout_s"], 10.0);
        assert_eq!(v["tests"][0]["kind"], "doctest");
        assert!(v.get("program").is_none());

        let v = serde_json::to_value(SandboxRequest::compile_only("x", Duration::from_millis(1500))).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"mode": "compile_only", "code": "x", "timeout_s": 1.5})
        );

        let v = serde_json::to_value(SandboxRequest::run_program("a", "b", Duration::from_secs(1))).unwrap();
        assert_eq!(v["program"], "b");
        assert!(v.get("tests").is_none());
    }

    #[test]
    fn response_defaults() {
        let r: SandboxResponse = serde_json::from_str(r#"{"status":"ok"}"#).unwrap();
        assert_eq!(r, SandboxResponse::with_status("ok"));
    }

    #[tokio::test]
    async fn missing_runner_is_a_spawn_error() {
        let sandbox = ProcessSandbox::new("/nonexistent/runner-binary", 1);
        let err = sandbox
            .execute(&SandboxRequest::compile_only("x", Duration::from_secs(1)))
            .await
            .unwrap_err();
        assert!(matches!(err, SandboxError::Spawn(_)));
    }
}
