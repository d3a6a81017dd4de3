//! Running candidates against tests through the sandbox.
//!
//! Visible tests come from the prompt and may be used inside pipelines.
//! Hidden tests come from the dataset and are only run by the benchmark
//! scorer; nothing under `pipelines` calls [`run_hidden_tests`].

mod visible;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::sandbox::{Sandbox, SandboxError, SandboxRequest, SandboxResponse};

pub use visible::{parse_visible_tests, VisibleTest};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    AllPassed,
    Failed,
    Crashed,
    Timeout,
    CompileError,
}

impl TestStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TestStatus::AllPassed => "all_passed",
            TestStatus::Failed => "failed",
            TestStatus::Crashed => "crashed",
            TestStatus::Timeout => "timeout",
            TestStatus::CompileError => "compile_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFailure {
    pub test: String,
    pub expected: String,
    pub actual_or_error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestReport {
    pub status: TestStatus,
    pub failures: Vec<TestFailure>,
    pub duration_ms: u64,
    #[serde(default)]
    pub stderr_excerpt: String,
    /// Passed only because there was nothing to run.
    #[serde(default)]
    pub vacuous: bool,
}

impl TestReport {
    pub fn passed(duration_ms: u64) -> Self {
        Self {
            status: TestStatus::AllPassed,
            failures: Vec::new(),
            duration_ms,
            stderr_excerpt: String::new(),
            vacuous: false,
        }
    }

    pub fn is_pass(&self) -> bool {
        self.status == TestStatus::AllPassed
    }

    /// Maps a runner response onto a report, keeping the status/failure
    /// invariant even when the runner is sloppy about it.
    pub fn from_response(response: SandboxResponse) -> Self {
        let failures: Vec<TestFailure> = response
            .failures
            .into_iter()
            .map(|f| TestFailure {
                test: f.test,
                expected: f.expected,
                actual_or_error: f.actual,
            })
            .collect();
        let status = match response.status.as_str() {
            "all_passed" | "ok" if failures.is_empty() => TestStatus::AllPassed,
            "all_passed" | "ok" | "failed" => TestStatus::Failed,
            "timeout" => TestStatus::Timeout,
            "compile_error" => TestStatus::CompileError,
            _ => TestStatus::Crashed,
        };
        Self {
            status,
            failures,
            duration_ms: response.elapsed_ms,
            stderr_excerpt: response.stderr_excerpt,
            vacuous: false,
        }
    }

    /// Human-readable account of what went wrong, for fix prompts.
    pub fn feedback(&self) -> String {
        let mut out = match self.status {
            TestStatus::AllPassed if self.vacuous => "No examples to run; the code compiles.".to_string(),
            TestStatus::AllPassed => "All examples pass.".to_string(),
            TestStatus::Failed => format!("{} example(s) failed.", self.failures.len()),
            TestStatus::Crashed => "The code raised an exception.".to_string(),
            TestStatus::Timeout => "Execution timed out (possible infinite loop).".to_string(),
            TestStatus::CompileError => "The code does not compile.".to_string(),
        };
        for f in &self.failures {
            out.push_str(&format!(
                "\n\nTest: {}\nExpected: {}\nGot: {}",
                f.test, f.expected, f.actual_or_error
            ));
        }
        let stderr = self.stderr_excerpt.trim();
        if !stderr.is_empty() && self.status != TestStatus::AllPassed {
            out.push_str("\n\nError output:\n");
            out.push_str(stderr);
        }
        out
    }
}

/// Outcome of a compile-only sandbox request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompileOutcome {
    Ok,
    Diagnostics(Vec<String>),
}

impl CompileOutcome {
    pub fn is_ok(&self) -> bool {
        matches!(self, CompileOutcome::Ok)
    }
}

/// Parses (never executes) `code` in the sandbox.
pub async fn compile_check(sandbox: &dyn Sandbox, code: &str) -> Result<CompileOutcome, SandboxError> {
    let response = sandbox
        .execute(&SandboxRequest::compile_only(code, DEFAULT_TIMEOUT))
        .await?;
    if response.status == "ok" || response.status == "all_passed" {
        return Ok(CompileOutcome::Ok);
    }
    let mut diagnostics: Vec<String> = response
        .failures
        .into_iter()
        .map(|f| f.actual)
        .filter(|s| !s.is_empty())
        .collect();
    if !response.stderr_excerpt.trim().is_empty() {
        diagnostics.push(response.stderr_excerpt.trim().to_string());
    }
    if diagnostics.is_empty() {
        diagnostics.push(format!("compile status `{}`", response.status));
    }
    Ok(CompileOutcome::Diagnostics(diagnostics))
}

/// Runs `code` against prompt-visible examples.
///
/// With no examples this only compile-checks; a clean compile counts as a
/// pass and the report is marked `vacuous`.
pub async fn run_visible_tests(
    sandbox: &dyn Sandbox,
    code: &str,
    tests: &[VisibleTest],
    timeout: Duration,
) -> Result<TestReport, SandboxError> {
    if tests.is_empty() {
        return Ok(match compile_check(sandbox, code).await? {
            CompileOutcome::Ok => TestReport {
                vacuous: true,
                ..TestReport::passed(0)
            },
            CompileOutcome::Diagnostics(diags) => TestReport {
                status: TestStatus::CompileError,
                stderr_excerpt: diags.join("\n"),
                ..TestReport::passed(0)
            },
        });
    }
    let wire = tests.iter().map(VisibleTest::to_wire).collect();
    let response = sandbox
        .execute(&SandboxRequest::run_visible(code, wire, timeout))
        .await?;
    Ok(TestReport::from_response(response))
}

/// Runs `code` followed by the dataset's test program. Scoring only.
pub async fn run_hidden_tests(
    sandbox: &dyn Sandbox,
    code: &str,
    test_program: &str,
    timeout: Duration,
) -> Result<TestReport, SandboxError> {
    let response = sandbox
        .execute(&SandboxRequest::run_program(code, test_program, timeout))
        .await?;
    Ok(TestReport::from_response(response))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sandbox::WireFailure;

    #[test]
    fn status_invariant_is_restored() {
        let mut response = SandboxResponse::with_status("all_passed");
        response.failures.push(WireFailure {
            test: "f()".into(),
            expected: "1".into(),
            actual: "2".into(),
        });
        let report = TestReport::from_response(response);
        assert_eq!(report.status, TestStatus::Failed);

        let report = TestReport::from_response(SandboxResponse::with_status("weird"));
        assert_eq!(report.status, TestStatus::Crashed);
    }

    #[test]
    fn feedback_mentions_each_failure() {
        let report = TestReport {
            status: TestStatus::Failed,
            failures: vec![TestFailure {
                test: "add(1, 2)".into(),
                expected: "3".into(),
                actual_or_error: "-1".into(),
            }],
            ..TestReport::passed(4)
        };
        let text = report.feedback();
        assert!(text.contains("Test: add(1, 2)\nExpected: 3\nGot: -1"));
    }
}
