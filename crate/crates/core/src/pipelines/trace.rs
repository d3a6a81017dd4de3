use serde::{Deserialize, Serialize};

use crate::extract::ExtractionResult;
use crate::gateway::{ChatExchange, Role};
use crate::harness::{TestFailure, TestReport, TestStatus, VisibleTest};
use crate::problem::Problem;
use crate::prompts::Stage;

use super::{Candidate, PipelineKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCallEvent {
    pub role: Role,
    pub stage: Stage,
    pub exchange: ChatExchange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionOutcome {
    Ok,
    CompileFailed,
    NoCodeFound,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionEvent {
    pub producer: Role,
    pub outcome: ExtractionOutcome,
    pub result: ExtractionResult,
}

/// A visible-test run. Wall-clock duration is left out so that replays
/// produce identical traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleTestEvent {
    pub subject: String,
    pub tests: Vec<VisibleTest>,
    pub status: TestStatus,
    pub failures: Vec<TestFailure>,
    pub vacuous: bool,
    pub stderr_excerpt: String,
}

impl VisibleTestEvent {
    pub fn new(subject: impl Into<String>, tests: &[VisibleTest], report: &TestReport) -> Self {
        Self {
            subject: subject.into(),
            tests: tests.to_vec(),
            status: report.status,
            failures: report.failures.clone(),
            vacuous: report.vacuous,
            stderr_excerpt: report.stderr_excerpt.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionEvent {
    pub name: String,
    pub detail: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum TraceEvent {
    ModelCall(ModelCallEvent),
    Extraction(ExtractionEvent),
    VisibleTest(VisibleTestEvent),
    Decision(DecisionEvent),
}

/// Everything that happened while one pipeline solved one problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub problem_id: String,
    pub pipeline: PipelineKind,
    pub template_version: String,
    pub events: Vec<TraceEvent>,
    pub llm_call_count: u32,
    #[serde(rename = "final")]
    pub final_candidate: Candidate,
    /// The program that is scored and exported: prompt preamble (when the
    /// prompt is itself code) followed by the final candidate.
    pub solution: String,
    pub retries_used: u32,
    /// Set when an endpoint or the sandbox failed and the pipeline stopped
    /// early; `final` then holds the latest candidate available.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TraceViolation {
    #[error("llm_call_count {recorded} does not match {actual} model_call events")]
    CallCount { recorded: u32, actual: u32 },
    #[error("retries_used {0} exceeds the limit of 3")]
    TooManyRetries(u32),
    #[error("hidden test material reached a {0} event")]
    HiddenTestLeak(&'static str),
}

impl PipelineTrace {
    pub fn model_calls(&self) -> impl Iterator<Item = &ModelCallEvent> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::ModelCall(call) => Some(call),
            _ => None,
        })
    }

    pub fn decisions(&self) -> impl Iterator<Item = &DecisionEvent> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::Decision(d) => Some(d),
            _ => None,
        })
    }

    pub fn visible_tests(&self) -> impl Iterator<Item = &VisibleTestEvent> {
        self.events.iter().filter_map(|e| match e {
            TraceEvent::VisibleTest(v) => Some(v),
            _ => None,
        })
    }

    /// Structural invariants every trace must satisfy.
    pub fn check_invariants(&self) -> Result<(), TraceViolation> {
        let actual = self.model_calls().count() as u32;
        if actual != self.llm_call_count {
            return Err(TraceViolation::CallCount {
                recorded: self.llm_call_count,
                actual,
            });
        }
        if self.retries_used > super::MAX_RETRIES {
            return Err(TraceViolation::TooManyRetries(self.retries_used));
        }
        Ok(())
    }

    /// Checks that nothing from the problem's hidden test program shows up
    /// in a model call or a visible-test run. Lines of the test program that
    /// also occur in the prompt are not evidence of a leak.
    pub fn audit_leakage(&self, problem: &Problem) -> Result<(), TraceViolation> {
        let prompt = &problem.spec.prompt;
        let markers: Vec<&str> = problem
            .hidden_test_program()
            .lines()
            .map(str::trim)
            .filter(|l| l.len() >= 12 && !prompt.contains(*l))
            .collect();
        if markers.is_empty() {
            return Ok(());
        }
        let leaks = |text: &str| markers.iter().any(|m| text.contains(m));
        for event in &self.events {
            match event {
                TraceEvent::ModelCall(call) => {
                    if call.exchange.messages.iter().any(|m| leaks(&m.text)) {
                        return Err(TraceViolation::HiddenTestLeak("model_call"));
                    }
                }
                TraceEvent::VisibleTest(v) => {
                    if v.tests
                        .iter()
                        .any(|t| leaks(&t.call_expression) || leaks(&t.expected_repr))
                    {
                        return Err(TraceViolation::HiddenTestLeak("visible_test"));
                    }
                }
                TraceEvent::Extraction(_) | TraceEvent::Decision(_) => {}
            }
        }
        Ok(())
    }
}
