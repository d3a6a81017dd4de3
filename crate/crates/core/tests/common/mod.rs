#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use dualcode::gateway::wire::WireRequest;
use dualcode::pipelines::PipelineContext;
use dualcode::problem::{DatasetKind, Problem, ProblemSpec};
use dualcode::prompts::Stage;
use dualcode::sandbox::{ProcessSandbox, SandboxMode, SandboxResponse};
use dualcode::testing::{failed, scripted_context, user_text, Reply, ScriptedTransport, StubSandbox};

pub fn reference_runner_command() -> String {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/support/reference_runner.py");
    format!("python3 {}", script.display())
}

pub fn reference_sandbox() -> ProcessSandbox {
    ProcessSandbox::new(&reference_runner_command(), 8)
}

/// Which template produced a request, read from its opening sentence.
pub fn stage_of(request: &WireRequest) -> Stage {
    let text = user_text(request);
    if text.starts_with("Complete the following") {
        if text.contains("An analyst prepared") {
            Stage::CodeWithPlan
        } else {
            Stage::Generate
        }
    } else if text.starts_with("Analyze the following") {
        Stage::Plan
    } else if text.starts_with("Review the candidate") {
        Stage::Review
    } else if text.starts_with("The following Python function was reviewed") {
        Stage::Fix
    } else if text.starts_with("The following Python function fails") {
        Stage::RetryFix
    } else if text.starts_with("The following Python function specification") {
        Stage::Enrich
    } else if text.starts_with("Two earlier attempts") {
        Stage::Synthesize
    } else if text.starts_with("Two candidate solutions") && text.contains("both pass") {
        Stage::Compare
    } else if text.starts_with("Two candidate solutions") && text.contains("both fail") {
        Stage::ReviewPair
    } else {
        panic!("unrecognised prompt: {text}")
    }
}

pub const ADD_PROMPT: &str = "def add(a: int, b: int) -> int:\n    \"\"\"Return the sum of a and b.\n    >>> add(2, 3)\n    5\n    >>> add(0, 0)\n    0\n    \"\"\"\n";
pub const ADD_HIDDEN: &str =
    "def check(candidate):\n    assert candidate(2, 3) == 5\n    assert candidate(-7, 4) == -3, 'negative operands'\n";
pub const HIDDEN_MARKER: &str = "candidate(-7, 4) == -3";

pub const GOOD: &str = "```python\ndef add(a: int, b: int) -> int:\n    return a + b\n```";
pub const BAD: &str = "```python\ndef add(a: int, b: int) -> int:\n    return a - b\n```";
pub const CLEAN: &str = "Both examples hold.\nVERDICT: CLEAN";
pub const BUGS: &str = "1. line 2: returns a - b, should return a + b\nVERDICT: BUGS";

pub fn add_problem() -> Problem {
    Problem::new(
        ProblemSpec::new("Toy/add", ADD_PROMPT, "add"),
        ADD_HIDDEN,
        DatasetKind::Custom,
    )
}

/// Passes visible tests and hidden programs exactly when the code adds.
pub fn adding_sandbox() -> StubSandbox {
    StubSandbox::with_runner(|request| {
        let adds = request.code.contains("return a + b");
        match (request.mode, adds) {
            (_, true) => SandboxResponse::with_status("all_passed"),
            (SandboxMode::RunVisible, false) => failed("add(2, 3)", "5", "-1"),
            (_, false) => SandboxResponse {
                stderr_excerpt: "AssertionError".into(),
                ..SandboxResponse::with_status("failed")
            },
        }
    })
}

type Script = Box<dyn Fn(Stage, &WireRequest) -> Reply + Send + Sync>;

/// A transport whose coder and planner answer per stage.
pub fn scripted(
    coder: impl Fn(Stage, &WireRequest) -> Reply + Send + Sync + 'static,
    planner: impl Fn(Stage, &WireRequest) -> Reply + Send + Sync + 'static,
) -> Arc<ScriptedTransport> {
    let coder: Script = Box::new(coder);
    let planner: Script = Box::new(planner);
    Arc::new(
        ScriptedTransport::new()
            .with_responder(dualcode::testing::CODER_MODEL, move |r| coder(stage_of(r), r))
            .with_responder(dualcode::testing::PLANNER_MODEL, move |r| planner(stage_of(r), r)),
    )
}

pub fn context(transport: Arc<ScriptedTransport>) -> (PipelineContext, Arc<StubSandbox>) {
    let sandbox = Arc::new(adding_sandbox());
    (scripted_context(transport, sandbox.clone()), sandbox)
}
