//! The interaction patterns.
//!
//! Each pipeline turns a [`ProblemSpec`] into a final [`Candidate`] and a
//! [`PipelineTrace`] recording every model call, extraction, visible-test
//! run and decision. Pipelines only ever see the problem spec; hidden tests
//! stay with the benchmark scorer.

mod trace;
mod verdict;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analysis::{score_spec_richness, RichnessConfig};
use crate::extract::{extract, ExtractError, ExtractionResult};
use crate::gateway::{ChatExchange, Gateway, GatewayError, Role, RoleConfig, Usage};
use crate::harness::{self, parse_visible_tests, CompileOutcome, TestReport, VisibleTest};
use crate::problem::ProblemSpec;
use crate::prompts::{PromptBundle, PromptKit};
use crate::sandbox::{Sandbox, SandboxError};

pub use trace::{
    DecisionEvent, ExtractionEvent, ExtractionOutcome, ModelCallEvent, PipelineTrace, TraceEvent, TraceViolation,
    VisibleTestEvent,
};
pub use verdict::{
    parse_review_verdict, parse_selection, split_pair_review, Finding, Pick, ReviewReport, ReviewUnparseable, Verdict,
};

/// Hard cap on eval-retry fix calls.
pub const MAX_RETRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Raw,
    PlanThenCode,
    ReviewThenFix,
    ReviewThenFixRetry,
    Adversarial,
    SpecGated,
    EnrichedReview,
}

impl PipelineKind {
    pub const ALL: [PipelineKind; 7] = [
        PipelineKind::Raw,
        PipelineKind::PlanThenCode,
        PipelineKind::ReviewThenFix,
        PipelineKind::ReviewThenFixRetry,
        PipelineKind::Adversarial,
        PipelineKind::SpecGated,
        PipelineKind::EnrichedReview,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineKind::Raw => "raw",
            PipelineKind::PlanThenCode => "plan_then_code",
            PipelineKind::ReviewThenFix => "review_then_fix",
            PipelineKind::ReviewThenFixRetry => "review_then_fix_retry",
            PipelineKind::Adversarial => "adversarial",
            PipelineKind::SpecGated => "spec_gated",
            PipelineKind::EnrichedReview => "enriched_review",
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown pipeline `{0}` (expected one of: raw, plan_then_code, review_then_fix, review_then_fix_retry, adversarial, spec_gated, enriched_review)")]
pub struct UnknownPipeline(pub String);

impl FromStr for PipelineKind {
    type Err = UnknownPipeline;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().replace('-', "_").to_ascii_lowercase();
        PipelineKind::ALL
            .into_iter()
            .find(|k| k.as_str() == wanted)
            .ok_or_else(|| UnknownPipeline(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStage {
    Initial,
    PostFix,
    PostRetry,
    Synthesized,
}

/// One extracted solution with its provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub code: String,
    pub entry_point: String,
    pub producer: Role,
    pub stage: CandidateStage,
    pub extraction: Option<ExtractionResult>,
}

impl Candidate {
    pub fn new(
        code: impl Into<String>,
        entry_point: impl Into<String>,
        producer: Role,
        stage: CandidateStage,
        extraction: Option<ExtractionResult>,
    ) -> Self {
        Self {
            code: code.into(),
            entry_point: entry_point.into(),
            producer,
            stage,
            extraction,
        }
    }

    /// Whether extraction produced compile-clean code. Hand-built
    /// candidates without an extraction record count as clean.
    pub fn compile_ok(&self) -> bool {
        self.extraction.as_ref().is_none_or(|e| e.compile_ok)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineOptions {
    /// Eval-retry fix calls allowed; clamped to [`MAX_RETRIES`].
    pub max_retries: u32,
    /// Append the import allow-list to every coder prompt.
    pub import_inventory: bool,
    /// Planner thinking for plan, review, enrich and comparison stages.
    pub analysis_thinking: bool,
    /// Spec-gated: also run the eval-retry loop on whichever branch is taken.
    pub gated_retry: bool,
    pub richness: RichnessConfig,
    pub test_timeout_s: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            max_retries: MAX_RETRIES,
            import_inventory: true,
            analysis_thinking: true,
            gated_retry: false,
            richness: RichnessConfig::default(),
            test_timeout_s: harness::DEFAULT_TIMEOUT.as_secs(),
        }
    }
}

impl PipelineOptions {
    pub fn effective_max_retries(&self) -> u32 {
        self.max_retries.min(MAX_RETRIES)
    }
}

/// Everything a pipeline needs besides the problem.
#[derive(Clone)]
pub struct PipelineContext {
    pub gateway: Arc<Gateway>,
    pub sandbox: Arc<dyn Sandbox>,
    pub prompts: PromptKit,
    pub coder: RoleConfig,
    pub planner: RoleConfig,
    pub options: PipelineOptions,
}

/// Why a pipeline stopped before producing its final candidate.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

/// Result of [`eval_retry_loop`] run on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryOutcome {
    pub candidate: Candidate,
    pub retries_used: u32,
    pub events: Vec<TraceEvent>,
    pub llm_call_count: u32,
}

/// Mutable state of one pipeline execution.
struct Run<'a> {
    ctx: &'a PipelineContext,
    spec: &'a ProblemSpec,
    visible: Vec<VisibleTest>,
    events: Vec<TraceEvent>,
    calls: u32,
    retries: u32,
    latest: Option<Candidate>,
    preamble: Option<String>,
}

fn plan_contains_code(plan: &str) -> bool {
    plan.contains("```")
        || plan.lines().any(|l| {
            let t = l.trim_start();
            (t.starts_with("def ") || t.starts_with("async def ")) && t.contains('(') && t.trim_end().ends_with(':')
        })
}

impl<'a> Run<'a> {
    fn new(ctx: &'a PipelineContext, spec: &'a ProblemSpec) -> Self {
        Self {
            ctx,
            spec,
            visible: parse_visible_tests(&spec.prompt),
            events: Vec::new(),
            calls: 0,
            retries: 0,
            latest: None,
            preamble: None,
        }
    }

    fn inventory(&self) -> Option<String> {
        self.ctx
            .options
            .import_inventory
            .then(|| self.ctx.prompts.build_import_inventory(self.spec))
    }

    fn config(&self, role: Role, analysis: bool) -> RoleConfig {
        match role {
            Role::Coder => self.ctx.coder.clone(),
            Role::Planner => self
                .ctx
                .planner
                .with_thinking(analysis && self.ctx.options.analysis_thinking),
        }
    }

    fn decide(&mut self, name: &str, detail: serde_json::Value) {
        self.events.push(TraceEvent::Decision(DecisionEvent {
            name: name.to_string(),
            detail,
        }));
    }

    /// Records a finished (or empty) model call and returns its text.
    fn record_call(
        &mut self,
        role: Role,
        bundle: &PromptBundle,
        result: Result<ChatExchange, GatewayError>,
    ) -> Result<String, PipelineError> {
        let exchange = match result {
            Ok(exchange) => exchange,
            Err(GatewayError::EmptyResponse { endpoint }) => {
                self.decide(
                    "empty_response",
                    json!({ "role": role, "stage": bundle.stage, "endpoint": endpoint }),
                );
                ChatExchange {
                    messages: bundle.messages.clone(),
                    raw_response: String::new(),
                    response_text: String::new(),
                    usage: Usage::default(),
                    latency_ms: 0,
                    cache_hit: false,
                    attempts: 1,
                    thinking_unclosed: false,
                }
            }
            Err(e) => {
                self.decide(
                    "endpoint_error",
                    json!({ "role": role, "stage": bundle.stage, "error": e.to_string() }),
                );
                return Err(e.into());
            }
        };
        if exchange.thinking_unclosed {
            self.decide("thinking_unclosed", json!({ "role": role, "stage": bundle.stage }));
        }
        let text = exchange.response_text.clone();
        self.calls += 1;
        self.events.push(TraceEvent::ModelCall(ModelCallEvent {
            role,
            stage: bundle.stage,
            exchange,
        }));
        Ok(text)
    }

    async fn call(&mut self, role: Role, bundle: PromptBundle) -> Result<String, PipelineError> {
        let config = self.config(role, bundle.stage.is_analysis());
        let result = self.ctx.gateway.chat_complete(&config, &bundle.messages).await;
        self.record_call(role, &bundle, result)
    }

    async fn extract(&mut self, raw: &str, producer: Role, stage: CandidateStage) -> Result<Candidate, PipelineError> {
        let (outcome, result) = match extract(self.ctx.sandbox.as_ref(), raw, &self.spec.entry_point).await {
            Ok(result) => (ExtractionOutcome::Ok, result),
            Err(ExtractError::Sandbox(e)) => return Err(e.into()),
            Err(e @ ExtractError::CompileFailed(_)) => (ExtractionOutcome::CompileFailed, e.best_effort()),
            Err(e @ ExtractError::NoCodeFound { .. }) => (ExtractionOutcome::NoCodeFound, e.best_effort()),
        };
        self.events.push(TraceEvent::Extraction(ExtractionEvent {
            producer,
            outcome,
            result: result.clone(),
        }));
        let candidate = Candidate::new(
            result.code.clone(),
            self.spec.entry_point.clone(),
            producer,
            stage,
            Some(result),
        );
        self.latest = Some(candidate.clone());
        Ok(candidate)
    }

    /// Prompt text to put in front of candidates, when the prompt compiles.
    async fn preamble(&mut self) -> Result<String, PipelineError> {
        if let Some(p) = &self.preamble {
            return Ok(p.clone());
        }
        let prompt = self.spec.prompt.trim_end();
        let preamble = match harness::compile_check(self.ctx.sandbox.as_ref(), prompt).await? {
            CompileOutcome::Ok if !prompt.is_empty() => prompt.to_string(),
            _ => String::new(),
        };
        self.preamble = Some(preamble.clone());
        Ok(preamble)
    }

    async fn program(&mut self, code: &str) -> Result<String, PipelineError> {
        Ok(assemble_solution(&self.preamble().await?, code))
    }

    async fn visible_tests(&mut self, candidate: &Candidate) -> Result<TestReport, PipelineError> {
        let program = self.program(&candidate.code).await?;
        let timeout = Duration::from_secs(self.ctx.options.test_timeout_s.max(1));
        let report = harness::run_visible_tests(self.ctx.sandbox.as_ref(), &program, &self.visible, timeout).await?;
        let subject = format!("{}/{}", candidate.producer, stage_name(candidate.stage));
        self.events.push(TraceEvent::VisibleTest(VisibleTestEvent::new(
            subject,
            &self.visible,
            &report,
        )));
        Ok(report)
    }

    async fn generate(&mut self) -> Result<Candidate, PipelineError> {
        let inventory = self.inventory();
        let bundle = self.ctx.prompts.render_generate(self.spec, inventory.as_deref());
        let text = self.call(Role::Coder, bundle).await?;
        self.extract(&text, Role::Coder, CandidateStage::Initial).await
    }

    /// Reviews `candidate` and applies one fix pass when bugs are reported.
    async fn review_and_fix(
        &mut self,
        candidate: Candidate,
        enrichment: Option<&str>,
    ) -> Result<Candidate, PipelineError> {
        let bundle = self.ctx.prompts.render_review(self.spec, &candidate, enrichment);
        let review_text = self.call(Role::Planner, bundle).await?;
        let review = match parse_review_verdict(&review_text) {
            Ok(review) => review,
            Err(ReviewUnparseable) => {
                self.decide("review_unparseable", json!({ "treated_as": "clean" }));
                return Ok(candidate);
            }
        };
        self.decide(
            "review_verdict",
            json!({ "verdict": review.verdict, "findings": review.findings.len() }),
        );
        if review.verdict == Verdict::Clean {
            return Ok(candidate);
        }
        let inventory = self.inventory();
        let bundle = self
            .ctx
            .prompts
            .render_fix(self.spec, &candidate, &review, inventory.as_deref());
        let text = self.call(Role::Coder, bundle).await?;
        self.extract(&text, Role::Coder, CandidateStage::PostFix).await
    }

    async fn retry_loop(&mut self, mut candidate: Candidate) -> Result<Candidate, PipelineError> {
        let max = self.ctx.options.effective_max_retries();
        loop {
            let report = self.visible_tests(&candidate).await?;
            if report.is_pass() {
                if report.vacuous {
                    self.decide("vacuous_pass", json!({ "reason": "prompt has no visible examples" }));
                }
                return Ok(candidate);
            }
            if self.retries >= max {
                self.decide("retries_exhausted", json!({ "retries_used": self.retries }));
                return Ok(candidate);
            }
            self.retries += 1;
            let inventory = self.inventory();
            let bundle = self
                .ctx
                .prompts
                .render_retry_fix(self.spec, &candidate, &report, inventory.as_deref());
            let text = self.call(Role::Coder, bundle).await?;
            candidate = self.extract(&text, Role::Coder, CandidateStage::PostRetry).await?;
        }
    }

    async fn raw(&mut self) -> Result<Candidate, PipelineError> {
        self.generate().await
    }

    async fn plan_then_code(&mut self) -> Result<Candidate, PipelineError> {
        let bundle = self.ctx.prompts.render_plan(self.spec);
        let plan = self.call(Role::Planner, bundle).await?;
        if plan_contains_code(&plan) {
            self.decide("plan_contains_code", json!({ "action": "passed_through_verbatim" }));
        }
        let inventory = self.inventory();
        let bundle = self
            .ctx
            .prompts
            .render_code_with_plan(self.spec, &plan, inventory.as_deref());
        let text = self.call(Role::Coder, bundle).await?;
        self.extract(&text, Role::Coder, CandidateStage::Initial).await
    }

    async fn review_then_fix(&mut self, retry: bool) -> Result<Candidate, PipelineError> {
        let candidate = self.generate().await?;
        let candidate = self.review_and_fix(candidate, None).await?;
        if retry {
            self.retry_loop(candidate).await
        } else {
            Ok(candidate)
        }
    }

    async fn enriched_review(&mut self) -> Result<Candidate, PipelineError> {
        let candidate = self.generate().await?;
        let bundle = self.ctx.prompts.render_enrich(self.spec);
        let enrichment = self.call(Role::Planner, bundle).await?;
        let enrichment = (!enrichment.trim().is_empty()).then_some(enrichment);
        self.review_and_fix(candidate, enrichment.as_deref()).await
    }

    async fn spec_gated(&mut self) -> Result<Candidate, PipelineError> {
        let config = &self.ctx.options.richness;
        let score = score_spec_richness(self.spec, config);
        let retry = self.ctx.options.gated_retry;
        self.decide(
            "spec_gate",
            json!({
                "score": score.score,
                "threshold": config.threshold,
                "label": score.label,
                "path": if score.is_rich() { "review" } else { "raw" },
            }),
        );
        if score.is_rich() {
            self.review_then_fix(retry).await
        } else {
            let candidate = self.raw().await?;
            if retry {
                self.retry_loop(candidate).await
            } else {
                Ok(candidate)
            }
        }
    }

    async fn adversarial(&mut self) -> Result<Candidate, PipelineError> {
        let inventory = self.inventory();
        let bundle = self.ctx.prompts.render_generate(self.spec, inventory.as_deref());
        let coder_cfg = self.config(Role::Coder, false);
        let planner_cfg = self.config(Role::Planner, false);
        let gateway = &self.ctx.gateway;
        let (coder_result, planner_result) = tokio::join!(
            gateway.chat_complete(&coder_cfg, &bundle.messages),
            gateway.chat_complete(&planner_cfg, &bundle.messages),
        );
        let coder_text = self.record_call(Role::Coder, &bundle, coder_result)?;
        let planner_text = self.record_call(Role::Planner, &bundle, planner_result)?;
        let a = self.extract(&coder_text, Role::Coder, CandidateStage::Initial).await?;
        let b = self
            .extract(&planner_text, Role::Planner, CandidateStage::Initial)
            .await?;
        let report_a = self.visible_tests(&a).await?;
        let report_b = self.visible_tests(&b).await?;

        match (report_a.is_pass(), report_b.is_pass()) {
            (true, false) | (false, true) => {
                let pick = if report_a.is_pass() { Pick::A } else { Pick::B };
                self.decide(
                    "adversarial_branch",
                    json!({ "branch": "exactly_one_passes", "selected": pick }),
                );
                Ok(self.chosen(pick, a, b))
            }
            (true, true) => {
                self.decide("adversarial_branch", json!({ "branch": "both_pass" }));
                let bundle = self.ctx.prompts.render_compare(self.spec, &a, &b);
                let text = self.call(Role::Planner, bundle).await?;
                let pick = match parse_selection(&text) {
                    Some(pick) => pick,
                    None => {
                        self.decide("selection_unparseable", json!({ "fallback": Pick::A }));
                        Pick::A
                    }
                };
                self.decide("adversarial_selection", json!({ "selected": pick }));
                Ok(self.chosen(pick, a, b))
            }
            (false, false) => {
                self.decide("adversarial_branch", json!({ "branch": "neither_passes" }));
                let bundle = self
                    .ctx
                    .prompts
                    .render_review_pair(self.spec, (&a, &report_a), (&b, &report_b));
                let text = self.call(Role::Planner, bundle).await?;
                let (section_a, section_b) = split_pair_review(&text);
                let review_a = lenient_review(&section_a);
                let review_b = lenient_review(&section_b);
                let bundle = self.ctx.prompts.render_synthesize(
                    self.spec,
                    &a,
                    &b,
                    &review_a,
                    &review_b,
                    (&report_a, &report_b),
                    inventory.as_deref(),
                );
                let text = self.call(Role::Coder, bundle).await?;
                self.extract(&text, Role::Coder, CandidateStage::Synthesized).await
            }
        }
    }

    fn chosen(&mut self, pick: Pick, a: Candidate, b: Candidate) -> Candidate {
        let chosen = match pick {
            Pick::A => a,
            Pick::B => b,
        };
        self.latest = Some(chosen.clone());
        chosen
    }

    async fn finish(mut self, kind: PipelineKind, outcome: Result<Candidate, PipelineError>) -> PipelineTrace {
        let (final_candidate, error) = match outcome {
            Ok(candidate) => (candidate, None),
            Err(e) => {
                let fallback = self.latest.clone().unwrap_or_else(|| {
                    Candidate::new(
                        "",
                        self.spec.entry_point.clone(),
                        Role::Coder,
                        CandidateStage::Initial,
                        None,
                    )
                });
                (fallback, Some(e.to_string()))
            }
        };
        let solution = match self.program(&final_candidate.code).await {
            Ok(program) => program,
            Err(_) => final_candidate.code.clone(),
        };
        PipelineTrace {
            problem_id: self.spec.task_id.clone(),
            pipeline: kind,
            template_version: self.ctx.prompts.template_version().to_string(),
            events: self.events,
            llm_call_count: self.calls,
            final_candidate,
            solution,
            retries_used: self.retries,
            error,
        }
    }
}

fn stage_name(stage: CandidateStage) -> &'static str {
    match stage {
        CandidateStage::Initial => "initial",
        CandidateStage::PostFix => "post_fix",
        CandidateStage::PostRetry => "post_retry",
        CandidateStage::Synthesized => "synthesized",
    }
}

/// A pair-review section that lacks a verdict still carries useful text.
fn lenient_review(section: &str) -> ReviewReport {
    parse_review_verdict(section).unwrap_or_else(|_| ReviewReport {
        verdict: Verdict::Bugs,
        findings: Vec::new(),
        raw_text: section.to_string(),
    })
}

/// The program that gets executed: preamble first, then the candidate, so
/// that imports and helpers defined in the prompt stay available.
pub fn assemble_solution(preamble: &str, code: &str) -> String {
    let preamble = preamble.trim_end();
    let code = code.trim_end();
    match (preamble.is_empty(), code.is_empty()) {
        (true, _) => format!("{code}\n"),
        (false, true) => format!("{preamble}\n"),
        (false, false) => format!("{preamble}\n\n\n{code}\n"),
    }
}

/// Runs `kind` on one problem. Endpoint and sandbox failures end the run
/// early and are reported in [`PipelineTrace::error`].
pub async fn run(ctx: &PipelineContext, spec: &ProblemSpec, kind: PipelineKind) -> PipelineTrace {
    let mut run = Run::new(ctx, spec);
    let outcome = match kind {
        PipelineKind::Raw => run.raw().await,
        PipelineKind::PlanThenCode => run.plan_then_code().await,
        PipelineKind::ReviewThenFix => run.review_then_fix(false).await,
        PipelineKind::ReviewThenFixRetry => run.review_then_fix(true).await,
        PipelineKind::Adversarial => run.adversarial().await,
        PipelineKind::SpecGated => run.spec_gated().await,
        PipelineKind::EnrichedReview => run.enriched_review().await,
    };
    run.finish(kind, outcome).await
}

pub async fn run_raw(ctx: &PipelineContext, spec: &ProblemSpec) -> PipelineTrace {
    run(ctx, spec, PipelineKind::Raw).await
}

pub async fn run_plan_then_code(ctx: &PipelineContext, spec: &ProblemSpec) -> PipelineTrace {
    run(ctx, spec, PipelineKind::PlanThenCode).await
}

pub async fn run_review_then_fix(ctx: &PipelineContext, spec: &ProblemSpec, retry_enabled: bool) -> PipelineTrace {
    let kind = if retry_enabled {
        PipelineKind::ReviewThenFixRetry
    } else {
        PipelineKind::ReviewThenFix
    };
    run(ctx, spec, kind).await
}

pub async fn run_adversarial(ctx: &PipelineContext, spec: &ProblemSpec) -> PipelineTrace {
    run(ctx, spec, PipelineKind::Adversarial).await
}

pub async fn run_spec_gated(ctx: &PipelineContext, spec: &ProblemSpec) -> PipelineTrace {
    run(ctx, spec, PipelineKind::SpecGated).await
}

pub async fn run_enriched_review(ctx: &PipelineContext, spec: &ProblemSpec) -> PipelineTrace {
    run(ctx, spec, PipelineKind::EnrichedReview).await
}

/// Runs the visible-test repair loop on an existing candidate.
pub async fn eval_retry_loop(
    ctx: &PipelineContext,
    spec: &ProblemSpec,
    candidate: Candidate,
    max_retries: u32,
) -> Result<RetryOutcome, PipelineError> {
    let mut options = ctx.options.clone();
    options.max_retries = max_retries;
    let ctx = PipelineContext { options, ..ctx.clone() };
    let mut run = Run::new(&ctx, spec);
    let candidate = run.retry_loop(candidate).await?;
    Ok(RetryOutcome {
        candidate,
        retries_used: run.retries,
        events: run.events,
        llm_call_count: run.calls,
    })
}
