//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria that need inputs this machine does not have (benchmark dataset
//! files, live model endpoints) print FAIL with the reason and do not fail
//! the target; every criterion that can be evaluated must pass.
//!
//! Optional inputs:
//! - `DUALCODE_HUMANEVAL_PLUS`, `DUALCODE_MBPP_PLUS`: dataset JSONL files.
//! - `DUALCODE_LIVE_CONFIG`: run config pointing at live endpoints and the
//!   production sandbox runner, with a HumanEval+ dataset.
//! - `DUALCODE_EVALPLUS_RESULTS`: EvalPlus results for the samples that the
//!   live run exported.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use dualcode::analysis::{
    category_histogram, diff_runs, read_annotations, score_spec_richness, tag_regressions, FailureCategory,
    RichnessConfig,
};
use dualcode::bench::{
    delta_pp, emit_samples, load_problems, load_run, read_evalplus_results, run_benchmark, scoring_agreement, PassRate,
    Percent,
};
use dualcode::config::RunConfig;
use dualcode::extract::corpus::{bundled_corpus_dir, load_corpus, run_corpus};
use dualcode::gateway::wire::WireRequest;
use dualcode::pipelines::{run, PipelineKind, PipelineTrace};
use dualcode::problem::DatasetKind;
use dualcode::prompts::Stage;
use dualcode::sandbox::{Sandbox, SandboxRequest};
use dualcode::testing::{Reply, ScriptedTransport, StubSandbox};

enum Verdict {
    Pass(String),
    Fail(String),
    NotEvaluated(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

type Responder = fn(Stage, &WireRequest) -> Reply;

struct Scenario {
    label: &'static str,
    kind: PipelineKind,
    coder: Responder,
    planner: Responder,
    expected_calls: u32,
}

fn good(_: Stage, _: &WireRequest) -> Reply {
    Reply::text(GOOD)
}
fn bad(_: Stage, _: &WireRequest) -> Reply {
    Reply::text(BAD)
}
fn clean(_: Stage, _: &WireRequest) -> Reply {
    Reply::text(CLEAN)
}
fn bugs(_: Stage, _: &WireRequest) -> Reply {
    Reply::text(BUGS)
}
fn bad_then_fixed(stage: Stage, _: &WireRequest) -> Reply {
    Reply::text(if stage == Stage::Generate { BAD } else { GOOD })
}
fn planner_analysis(stage: Stage, _: &WireRequest) -> Reply {
    Reply::text(match stage {
        Stage::Plan => "1. Algorithm: add the operands.\n2. Edge cases: negatives.\n3. Complexity: O(1).",
        Stage::Enrich => "1. Examples:\nadd(-1, 1) -> 0",
        _ => CLEAN,
    })
}
fn planner_enrich_bugs(stage: Stage, r: &WireRequest) -> Reply {
    if stage == Stage::Review {
        bugs(stage, r)
    } else {
        planner_analysis(stage, r)
    }
}
fn planner_compare(stage: Stage, _: &WireRequest) -> Reply {
    Reply::text(if stage == Stage::Compare { "SELECTED: B" } else { GOOD })
}
fn planner_pair(stage: Stage, _: &WireRequest) -> Reply {
    Reply::text(match stage {
        Stage::ReviewPair => "## Solution A\n1. line 2: subtracts, should add\nVERDICT: BUGS\n## Solution B\n1. line 2: subtracts, should add\nVERDICT: BUGS",
        _ => BAD,
    })
}
fn coder_synth(stage: Stage, _: &WireRequest) -> Reply {
    Reply::text(if stage == Stage::Synthesize { GOOD } else { BAD })
}

fn scenarios() -> Vec<Scenario> {
    use PipelineKind::*;
    let s = |label, kind, coder, planner, expected_calls| Scenario {
        label,
        kind,
        coder,
        planner,
        expected_calls,
    };
    vec![
        s("raw", Raw, good, clean, 1),
        s("plan-then-code", PlanThenCode, good, planner_analysis, 2),
        s("review-then-fix clean", ReviewThenFix, good, clean, 2),
        s("review-then-fix bugs", ReviewThenFix, bad_then_fixed, bugs, 3),
        s("+retry clean", ReviewThenFixRetry, good, clean, 2),
        s("+retry fixed", ReviewThenFixRetry, bad_then_fixed, bugs, 3),
        s("+retry never passing", ReviewThenFixRetry, bad, bugs, 6),
        s("enriched clean", EnrichedReview, good, planner_analysis, 3),
        s("enriched bugs", EnrichedReview, bad_then_fixed, planner_enrich_bugs, 4),
        s("adversarial one passes", Adversarial, good, bad, 2),
        s("adversarial both pass", Adversarial, good, planner_compare, 3),
        s("adversarial neither", Adversarial, coder_synth, planner_pair, 4),
        s("spec-gated rich", SpecGated, good, clean, 2),
    ]
}

struct ScenarioRun {
    label: &'static str,
    expected: u32,
    trace: PipelineTrace,
    transport: Arc<ScriptedTransport>,
    sandbox: Arc<StubSandbox>,
}

async fn run_scenarios() -> Vec<ScenarioRun> {
    let mut runs = Vec::new();
    for s in scenarios() {
        let (coder, planner) = (s.coder, s.planner);
        let transport = scripted(coder, planner);
        let (ctx, sandbox) = context(transport.clone());
        let trace = run(&ctx, &add_problem().spec, s.kind).await;
        runs.push(ScenarioRun {
            label: s.label,
            expected: s.expected_calls,
            trace,
            transport,
            sandbox,
        });
    }
    runs
}

fn call_budgets(runs: &[ScenarioRun], elapsed: Duration) -> Verdict {
    let mut wrong = Vec::new();
    for r in runs {
        let n = r.trace.llm_call_count;
        let retry_ok = r.trace.pipeline != PipelineKind::ReviewThenFixRetry || (2..=7).contains(&n);
        if n != r.expected || !retry_ok || r.trace.check_invariants().is_err() {
            wrong.push(format!("{} made {n} calls, expected {}", r.label, r.expected));
        }
    }
    let summary: Vec<String> = runs
        .iter()
        .map(|r| format!("{}={}", r.label, r.trace.llm_call_count))
        .collect();
    if !wrong.is_empty() {
        return Verdict::Fail(wrong.join("; "));
    }
    verdict(
        elapsed < Duration::from_secs(5),
        format!("{} in {:.2?}", summary.join(", "), elapsed),
    )
}

fn leakage(runs: &[ScenarioRun]) -> Verdict {
    let problem = add_problem();
    let mut leaks = Vec::new();
    let mut events = 0;
    for r in runs {
        events += r.trace.events.len();
        if let Err(v) = r.trace.audit_leakage(&problem) {
            leaks.push(format!("{}: {v:?}", r.label));
        }
        if r.transport
            .requests()
            .iter()
            .any(|q| q.messages.iter().any(|m| m.content.contains(HIDDEN_MARKER)))
        {
            leaks.push(format!("{}: model request", r.label));
        }
        if r.sandbox
            .requests()
            .iter()
            .any(|q| q.code.contains(HIDDEN_MARKER) || q.program.as_deref().is_some_and(|p| p.contains(HIDDEN_MARKER)))
        {
            leaks.push(format!("{}: sandbox request", r.label));
        }
    }
    verdict(
        leaks.is_empty(),
        if leaks.is_empty() {
            format!("0 hidden-test leaks across {} traces ({events} events)", runs.len())
        } else {
            leaks.join("; ")
        },
    )
}

fn prompt_identity(runs: &[ScenarioRun]) -> Verdict {
    let first_coder = |label: &str| {
        runs.iter().find(|r| r.label == label).and_then(|r| {
            r.transport
                .requests()
                .into_iter()
                .find(|q| q.model == dualcode::testing::CODER_MODEL)
        })
    };
    match (first_coder("raw"), first_coder("review-then-fix clean")) {
        (Some(a), Some(b)) => {
            let same = serde_json::to_vec(&a).unwrap() == serde_json::to_vec(&b).unwrap();
            verdict(
                same,
                format!(
                    "generate request {} bytes, byte-identical: {same}",
                    serde_json::to_vec(&a).unwrap().len()
                ),
            )
        }
        _ => Verdict::Fail("missing generate request".into()),
    }
}

async fn extraction_corpus() -> Verdict {
    let started = Instant::now();
    let cases = match load_corpus(&bundled_corpus_dir()) {
        Ok(cases) => cases,
        Err(e) => return Verdict::Fail(e.to_string()),
    };
    let outcomes = match run_corpus(&reference_sandbox(), &cases).await {
        Ok(o) => o,
        Err(e) => return Verdict::NotEvaluated(format!("reference runner unavailable: {e}")),
    };
    let unsound: Vec<&str> = outcomes.iter().filter(|o| !o.sound).map(|o| o.name.as_str()).collect();
    let exact = outcomes.iter().filter(|o| o.exact).count();
    let elapsed = started.elapsed();
    verdict(
        cases.len() >= 25 && unsound.is_empty() && elapsed < Duration::from_secs(30),
        format!(
            "{} fixtures, {} sound, {exact} exact, {:.1?}{}",
            cases.len(),
            cases.len() - unsound.len(),
            elapsed,
            if unsound.is_empty() {
                String::new()
            } else {
                format!("; unsound: {}", unsound.join(", "))
            }
        ),
    )
}

async fn retry_contract() -> Verdict {
    let spec = add_problem().spec;
    let (ctx, _) = context(scripted(|_, _| Reply::text(BAD), |_, _| Reply::text(CLEAN)));
    let never = run(&ctx, &spec, PipelineKind::ReviewThenFixRetry).await;

    let fixes = Arc::new(AtomicU32::new(0));
    let seen = fixes.clone();
    let transport = scripted(
        move |stage, _| {
            if stage == Stage::RetryFix && seen.fetch_add(1, Ordering::SeqCst) == 1 {
                Reply::text(GOOD)
            } else {
                Reply::text(BAD)
            }
        },
        |_, _| Reply::text(CLEAN),
    );
    let (ctx, _) = context(transport);
    let second = run(&ctx, &spec, PipelineKind::ReviewThenFixRetry).await;
    verdict(
        never.retries_used == 3 && second.retries_used == 2,
        format!(
            "never passing: {} retries; passing on second fix: {} retries",
            never.retries_used, second.retries_used
        ),
    )
}

fn arithmetic() -> Verdict {
    let oracle_percent = |passed: f64, total: f64| format!("{:.1}%", 100.0 * passed / total);
    let pct = |s: &str| s.parse::<Percent>().unwrap();
    let checks = [
        (
            PassRate::new(128, 164).percent().to_string(),
            oracle_percent(128.0, 164.0),
            "78.0%",
        ),
        (
            PassRate::new(148, 164).percent().to_string(),
            oracle_percent(148.0, 164.0),
            "90.2%",
        ),
        (
            delta_pp(pct("87.8"), pct("78.0")).to_string(),
            format!("{:+.1}pp", 87.8 - 78.0),
            "+9.8pp",
        ),
        (
            delta_pp(pct("75.6"), pct("78.0")).to_string(),
            format!("{:+.1}pp", 75.6 - 78.0),
            "-2.4pp",
        ),
        (
            delta_pp(pct("69.8"), pct("67.5")).to_string(),
            format!("{:+.1}pp", 69.8 - 67.5),
            "+2.3pp",
        ),
    ];
    let ok = checks.iter().all(|(got, oracle, paper)| got == oracle && got == paper);
    let shown: Vec<&str> = checks.iter().map(|(got, _, _)| got.as_str()).collect();
    verdict(ok, shown.join(", "))
}

fn fixture(path: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(path)
}

fn diff_accounting() -> Verdict {
    let outcome = (|| -> Result<Verdict, Box<dyn std::error::Error>> {
        let diff = diff_runs(
            &load_run(&fixture("plan_regressions/raw"))?,
            &load_run(&fixture("plan_regressions/plan_then_code"))?,
        )?;
        let manual = read_annotations(std::fs::File::open(fixture("plan_regressions/annotations.csv"))?)?;
        let histogram = category_histogram(&tag_regressions(&diff, &[], &manual));
        let count = |c| histogram.get(&c).copied().unwrap_or(0);
        let parts = [
            count(FailureCategory::MissingImport),
            count(FailureCategory::IdentifierMismatch),
            count(FailureCategory::AlgorithmMismatch),
            count(FailureCategory::OverEngineering),
        ];
        let sum: usize = histogram.values().sum();
        Ok(verdict(
            diff.regressions.len() == 15 && diff.improvements.len() == 14 && parts == [7, 1, 5, 2] && sum == 15,
            format!(
                "{} regressions / {} improvements; categories {}+{}+{}+{} = {sum}",
                diff.regressions.len(),
                diff.improvements.len(),
                parts[0],
                parts[1],
                parts[2],
                parts[3]
            ),
        ))
    })();
    outcome.unwrap_or_else(|e| Verdict::Fail(e.to_string()))
}

fn rich_fraction(path: &Path, kind: DatasetKind) -> Result<(usize, usize), String> {
    let config = RichnessConfig::default();
    let problems = load_problems(path, kind).map_err(|e| e.to_string())?.problems;
    let rich = problems
        .iter()
        .filter(|p| score_spec_richness(&p.spec, &config).is_rich())
        .count();
    Ok((rich, problems.len()))
}

fn richness_separation() -> Verdict {
    let (he_rich, he_n) = rich_fraction(&fixture("richness/humaneval_like.jsonl"), DatasetKind::Custom).unwrap();
    let (mb_rich, mb_n) = rich_fraction(&fixture("richness/mbpp_like.jsonl"), DatasetKind::Custom).unwrap();
    let samples = format!(
        "bundled samples: {he_rich}/{he_n} HumanEval-style rich, {}/{mb_n} MBPP-style lean",
        mb_n - mb_rich
    );
    let (Ok(he), Ok(mbpp)) = (
        std::env::var("DUALCODE_HUMANEVAL_PLUS"),
        std::env::var("DUALCODE_MBPP_PLUS"),
    ) else {
        return Verdict::NotEvaluated(format!(
            "HumanEval+/MBPP+ files not provided (DUALCODE_HUMANEVAL_PLUS, DUALCODE_MBPP_PLUS); {samples}"
        ));
    };
    let started = Instant::now();
    let he = rich_fraction(Path::new(&he), DatasetKind::HumanevalPlus);
    let mbpp = rich_fraction(Path::new(&mbpp), DatasetKind::MbppPlus);
    let elapsed = started.elapsed();
    match (he, mbpp) {
        (Ok((he_rich, he_n)), Ok((mb_rich, mb_n))) => {
            let lean = (mb_n - mb_rich) as f64 / mb_n.max(1) as f64;
            verdict(
                he_n == 164 && he_rich == he_n && lean >= 0.95 && elapsed < Duration::from_secs(10),
                format!(
                    "HumanEval+ {he_rich}/{he_n} rich, MBPP+ {}/{mb_n} lean ({:.1}%), {:.2?}",
                    mb_n - mb_rich,
                    lean * 100.0,
                    elapsed
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => Verdict::Fail(e),
    }
}

async fn sandbox_contract() -> Verdict {
    let sandbox = reference_sandbox();
    let dir = tempfile::tempdir().unwrap();
    let probe = dir.path().join("probe");
    let code = format!("open({:?}, 'w').write('ran')\n", probe.display().to_string());
    let compiled = sandbox
        .execute(&SandboxRequest::compile_only(code, Duration::from_secs(5)))
        .await;
    let limit = Duration::from_secs(1);
    let started = Instant::now();
    let looped = sandbox
        .execute(&SandboxRequest::run_program("while True:\n    pass\n", "pass\n", limit))
        .await;
    let loop_time = started.elapsed();
    let crashed = sandbox
        .execute(&SandboxRequest::run_program(
            "def f():\n    return 1 / 0\n",
            "f()\n",
            Duration::from_secs(5),
        ))
        .await;
    match (compiled, looped, crashed) {
        (Ok(c), Ok(l), Ok(x)) => verdict(
            c.status == "ok"
                && !probe.exists()
                && l.status == "timeout"
                && loop_time < limit * 2
                && x.status == "crashed",
            format!(
                "compile_only probe absent: {}; infinite loop -> {} after {:.2?} (limit {:?}); crash -> {}",
                !probe.exists(),
                l.status,
                loop_time,
                limit,
                x.status
            ),
        ),
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
            Verdict::NotEvaluated(format!("reference runner unavailable: {e}"))
        }
    }
}

async fn live_run() -> Verdict {
    let Ok(config_path) = std::env::var("DUALCODE_LIVE_CONFIG") else {
        return Verdict::NotEvaluated("no live endpoints configured (DUALCODE_LIVE_CONFIG)".into());
    };
    let outcome = async {
        let mut base = RunConfig::load(Path::new(&config_path))?;
        base.apply_env_secrets();
        let problems = load_problems(&base.dataset.path, base.dataset.kind)?.problems;
        let mut results = BTreeMap::new();
        for kind in [PipelineKind::Raw, PipelineKind::ReviewThenFixRetry] {
            let mut config = base.clone();
            config.pipeline.name = kind;
            config.out_dir = base.out_dir.join(kind.as_str());
            let result = run_benchmark(&config.context()?, &problems, &config.bench_options()).await?;
            let samples = config.out_dir.join("samples.jsonl");
            emit_samples(&result, &mut std::fs::File::create(&samples)?)?;
            results.insert(kind, (result, samples));
        }
        let (raw, _) = &results[&PipelineKind::Raw];
        let (rtf, samples) = &results[&PipelineKind::ReviewThenFixRetry];
        let delta = delta_pp(rtf.pass_at_1_percent, raw.pass_at_1_percent);
        let Ok(external) = std::env::var("DUALCODE_EVALPLUS_RESULTS") else {
            return Ok::<_, Box<dyn std::error::Error>>(Verdict::NotEvaluated(format!(
                "runs finished ({} vs {}, {delta}); evaluate {} with EvalPlus and set DUALCODE_EVALPLUS_RESULTS",
                rtf.pass_at_1_percent,
                raw.pass_at_1_percent,
                samples.display()
            )));
        };
        let agreement = scoring_agreement(rtf, &read_evalplus_results(Path::new(&external))?);
        Ok(verdict(
            agreement.is_complete() && delta.tenths() > 0,
            format!(
                "review-then-fix+retry {} vs raw {} ({delta}); agreement {}/{}",
                rtf.pass_at_1_percent, raw.pass_at_1_percent, agreement.agreed, agreement.total
            ),
        ))
    }
    .await;
    outcome.unwrap_or_else(|e| Verdict::Fail(e.to_string()))
}

fn main() {
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    let lines: Vec<(u8, &str, Verdict)> = runtime.block_on(async {
        let started = Instant::now();
        let runs = run_scenarios().await;
        let elapsed = started.elapsed();
        vec![
            (1, "call budgets", call_budgets(&runs, elapsed)),
            (2, "leakage firewall", leakage(&runs)),
            (3, "prompt identity", prompt_identity(&runs)),
            (4, "extraction corpus [secondary]", extraction_corpus().await),
            (5, "retry contract", retry_contract().await),
            (6, "arithmetic reproduction", arithmetic()),
            (7, "diff accounting", diff_accounting()),
            (8, "richness separation", richness_separation()),
            (9, "sandbox contract [secondary]", sandbox_contract().await),
            (10, "live run [optional]", live_run().await),
        ]
    });
    let mut failed = false;
    for (n, name, v) in &lines {
        match v {
            Verdict::Pass(d) => println!("PASS {n:>2} {name}: {d}"),
            Verdict::Fail(d) => {
                failed = true;
                println!("FAIL {n:>2} {name}: {d}");
            }
            Verdict::NotEvaluated(d) => println!("FAIL {n:>2} {name}: not evaluated: {d}"),
        }
    }
    if failed {
        std::process::exit(1);
    }
}
