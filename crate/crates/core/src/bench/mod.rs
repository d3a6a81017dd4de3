//! Benchmark execution: loading datasets, running a pipeline over every
//! problem, scoring final solutions against hidden tests, and persisting
//! everything in a resumable run directory.
//!
//! Run directory layout:
//!
//! ```text
//! <run>/config.json        configuration snapshot (no secrets)
//! <run>/traces/<id>.json   one PipelineTrace per problem, written before scoring
//! <run>/results/<id>.json  one ProblemOutcome per scored problem
//! <run>/summary.json       the RunResult
//! ```

mod metrics;

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::harness::{run_hidden_tests, TestReport, TestStatus};
use crate::pipelines::{self, PipelineContext, PipelineKind, PipelineTrace};
use crate::problem::{DatasetKind, Problem};

pub use metrics::{compute_pass_at_1, delta_pp, BadPercent, PassRate, Percent, Pp};

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A dataset whose size differs from the published benchmark.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMismatch {
    pub dataset: DatasetKind,
    pub expected: usize,
    pub found: usize,
}

impl std::fmt::Display for CountMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} is expected to have {} problems, found {}",
            self.dataset.as_str(),
            self.expected,
            self.found
        )
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub problems: Vec<Problem>,
    pub warning: Option<CountMismatch>,
}

/// Reads a JSONL dataset (`task_id`, `prompt`, `entry_point`, `test`).
pub fn load_problems(path: &Path, kind: DatasetKind) -> Result<LoadedDataset, BenchError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut problems = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let number = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut problem: Problem = serde_json::from_str(&line).map_err(|e| BenchError::Parse {
            path: path.to_path_buf(),
            line: number,
            message: e.to_string(),
        })?;
        if problem.spec.entry_point.trim().is_empty() {
            return Err(BenchError::Parse {
                path: path.to_path_buf(),
                line: number,
                message: "empty entry_point".into(),
            });
        }
        if !seen.insert(problem.task_id().to_string()) {
            return Err(BenchError::Config(format!(
                "duplicate task_id `{}` at {}:{number}",
                problem.task_id(),
                path.display()
            )));
        }
        problem.source_dataset = kind;
        problems.push(problem);
    }
    let warning = kind
        .expected_count()
        .filter(|&expected| expected != problems.len())
        .map(|expected| CountMismatch {
            dataset: kind,
            expected,
            found: problems.len(),
        });
    if let Some(w) = &warning {
        tracing::warn!("{w}");
    }
    Ok(LoadedDataset { problems, warning })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemOutcome {
    /// Trace path relative to the run directory.
    pub trace_ref: String,
    pub hidden_status: TestStatus,
    pub passed: bool,
    pub llm_call_count: u32,
    pub retries_used: u32,
    /// Exactly what was scored, as exported for external evaluation.
    pub solution: String,
    /// Error text from the hidden run, used for failure classification.
    pub failure_evidence: String,
    /// Set when the pipeline ended early on an endpoint or sandbox failure.
    pub pipeline_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_digest: String,
    pub pipeline: PipelineKind,
    pub dataset: DatasetKind,
    pub per_problem: BTreeMap<String, ProblemOutcome>,
    pub passed: usize,
    pub total: usize,
    pub pass_at_1: f64,
    pub pass_at_1_percent: Percent,
    pub started: DateTime<Utc>,
    pub finished: DateTime<Utc>,
}

impl RunResult {
    pub fn pass_rate(&self) -> PassRate {
        PassRate::new(self.passed, self.total)
    }

    /// Equality ignoring timestamps.
    pub fn same_outcomes(&self, other: &RunResult) -> bool {
        self.config_digest == other.config_digest
            && self.pipeline == other.pipeline
            && self.dataset == other.dataset
            && self.per_problem == other.per_problem
    }

    fn from_outcomes(meta: &RunMeta, per_problem: BTreeMap<String, ProblemOutcome>, started: DateTime<Utc>) -> Self {
        let rate = compute_pass_at_1(per_problem.values().map(|o| o.passed));
        RunResult {
            config_digest: meta.config_digest.clone(),
            pipeline: meta.pipeline,
            dataset: meta.dataset,
            per_problem,
            passed: rate.passed,
            total: rate.total,
            pass_at_1: rate.fraction(),
            pass_at_1_percent: rate.percent(),
            started,
            finished: Utc::now(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunMeta {
    pub config_digest: String,
    pub pipeline: PipelineKind,
    pub dataset: DatasetKind,
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub run_dir: PathBuf,
    pub parallelism: usize,
    /// Written to `config.json` when the directory is new.
    pub config_snapshot: serde_json::Value,
    pub meta: RunMeta,
    pub scoring_timeout: Duration,
}

/// File-name-safe form of a task id; reversible and collision-free.
pub fn task_file_name(task_id: &str) -> String {
    let mut out = String::with_capacity(task_id.len());
    for b in task_id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'-' || b == b'.' {
            out.push(b as char);
        } else {
            out.push_str(&format!("_{b:02X}"));
        }
    }
    out.push_str(".json");
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BenchError> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BenchError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("run data serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| BenchError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn read_if_present<T: DeserializeOwned>(path: &Path) -> Option<T> {
    let text = fs::read_to_string(path).ok()?;
    match serde_json::from_str(&text) {
        Ok(value) => Some(value),
        Err(e) => {
            tracing::warn!(path = %path.display(), error = %e, "ignoring unreadable run file");
            None
        }
    }
}

fn check_unique(problems: &[Problem]) -> Result<(), BenchError> {
    let mut seen = HashSet::new();
    for p in problems {
        if !seen.insert(p.task_id()) {
            return Err(BenchError::Config(format!("duplicate task_id `{}`", p.task_id())));
        }
    }
    Ok(())
}

fn prepare_dir(options: &BenchOptions) -> Result<(), BenchError> {
    let dir = &options.run_dir;
    for sub in ["traces", "results"] {
        let path = dir.join(sub);
        fs::create_dir_all(&path).map_err(io_err(&path))?;
    }
    let config_path = dir.join("config.json");
    match read_if_present::<serde_json::Value>(&config_path) {
        Some(existing) if existing != options.config_snapshot => Err(BenchError::Config(format!(
            "{} holds a different configuration; use a fresh output directory",
            config_path.display()
        ))),
        Some(_) => Ok(()),
        None => write_json(&config_path, &options.config_snapshot),
    }
}

/// Scores one trace's solution against the problem's hidden tests.
pub async fn score_trace(
    ctx: &PipelineContext,
    problem: &Problem,
    trace: &PipelineTrace,
    trace_ref: String,
    timeout: Duration,
) -> ProblemOutcome {
    let report = match run_hidden_tests(
        ctx.sandbox.as_ref(),
        &trace.solution,
        &problem.scoring_program(),
        timeout,
    )
    .await
    {
        Ok(report) => report,
        Err(e) => TestReport {
            status: TestStatus::Crashed,
            stderr_excerpt: format!("sandbox failure: {e}"),
            ..TestReport::passed(0)
        },
    };
    let mut evidence: Vec<String> = report
        .failures
        .iter()
        .map(|f| format!("{}: expected {}, got {}", f.test, f.expected, f.actual_or_error))
        .collect();
    if !report.stderr_excerpt.trim().is_empty() {
        evidence.push(report.stderr_excerpt.trim().to_string());
    }
    ProblemOutcome {
        trace_ref,
        hidden_status: report.status,
        passed: report.is_pass(),
        llm_call_count: trace.llm_call_count,
        retries_used: trace.retries_used,
        solution: trace.solution.clone(),
        failure_evidence: evidence.join("\n"),
        pipeline_error: trace.error.clone(),
    }
}

async fn solve_one(
    ctx: &PipelineContext,
    options: &BenchOptions,
    problem: &Problem,
) -> Result<ProblemOutcome, BenchError> {
    let file = task_file_name(problem.task_id());
    let result_path = options.run_dir.join("results").join(&file);
    if let Some(done) = read_if_present::<ProblemOutcome>(&result_path) {
        tracing::debug!(task_id = problem.task_id(), "already scored, skipping");
        return Ok(done);
    }
    let trace_ref = format!("traces/{file}");
    let trace_path = options.run_dir.join(&trace_ref);
    let trace = match read_if_present::<PipelineTrace>(&trace_path) {
        Some(trace) if trace.pipeline == options.meta.pipeline => trace,
        _ => {
            let trace = pipelines::run(ctx, &problem.spec, options.meta.pipeline).await;
            write_json(&trace_path, &trace)?;
            trace
        }
    };
    let outcome = score_trace(ctx, problem, &trace, trace_ref, options.scoring_timeout).await;
    write_json(&result_path, &outcome)?;
    tracing::info!(
        task_id = problem.task_id(),
        passed = outcome.passed,
        calls = outcome.llm_call_count,
        "problem finished"
    );
    Ok(outcome)
}

/// Runs the configured pipeline over `problems`, skipping problems that
/// already have a result in the run directory.
pub async fn run_benchmark(
    ctx: &PipelineContext,
    problems: &[Problem],
    options: &BenchOptions,
) -> Result<RunResult, BenchError> {
    check_unique(problems)?;
    prepare_dir(options)?;
    let started = Utc::now();
    let outcomes: Vec<(String, Result<ProblemOutcome, BenchError>)> = stream::iter(problems)
        .map(|p| async move { (p.task_id().to_string(), solve_one(ctx, options, p).await) })
        .buffer_unordered(options.parallelism.max(1))
        .collect()
        .await;
    let mut per_problem = BTreeMap::new();
    for (task_id, outcome) in outcomes {
        per_problem.insert(task_id, outcome?);
    }
    let result = RunResult::from_outcomes(&options.meta, per_problem, started);
    write_json(&options.run_dir.join("summary.json"), &result)?;
    Ok(result)
}

/// Re-scores every persisted trace in `run_dir` without calling any model.
pub async fn score_run(
    ctx: &PipelineContext,
    problems: &[Problem],
    run_dir: &Path,
    meta: &RunMeta,
    timeout: Duration,
) -> Result<RunResult, BenchError> {
    check_unique(problems)?;
    let started = Utc::now();
    let mut per_problem = BTreeMap::new();
    for problem in problems {
        let file = task_file_name(problem.task_id());
        let trace_ref = format!("traces/{file}");
        let trace_path = run_dir.join(&trace_ref);
        if !trace_path.exists() {
            return Err(BenchError::Config(format!(
                "no trace for `{}` in {}; finish the run first",
                problem.task_id(),
                run_dir.display()
            )));
        }
        let trace: PipelineTrace = read_json(&trace_path)?;
        let outcome = score_trace(ctx, problem, &trace, trace_ref, timeout).await;
        write_json(&run_dir.join("results").join(&file), &outcome)?;
        per_problem.insert(problem.task_id().to_string(), outcome);
    }
    let result = RunResult::from_outcomes(meta, per_problem, started);
    write_json(&run_dir.join("summary.json"), &result)?;
    Ok(result)
}

pub fn load_run(run_dir: &Path) -> Result<RunResult, BenchError> {
    read_json(&run_dir.join("summary.json"))
}

pub fn load_trace(run_dir: &Path, outcome: &ProblemOutcome) -> Result<PipelineTrace, BenchError> {
    read_json(&run_dir.join(&outcome.trace_ref))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub task_id: String,
    pub solution: String,
}

/// Writes `{task_id, solution}` JSONL for an external evaluator.
pub fn emit_samples(run: &RunResult, out: &mut impl Write) -> io::Result<usize> {
    for (task_id, outcome) in &run.per_problem {
        let sample = Sample {
            task_id: task_id.clone(),
            solution: outcome.solution.clone(),
        };
        serde_json::to_writer(&mut *out, &sample)?;
        out.write_all(b"\n")?;
    }
    Ok(run.per_problem.len())
}

pub fn read_samples(input: impl BufRead) -> io::Result<Vec<Sample>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| l.and_then(|l| serde_json::from_str(&l).map_err(io::Error::other)))
        .collect()
}

#[derive(Debug, Deserialize)]
struct EvalPlusEntry {
    base_status: String,
    plus_status: String,
}

#[derive(Debug, Deserialize)]
struct EvalPlusResults {
    eval: BTreeMap<String, Vec<EvalPlusEntry>>,
}

/// Per-task verdicts from an EvalPlus `*_eval_results.json`. A task passes
/// when every sample passes both its base and plus tests.
pub fn read_evalplus_results(path: &Path) -> Result<BTreeMap<String, bool>, BenchError> {
    let results: EvalPlusResults = read_json(path)?;
    Ok(results
        .eval
        .into_iter()
        .map(|(task_id, entries)| {
            let passed = !entries.is_empty()
                && entries
                    .iter()
                    .all(|e| e.base_status == "pass" && e.plus_status == "pass");
            (task_id, passed)
        })
        .collect())
}

/// How internal scoring compares with an external evaluator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agreement {
    pub agreed: usize,
    pub total: usize,
    /// Tasks scored differently, or missing from the external results.
    pub disagreements: Vec<String>,
}

impl Agreement {
    pub fn is_complete(&self) -> bool {
        self.total > 0 && self.agreed == self.total
    }
}

pub fn scoring_agreement(run: &RunResult, external: &BTreeMap<String, bool>) -> Agreement {
    let mut disagreements = Vec::new();
    for (task_id, outcome) in &run.per_problem {
        if external.get(task_id) != Some(&outcome.passed) {
            disagreements.push(task_id.clone());
        }
    }
    let total = run.per_problem.len();
    Agreement {
        agreed: total - disagreements.len(),
        total,
        disagreements,
    }
}
