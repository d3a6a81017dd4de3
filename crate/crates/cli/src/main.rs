//! `dualcode` command line: run pipelines over a benchmark, re-score runs,
//! compare runs, and export results.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use url::Url;

use dualcode::analysis::{
    auto_classify_failure, diff_runs, emit_report, read_annotations, score_spec_richness, tag_regressions,
    undefined_name, FailureCategory, FailureTag, Report, ReportFormat, ReportRow, TagSource,
};
use dualcode::bench::{
    delta_pp, emit_samples, load_problems, load_run, load_trace, read_evalplus_results, run_benchmark, score_run,
    scoring_agreement, RunResult,
};
use dualcode::config::RunConfig;
use dualcode::extract::corpus::{bundled_corpus_dir, load_corpus, run_corpus};
use dualcode::pipelines::PipelineKind;
use dualcode::problem::{DatasetKind, ProblemSpec};
use dualcode::sandbox::ProcessSandbox;

#[derive(Debug, Parser)]
#[command(
    name = "dualcode",
    version,
    about = "Dual-model code generation pipelines and pass@1 benchmarking"
)]
struct Cli {
    /// Run configuration (TOML, or JSON by extension).
    #[arg(long, global = true, env = "DUALCODE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a pipeline over a dataset and score it.
    Run(Box<RunArgs>),
    /// Re-score the persisted traces of a run without calling any model.
    Score(ScoreArgs),
    /// Regressions and improvements between two runs.
    Diff(DiffArgs),
    /// Specification richness of every prompt in a dataset.
    Richness(RichnessArgs),
    /// Write `{task_id, solution}` JSONL for an external evaluator.
    ExportSamples(ExportArgs),
    /// Pass-rate table across runs.
    Report(ReportArgs),
    /// Run the extraction corpus against a sandbox runner.
    CorpusTest(CorpusArgs),
}

#[derive(Debug, Args)]
struct Overrides {
    /// Dataset JSONL file.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// humaneval_plus, mbpp_plus or custom.
    #[arg(long)]
    dataset_kind: Option<DatasetKind>,
    /// Sandbox runner command line.
    #[arg(long)]
    sandbox: Option<String>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Overrides,
    #[arg(long)]
    pipeline: Option<PipelineKind>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    coder_url: Option<Url>,
    #[arg(long)]
    coder_model: Option<String>,
    #[arg(long)]
    planner_url: Option<Url>,
    #[arg(long)]
    planner_model: Option<String>,
    /// Add the eval-retry loop: review_then_fix becomes review_then_fix_retry,
    /// spec_gated retries on whichever branch it takes.
    #[arg(long)]
    retry: bool,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Spec-gated richness threshold.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
    #[command(flatten)]
    common: Overrides,
    /// EvalPlus `*_eval_results.json` to compare against.
    #[arg(long)]
    external: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiffArgs {
    /// Baseline run directory.
    #[arg(long)]
    baseline: PathBuf,
    /// Candidate run directory.
    #[arg(long)]
    candidate: PathBuf,
    /// `task_id,category,note` CSV of manual regression tags.
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Dataset the runs used; enables signature checks when tagging.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RichnessArgs {
    /// Dataset JSONL file.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "custom")]
    kind: DatasetKind,
    /// Per-problem `task_id,score,label` CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rich/lean threshold; the configured one when absent.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directories; the first is the baseline unless --baseline is given.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Corpus directory; the bundled corpus when absent.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Sandbox runner command line.
    #[arg(long)]
    sandbox: Option<String>,
}

/// Failures sorted by exit code.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

type Outcome = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(usage),
        None => Ok(RunConfig::default()),
    }
}

fn apply_common(config: &mut RunConfig, o: &Overrides) {
    if let Some(d) = &o.dataset {
        config.dataset.path = d.clone();
    }
    if let Some(k) = o.dataset_kind {
        config.dataset.kind = k;
    }
    if let Some(s) = &o.sandbox {
        config.sandbox.command = s.clone();
    }
}

fn write_output(out: Option<&Path>, text: &str) -> io::Result<()> {
    match out {
        Some(path) => fs::write(path, text),
        None => io::stdout().write_all(text.as_bytes()),
    }
}

fn summary_line(run: &RunResult) -> String {
    format!(
        "{} on {}: {}/{} passed ({})",
        run.pipeline,
        run.dataset.as_str(),
        run.passed,
        run.total,
        run.pass_at_1_percent
    )
}

async fn cmd_run(config_path: Option<&Path>, args: RunArgs) -> Outcome {
    let mut config = load_config(config_path)?;
    apply_common(&mut config, &args.common);
    if let Some(p) = args.pipeline {
        config.pipeline.name = p;
    }
    if let Some(o) = args.out {
        config.out_dir = o;
    }
    if let Some(n) = args.parallelism {
        config.parallelism = n;
    }
    if let Some(c) = args.cache_dir {
        config.cache_dir = Some(c);
    }
    if let Some(u) = args.coder_url {
        config.coder.base_url = u;
    }
    if let Some(m) = args.coder_model {
        config.coder.model_name = m;
    }
    if let Some(u) = args.planner_url {
        config.planner.base_url = u;
    }
    if let Some(m) = args.planner_model {
        config.planner.model_name = m;
    }
    if let Some(r) = args.max_retries {
        config.pipeline.options.max_retries = r;
    }
    if let Some(t) = args.threshold {
        config.pipeline.options.richness.threshold = t;
    }
    if let Some(t) = args.templates {
        config.templates_dir = Some(t);
    }
    if args.retry {
        match config.pipeline.name {
            PipelineKind::ReviewThenFix | PipelineKind::ReviewThenFixRetry => {
                config.pipeline.name = PipelineKind::ReviewThenFixRetry
            }
            PipelineKind::SpecGated => config.pipeline.options.gated_retry = true,
            other => return Err(usage(anyhow!("--retry does not apply to the {other} pipeline"))),
        }
    }
    config.validate().map_err(usage)?;
    if config.dataset.path.as_os_str().is_empty() {
        return Err(usage(anyhow!(
            "no dataset: pass --dataset or set dataset.path in the config"
        )));
    }
    config.apply_env_secrets();

    let dataset = load_problems(&config.dataset.path, config.dataset.kind)?;
    if let Some(w) = &dataset.warning {
        eprintln!("warning: {w}");
    }
    let ctx = config.context().map_err(usage)?;
    let result = run_benchmark(&ctx, &dataset.problems, &config.bench_options()).await?;
    println!("{}", summary_line(&result));
    println!("run directory: {}", config.out_dir.display());
    Ok(())
}

async fn cmd_score(config_path: Option<&Path>, args: ScoreArgs) -> Outcome {
    let snapshot = args.run.join("config.json");
    let mut config = match config_path {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::load(&snapshot).map_err(usage)?,
    };
    apply_common(&mut config, &args.common);
    let dataset = load_problems(&config.dataset.path, config.dataset.kind)?;
    let ctx = config.context().map_err(usage)?;
    let mut options = config.bench_options();
    options.run_dir = args.run.clone();
    let result = score_run(
        &ctx,
        &dataset.problems,
        &args.run,
        &options.meta,
        options.scoring_timeout,
    )
    .await?;
    println!("{}", summary_line(&result));
    if let Some(external) = args.external {
        let agreement = scoring_agreement(&result, &read_evalplus_results(&external)?);
        println!("external agreement: {}/{}", agreement.agreed, agreement.total);
        for id in &agreement.disagreements {
            println!("  disagrees: {id}");
        }
        if !agreement.is_complete() {
            return Err(Failure::Runtime(anyhow!("internal and external scoring disagree")));
        }
    }
    Ok(())
}

fn auto_tags(
    candidate_dir: &Path,
    run: &RunResult,
    regressions: &[String],
    specs: &BTreeMap<String, ProblemSpec>,
) -> Vec<FailureTag> {
    let mut tags = Vec::new();
    for id in regressions {
        let Some(outcome) = run.per_problem.get(id) else {
            continue;
        };
        let trace = load_trace(candidate_dir, outcome).ok();
        let tag = match (specs.get(id), trace) {
            (Some(spec), Some(trace)) => auto_classify_failure(spec, &trace, outcome.passed, &outcome.failure_evidence),
            _ => Some(match undefined_name(&outcome.failure_evidence) {
                Some(name) => FailureTag {
                    task_id: id.clone(),
                    category: FailureCategory::MissingImport,
                    evidence: format!("`{name}` is used but never imported or defined"),
                    source: TagSource::Auto,
                },
                None => FailureTag {
                    task_id: id.clone(),
                    category: FailureCategory::Unclassified,
                    evidence: outcome.failure_evidence.lines().next().unwrap_or("").to_string(),
                    source: TagSource::Auto,
                },
            }),
        };
        tags.extend(tag);
    }
    tags
}

fn cmd_diff(args: DiffArgs) -> Outcome {
    let baseline = load_run(&args.baseline)?;
    let candidate = load_run(&args.candidate)?;
    let diff = diff_runs(&baseline, &candidate).map_err(usage)?;
    let manual = match &args.annotations {
        Some(path) => read_annotations(fs::File::open(path).with_context(|| path.display().to_string())?)?,
        None => Vec::new(),
    };
    let specs: BTreeMap<String, ProblemSpec> = match &args.dataset {
        Some(path) => load_problems(path, candidate.dataset)?
            .problems
            .into_iter()
            .map(|p| (p.task_id().to_string(), p.spec))
            .collect(),
        None => BTreeMap::new(),
    };
    let regressions: Vec<String> = diff.regressions.iter().cloned().collect();
    let auto = auto_tags(&args.candidate, &candidate, &regressions, &specs);
    let tags = tag_regressions(&diff, &auto, &manual);

    println!(
        "{} regressions / {} improvements",
        diff.regressions.len(),
        diff.improvements.len()
    );
    let report = emit_report(
        &Report::Diff {
            diff: &diff,
            tags: &tags,
        },
        args.format,
    );
    write_output(args.out.as_deref(), &report)?;
    Ok(())
}

fn cmd_richness(config_path: Option<&Path>, args: RichnessArgs) -> Outcome {
    let config = load_config(config_path)?;
    let mut richness = config.pipeline.options.richness.clone();
    if let Some(t) = args.threshold {
        richness.threshold = t;
    }
    let problems = load_problems(&args.dataset, args.kind)?.problems;
    let mut rich = 0;
    let mut out = String::from("task_id,score,label\n");
    for p in &problems {
        let score = score_spec_richness(&p.spec, &richness);
        if score.is_rich() {
            rich += 1;
        }
        out.push_str(&format!(
            "{},{:.2},{}\n",
            p.task_id(),
            score.score,
            if score.is_rich() { "rich" } else { "lean" }
        ));
    }
    if let Some(path) = &args.out {
        fs::write(path, out).with_context(|| path.display().to_string())?;
    }
    println!(
        "rich: {rich}/{n}, lean: {}/{n} (threshold {})",
        problems.len() - rich,
        richness.threshold,
        n = problems.len()
    );
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Outcome {
    let run = load_run(&args.run)?;
    let count = match &args.out {
        Some(path) => {
            let mut file = io::BufWriter::new(fs::File::create(path).with_context(|| path.display().to_string())?);
            let n = emit_samples(&run, &mut file)?;
            file.flush()?;
            n
        }
        None => emit_samples(&run, &mut io::stdout().lock())?,
    };
    eprintln!("exported {count} samples");
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Outcome {
    let runs: Vec<RunResult> = args.runs.iter().map(|d| load_run(d)).collect::<Result<_, _>>()?;
    let baseline = match &args.baseline {
        Some(dir) => load_run(dir)?,
        None => runs[0].clone(),
    };
    let rows: Vec<ReportRow> = runs
        .iter()
        .map(|r| {
            let is_baseline = r.same_outcomes(&baseline) && r.pipeline == baseline.pipeline;
            ReportRow {
                configuration: r.pipeline.to_string(),
                dataset: r.dataset.as_str().to_string(),
                pass_at_1: r.pass_at_1_percent,
                delta_pp: (!is_baseline).then(|| delta_pp(r.pass_at_1_percent, baseline.pass_at_1_percent)),
            }
        })
        .collect();
    print!("{}", emit_report(&Report::Rates(&rows), args.format));
    Ok(())
}

async fn cmd_corpus(config_path: Option<&Path>, args: CorpusArgs) -> Outcome {
    let config = load_config(config_path)?;
    let command = args.sandbox.unwrap_or(config.sandbox.command);
    let dir = args.dir.unwrap_or_else(bundled_corpus_dir);
    let cases = load_corpus(&dir).map_err(usage)?;
    let sandbox = ProcessSandbox::new(&command, config.sandbox.max_processes);
    let outcomes = run_corpus(&sandbox, &cases).await?;
    let mut unsound = 0;
    for o in &outcomes {
        let mark = match (o.sound, o.exact) {
            (true, true) => "ok",
            (true, false) => "ok (differs from expected.py)",
            (false, _) => {
                unsound += 1;
                "FAILED"
            }
        };
        println!("{:<40} {mark}  {}", o.name, o.detail);
    }
    println!("{}/{} cases sound", outcomes.len() - unsound, outcomes.len());
    if unsound > 0 {
        return Err(Failure::Runtime(anyhow!("{unsound} corpus case(s) failed")));
    }
    Ok(())
}

/// The error and its causes, skipping causes the message already contains.
fn render(e: &anyhow::Error) -> String {
    let mut message = e.to_string();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !message.contains(&text) {
            message.push_str(": ");
            message.push_str(&text);
        }
    }
    message
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(io::stderr)
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let config = cli.config.as_deref();
    let outcome = runtime.block_on(async {
        match cli.command {
            Command::Run(a) => cmd_run(config, *a).await,
            Command::Score(a) => cmd_score(config, a).await,
            Command::Diff(a) => cmd_diff(a),
            Command::Richness(a) => cmd_richness(config, a),
            Command::ExportSamples(a) => cmd_export(a),
            Command::Report(a) => cmd_report(a),
            Command::CorpusTest(a) => cmd_corpus(config, a).await,
        }
    });
    // Give in-flight runner processes a moment to be reaped.
    runtime.shutdown_timeout(Duration::from_secs(1));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {}", render(&e));
            ExitCode::from(1)
        }
    }
}
