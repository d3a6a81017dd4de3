//! The `dualcode` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::HeaderMap;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dualcode"));
    cmd.env_remove("DUALCODE_CONFIG")
        .env_remove("DUALCODE_CODER_API_KEY")
        .env_remove("DUALCODE_PLANNER_API_KEY");
    cmd
}

fn core_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core")
}

fn fixture(path: &str) -> String {
    core_dir().join("fixtures").join(path).display().to_string()
}

fn runner_command() -> String {
    format!(
        "python3 {}",
        core_dir().join("tests/support/reference_runner.py").display()
    )
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn diff_prints_fixture_counts() {
    let out = bin()
        .args(["diff", "--baseline", &fixture("plan_regressions/raw")])
        .args(["--candidate", &fixture("plan_regressions/plan_then_code")])
        .args(["--annotations", &fixture("plan_regressions/annotations.csv")])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().next(), Some("15 regressions / 14 improvements"));
    assert!(text.contains("| missing_import | 7 |"));
    assert!(text.contains("| over_engineering | 2 |"));
}

#[test]
fn diff_without_annotations_tags_from_evidence() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("diff.csv");
    let out = bin()
        .args(["diff", "--baseline", &fixture("plan_regressions/raw")])
        .args(["--candidate", &fixture("plan_regressions/plan_then_code")])
        .args(["--format", "csv", "--out", csv.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(csv).unwrap();
    assert_eq!(
        text.lines()
            .filter(|l| l.contains(",regression,missing_import,"))
            .count(),
        7
    );
}

#[test]
fn report_shows_delta_against_first_run() {
    let out = bin()
        .args([
            "report",
            &fixture("plan_regressions/raw"),
            &fixture("plan_regressions/plan_then_code"),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("| raw | humaneval_plus | 78.0% | - |"), "{text}");
    assert!(
        text.contains("| plan_then_code | humaneval_plus | 77.4% | -0.6pp |"),
        "{text}"
    );
}

#[test]
fn richness_summarizes_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("richness.csv");
    let out = bin()
        .args(["richness", "--dataset", &fixture("richness/humaneval_like.jsonl")])
        .args(["--out", csv.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(stdout(&out).contains("rich: 12/12, lean: 0/12"), "{}", stdout(&out));
    let rows = std::fs::read_to_string(csv).unwrap();
    assert!(rows.starts_with("task_id,score,label\n"));
    assert_eq!(rows.lines().filter(|l| l.ends_with(",rich")).count(), 12);

    let strict = bin()
        .args([
            "richness",
            "--dataset",
            &fixture("richness/humaneval_like.jsonl"),
            "--threshold",
            "100",
        ])
        .output()
        .unwrap();
    assert!(stdout(&strict).contains("rich: 0/12"));
}

#[test]
fn export_writes_one_line_per_problem() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("samples.jsonl");
    let out = bin()
        .args([
            "export-samples",
            "--run",
            &fixture("plan_regressions/raw"),
            "--out",
            path.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().count(), 164);
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first["task_id"].is_string() && first["solution"].is_string());
}

#[test]
fn exit_codes_separate_usage_from_runtime_errors() {
    let bogus = bin().args(["run", "--pipeline", "debate"]).output().unwrap();
    assert_eq!(bogus.status.code(), Some(2));
    let retry_raw = bin()
        .args(["run", "--dataset", "x.jsonl", "--pipeline", "raw", "--retry"])
        .output()
        .unwrap();
    assert_eq!(retry_raw.status.code(), Some(2));
    assert!(stderr(&retry_raw).contains("--retry"));
    let no_dataset = bin().args(["run"]).output().unwrap();
    assert_eq!(no_dataset.status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "parallelism = 0\n").unwrap();
    let bad_config = bin()
        .args([
            "--config",
            config.to_str().unwrap(),
            "richness",
            "--dataset",
            &fixture("richness/mbpp_like.jsonl"),
        ])
        .output()
        .unwrap();
    assert_eq!(bad_config.status.code(), Some(2), "{}", stderr(&bad_config));

    let missing = bin()
        .args(["export-samples", "--run", "/nonexistent/run"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(
        stderr(&missing).matches("No such file").count(),
        1,
        "{}",
        stderr(&missing)
    );
}

#[test]
fn corpus_test_passes_on_the_bundled_corpus() {
    let out = bin()
        .args(["corpus-test", "--sandbox", &runner_command()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}{}", stdout(&out), stderr(&out));
    assert!(stdout(&out).contains("30/30 cases sound"));
}

#[derive(Default)]
struct Endpoint {
    calls: AtomicUsize,
    auth: Mutex<Vec<Option<String>>>,
}

async fn completions(State(state): State<Arc<Endpoint>>, headers: HeaderMap, Json(body): Json<Value>) -> Json<Value> {
    state.calls.fetch_add(1, Ordering::SeqCst);
    state
        .auth
        .lock()
        .unwrap()
        .push(headers.get("authorization").map(|v| v.to_str().unwrap().to_string()));
    let content = if body["model"] == "coder" {
        "```python\ndef add(a: int, b: int) -> int:\n    return a + b\n```"
    } else {
        "Looks right.\nVERDICT: CLEAN"
    };
    Json(json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}))
}

fn serve(state: Arc<Endpoint>) -> String {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Runtime::new().unwrap();
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new()
                .route("/v1/chat/completions", post(completions))
                .with_state(state);
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{}", rx.recv().unwrap())
}

const DATASET: &str = r#"{"task_id": "Toy/0", "entry_point": "add", "prompt": "def add(a: int, b: int) -> int:\n    \"\"\"Sum.\n    >>> add(2, 3)\n    5\n    \"\"\"\n", "test": "def check(candidate):\n    assert candidate(2, 3) == 5\n"}
{"task_id": "Toy/1", "entry_point": "neg", "prompt": "def neg(x: int) -> int:\n    \"\"\"Negate.\n    >>> neg(2)\n    -2\n    \"\"\"\n", "test": "def check(candidate):\n    assert candidate(2) == -2\n"}
"#;

#[test]
fn run_score_and_export_against_a_local_endpoint() {
    let state = Arc::new(Endpoint::default());
    let url = serve(state.clone());
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("toy.jsonl");
    std::fs::write(&dataset, DATASET).unwrap();
    let run_dir = dir.path().join("run");
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "parallelism = 2\n[dataset]\npath = {:?}\nkind = \"custom\"\n[pipeline]\nname = \"review_then_fix\"\n[sandbox]\ncommand = {:?}\n",
            dataset.display().to_string(),
            runner_command()
        ),
    )
    .unwrap();

    let run = |extra: &[&str]| {
        bin()
            .env("DUALCODE_CODER_API_KEY", "sk-test-coder")
            .args(["--config", config.to_str().unwrap(), "run"])
            .args([
                "--coder-url",
                &url,
                "--coder-model",
                "coder",
                "--planner-url",
                &url,
                "--planner-model",
                "planner",
            ])
            .args(["--out", run_dir.to_str().unwrap()])
            .args(extra)
            .output()
            .unwrap()
    };
    let out = run(&[]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(
        stdout(&out).contains("review_then_fix on custom: 1/2 passed (50.0%)"),
        "{}",
        stdout(&out)
    );
    assert_eq!(state.calls.load(Ordering::SeqCst), 4);
    let auth = state.auth.lock().unwrap().clone();
    assert!(auth.contains(&Some("Bearer sk-test-coder".into())));
    assert!(auth.contains(&None));

    let snapshot = std::fs::read_to_string(run_dir.join("config.json")).unwrap();
    assert!(!snapshot.contains("sk-test"));

    let again = run(&[]);
    assert!(again.status.success());
    assert_eq!(state.calls.load(Ordering::SeqCst), 4, "resumed run called the endpoint");

    let changed = run(&["--max-retries", "2"]);
    assert_eq!(changed.status.code(), Some(1), "{}", stderr(&changed));

    let score = bin()
        .args(["score", "--run", run_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(score.status.success(), "{}", stderr(&score));
    assert!(stdout(&score).contains("1/2 passed (50.0%)"));

    let samples = bin()
        .args(["export-samples", "--run", run_dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(stdout(&samples).lines().count(), 2);
}
