mod common;

use dualcode::extract::corpus::{bundled_corpus_dir, load_corpus, run_corpus, Expectation};

#[tokio::test]
async fn corpus_extracts_against_reference_runner() {
    let cases = load_corpus(&bundled_corpus_dir()).unwrap();
    assert!(cases.len() >= 25);
    let sandbox = common::reference_sandbox();
    let outcomes = run_corpus(&sandbox, &cases).await.unwrap();
    let mut problems = Vec::new();
    for (case, outcome) in cases.iter().zip(&outcomes) {
        if !outcome.sound || !outcome.exact {
            problems.push(format!(
                "{}: sound={} exact={} {}",
                outcome.name, outcome.sound, outcome.exact, outcome.detail
            ));
        }
        if matches!(case.expected, Expectation::NoCodeFound) {
            assert!(outcome.sound, "{}", outcome.name);
        }
    }
    assert!(problems.is_empty(), "{}", problems.join("\n"));
}

#[tokio::test]
async fn extraction_is_idempotent_on_corpus() {
    let cases = load_corpus(&bundled_corpus_dir()).unwrap();
    let sandbox = common::reference_sandbox();
    for case in cases.iter().filter(|c| matches!(c.expected, Expectation::Code(_))) {
        let first = dualcode::extract::extract(&sandbox, &case.raw, &case.entry_point)
            .await
            .unwrap();
        let second = dualcode::extract::extract(&sandbox, &first.code, &case.entry_point)
            .await
            .unwrap();
        assert_eq!(first.code, second.code, "{}", case.name);
    }
}
