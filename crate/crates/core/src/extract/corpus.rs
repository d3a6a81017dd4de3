//! Extraction fixtures stored on disk.
//!
//! ```text
//! <corpus>/<case>/raw.md           model output as received
//! <corpus>/<case>/entry_point      function name
//! <corpus>/<case>/expected.py      expected extracted code, or
//! <corpus>/<case>/expected_error   `no_code_found`
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{count_top_level_defs, extract, ExtractError};
use crate::harness::compile_check;
use crate::sandbox::{Sandbox, SandboxError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expectation {
    Code(String),
    NoCodeFound,
}

#[derive(Debug, Clone)]
pub struct CorpusCase {
    pub name: String,
    pub raw: String,
    pub entry_point: String,
    pub expected: Expectation,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}: needs exactly one of expected.py or expected_error")]
    Layout(PathBuf),
    #[error("{path}: unknown expected error `{tag}`")]
    UnknownError { path: PathBuf, tag: String },
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads every case directory under `dir`, sorted by name.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusCase>, CorpusError> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs.iter()
        .map(|case| {
            let expected_code = case.join("expected.py");
            let expected_error = case.join("expected_error");
            let expected = match (expected_code.exists(), expected_error.exists()) {
                (true, false) => Expectation::Code(read(&expected_code)?),
                (false, true) => match read(&expected_error)?.trim() {
                    "no_code_found" => Expectation::NoCodeFound,
                    tag => {
                        return Err(CorpusError::UnknownError {
                            path: expected_error,
                            tag: tag.to_string(),
                        })
                    }
                },
                _ => return Err(CorpusError::Layout(case.clone())),
            };
            Ok(CorpusCase {
                name: case.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                raw: read(&case.join("raw.md"))?,
                entry_point: read(&case.join("entry_point"))?.trim().to_string(),
                expected,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseOutcome {
    pub name: String,
    /// Compile-clean with exactly one entry-point definition, or the
    /// expected `NoCodeFound`.
    pub sound: bool,
    /// Byte-equal to `expected.py` (ignoring trailing whitespace).
    pub exact: bool,
    pub detail: String,
}

/// Extracts every case and checks the result independently with the sandbox.
pub async fn run_corpus(sandbox: &dyn Sandbox, cases: &[CorpusCase]) -> Result<Vec<CaseOutcome>, SandboxError> {
    let mut outcomes = Vec::with_capacity(cases.len());
    for case in cases {
        let result = extract(sandbox, &case.raw, &case.entry_point).await;
        let outcome = match (&case.expected, result) {
            (_, Err(ExtractError::Sandbox(e))) => return Err(e),
            (Expectation::NoCodeFound, Err(ExtractError::NoCodeFound { .. })) => CaseOutcome {
                name: case.name.clone(),
                sound: true,
                exact: true,
                detail: "no code found".into(),
            },
            (Expectation::NoCodeFound, other) => CaseOutcome {
                name: case.name.clone(),
                sound: false,
                exact: false,
                detail: format!("expected NoCodeFound, got {other:?}"),
            },
            (Expectation::Code(expected), Ok(result)) => {
                let compiles = compile_check(sandbox, &result.code).await?.is_ok();
                let defs = count_top_level_defs(&result.code, &case.entry_point);
                let exact = result.code.trim_end() == expected.trim_end();
                CaseOutcome {
                    name: case.name.clone(),
                    sound: compiles && defs == 1,
                    exact,
                    detail: format!("stages {:?}, compiles {compiles}, defs {defs}", result.stages_applied),
                }
            }
            (Expectation::Code(_), Err(e)) => CaseOutcome {
                name: case.name.clone(),
                sound: false,
                exact: false,
                detail: format!("{e}: {:?}", e.best_effort().diagnostics),
            },
        };
        outcomes.push(outcome);
    }
    Ok(outcomes)
}

/// The corpus shipped with this crate.
pub fn bundled_corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus")
}
