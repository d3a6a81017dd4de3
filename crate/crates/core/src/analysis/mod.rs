//! Post-hoc analysis of persisted runs: regressions and improvements
//! between two runs, failure categories, specification richness, and
//! markdown/CSV reports.

mod report;
mod richness;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::bench::{Pp, RunResult};
use crate::pipelines::PipelineTrace;
use crate::problem::{find_def_header, parameter_names, ProblemSpec};

pub use report::{emit_report, parse_rate_csv, Report, ReportFormat, ReportRow};
pub use richness::{score_spec_richness, RichnessConfig, RichnessFeatures, RichnessLabel, RichnessScore};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunDiff {
    pub baseline_run: String,
    pub candidate_run: String,
    /// Passed in the baseline, failed in the candidate.
    pub regressions: BTreeSet<String>,
    /// Failed in the baseline, passed in the candidate.
    pub improvements: BTreeSet<String>,
    pub unchanged: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("runs cover different problems: {only_baseline} only in baseline, {only_candidate} only in candidate")]
pub struct DatasetMismatch {
    pub only_baseline: usize,
    pub only_candidate: usize,
}

/// Task ids split into regressions, improvements and unchanged.
pub type Transitions = (BTreeSet<String>, BTreeSet<String>, BTreeSet<String>);

/// Partitions the shared problems of two runs by pass/fail transition.
pub fn diff_outcomes(
    baseline: &BTreeMap<String, bool>,
    candidate: &BTreeMap<String, bool>,
) -> Result<Transitions, DatasetMismatch> {
    let only_baseline = baseline.keys().filter(|k| !candidate.contains_key(*k)).count();
    let only_candidate = candidate.keys().filter(|k| !baseline.contains_key(*k)).count();
    if only_baseline + only_candidate > 0 {
        return Err(DatasetMismatch {
            only_baseline,
            only_candidate,
        });
    }
    let (mut regressions, mut improvements, mut unchanged) = (BTreeSet::new(), BTreeSet::new(), BTreeSet::new());
    for (task_id, &was) in baseline {
        match (was, candidate[task_id]) {
            (true, false) => regressions.insert(task_id.clone()),
            (false, true) => improvements.insert(task_id.clone()),
            _ => unchanged.insert(task_id.clone()),
        };
    }
    Ok((regressions, improvements, unchanged))
}

pub fn diff_runs(baseline: &RunResult, candidate: &RunResult) -> Result<RunDiff, DatasetMismatch> {
    let passed = |run: &RunResult| -> BTreeMap<String, bool> {
        run.per_problem.iter().map(|(k, v)| (k.clone(), v.passed)).collect()
    };
    let (regressions, improvements, unchanged) = diff_outcomes(&passed(baseline), &passed(candidate))?;
    Ok(RunDiff {
        baseline_run: format!("{} ({})", baseline.pipeline, short_digest(&baseline.config_digest)),
        candidate_run: format!("{} ({})", candidate.pipeline, short_digest(&candidate.config_digest)),
        regressions,
        improvements,
        unchanged,
    })
}

fn short_digest(digest: &str) -> &str {
    &digest[..digest.len().min(12)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureCategory {
    MissingImport,
    IdentifierMismatch,
    AlgorithmMismatch,
    OverEngineering,
    Unclassified,
}

impl FailureCategory {
    pub const ALL: [FailureCategory; 5] = [
        FailureCategory::MissingImport,
        FailureCategory::IdentifierMismatch,
        FailureCategory::AlgorithmMismatch,
        FailureCategory::OverEngineering,
        FailureCategory::Unclassified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureCategory::MissingImport => "missing_import",
            FailureCategory::IdentifierMismatch => "identifier_mismatch",
            FailureCategory::AlgorithmMismatch => "algorithm_mismatch",
            FailureCategory::OverEngineering => "over_engineering",
            FailureCategory::Unclassified => "unclassified",
        }
    }
}

impl fmt::Display for FailureCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FailureCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        FailureCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == wanted)
            .ok_or_else(|| format!("unknown failure category `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagSource {
    Auto,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureTag {
    pub task_id: String,
    pub category: FailureCategory,
    pub evidence: String,
    pub source: TagSource,
}

/// The undefined name or missing module in an error text, if any.
pub fn undefined_name(evidence: &str) -> Option<String> {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    let pattern = PATTERN.get_or_init(|| {
        Regex::new(r#"(?:name '([A-Za-z_][A-Za-z0-9_]*)' is not defined|No module named '([A-Za-z_][\w.]*)')"#).unwrap()
    });
    let c = pattern.captures(evidence)?;
    c.get(1).or_else(|| c.get(2)).map(|m| m.as_str().to_string())
}

/// Tags a hidden-test failure from machine evidence alone. Returns `None`
/// for a problem that passed.
pub fn auto_classify_failure(
    spec: &ProblemSpec,
    trace: &PipelineTrace,
    hidden_passed: bool,
    hidden_evidence: &str,
) -> Option<FailureTag> {
    if hidden_passed {
        return None;
    }
    let tag = |category, evidence: String| FailureTag {
        task_id: spec.task_id.clone(),
        category,
        evidence,
        source: TagSource::Auto,
    };
    let expected = spec.parameter_names();
    let actual = find_def_header(&trace.final_candidate.code, &spec.entry_point).map(|h| parameter_names(&h));
    if let (Some(expected), Some(actual)) = (expected, actual) {
        if expected != actual {
            return Some(tag(
                FailureCategory::IdentifierMismatch,
                format!(
                    "parameters ({}) differ from the prompt's ({})",
                    actual.join(", "),
                    expected.join(", ")
                ),
            ));
        }
    }
    if let Some(name) = undefined_name(hidden_evidence) {
        return Some(tag(
            FailureCategory::MissingImport,
            format!("`{name}` is used but never imported or defined"),
        ));
    }
    let first = hidden_evidence.lines().next().unwrap_or("").to_string();
    Some(tag(FailureCategory::Unclassified, first))
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("annotation file: {0}")]
    Csv(#[from] csv::Error),
    #[error("annotation file row {row}: {message}")]
    Row { row: usize, message: String },
}

#[derive(Debug, Deserialize)]
struct AnnotationRow {
    task_id: String,
    category: String,
    #[serde(default)]
    note: String,
}

/// Reads a `task_id,category,note` CSV of manual tags.
pub fn read_annotations(input: impl Read) -> Result<Vec<FailureTag>, AnnotationError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut tags = Vec::new();
    for (i, row) in reader.deserialize::<AnnotationRow>().enumerate() {
        let row = row?;
        let category = row
            .category
            .parse()
            .map_err(|message| AnnotationError::Row { row: i + 2, message })?;
        tags.push(FailureTag {
            task_id: row.task_id,
            category,
            evidence: row.note,
            source: TagSource::Manual,
        });
    }
    Ok(tags)
}

/// One tag per regression: manual tags win over automatic ones; untagged
/// regressions are unclassified.
pub fn tag_regressions(diff: &RunDiff, auto: &[FailureTag], manual: &[FailureTag]) -> Vec<FailureTag> {
    let find = |tags: &[FailureTag], id: &str| tags.iter().find(|t| t.task_id == id).cloned();
    diff.regressions
        .iter()
        .map(|id| {
            find(manual, id)
                .or_else(|| find(auto, id))
                .unwrap_or_else(|| FailureTag {
                    task_id: id.clone(),
                    category: FailureCategory::Unclassified,
                    evidence: String::new(),
                    source: TagSource::Auto,
                })
        })
        .collect()
}

pub fn category_histogram(tags: &[FailureTag]) -> BTreeMap<FailureCategory, usize> {
    let mut histogram = BTreeMap::new();
    for t in tags {
        *histogram.entry(t.category).or_insert(0) += 1;
    }
    histogram
}

/// Review impact on rich versus lean specifications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedDelta {
    pub rich: Pp,
    pub lean: Pp,
    /// rich / lean rounded to one decimal; `None` when lean is zero.
    pub ratio: Option<f64>,
    pub unbounded: bool,
    /// `≈N×`, only when the lean delta exceeds half a point.
    pub annotation: Option<String>,
}

pub fn richness_stratified_delta(rich: Pp, lean: Pp) -> StratifiedDelta {
    if lean.tenths() == 0 {
        return StratifiedDelta {
            rich,
            lean,
            ratio: None,
            unbounded: true,
            annotation: None,
        };
    }
    let exact = rich.tenths() as f64 / lean.tenths() as f64;
    let ratio = (exact * 10.0).round() / 10.0;
    let annotation = (lean.tenths() > 5).then(|| format!("≈{}×", exact.round() as i64));
    StratifiedDelta {
        rich,
        lean,
        ratio: Some(ratio),
        unbounded: false,
        annotation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pp(s: &str) -> Pp {
        s.parse().unwrap()
    }

    #[test]
    fn stratified_ratio() {
        let d = richness_stratified_delta(pp("9.8"), pp("2.3"));
        assert_eq!(d.ratio, Some(4.3));
        assert_eq!(d.annotation.as_deref(), Some("≈4×"));
        let d = richness_stratified_delta(pp("3.0"), pp("3.0"));
        assert_eq!(d.ratio, Some(1.0));
        let d = richness_stratified_delta(pp("3.0"), pp("0.0"));
        assert!(d.unbounded);
        assert_eq!(d.ratio, None);
        let d = richness_stratified_delta(pp("3.0"), pp("0.5"));
        assert_eq!(d.annotation, None);
    }

    #[test]
    fn undefined_names_are_found() {
        assert_eq!(
            undefined_name("NameError: name 'Counter' is not defined").as_deref(),
            Some("Counter")
        );
        assert_eq!(
            undefined_name("ModuleNotFoundError: No module named 'numpy'").as_deref(),
            Some("numpy")
        );
        assert_eq!(undefined_name("AssertionError"), None);
    }

    #[test]
    fn annotations_parse() {
        let csv = "task_id,category,note\nHumanEval/1,missing_import,uses Counter\nHumanEval/2, over-engineering ,\n";
        let tags = read_annotations(csv.as_bytes()).unwrap();
        assert_eq!(tags.len(), 2);
        assert_eq!(tags[1].category, FailureCategory::OverEngineering);
        assert!(read_annotations("task_id,category,note\nx,bogus,\n".as_bytes()).is_err());
    }

    #[test]
    fn disjoint_runs_mismatch() {
        let a: BTreeMap<_, _> = [("a".to_string(), true)].into();
        let b: BTreeMap<_, _> = [("b".to_string(), true)].into();
        assert!(diff_outcomes(&a, &b).is_err());
        let (r, i, u) = diff_outcomes(&a, &a).unwrap();
        assert!(r.is_empty() && i.is_empty());
        assert_eq!(u.len(), 1);
    }

    proptest! {
        #[test]
        fn diff_partitions_shared_ids(pairs in proptest::collection::btree_map("[a-z]{1,6}", (any::<bool>(), any::<bool>()), 0..60)) {
            let base: BTreeMap<String, bool> = pairs.iter().map(|(k, v)| (k.clone(), v.0)).collect();
            let cand: BTreeMap<String, bool> = pairs.iter().map(|(k, v)| (k.clone(), v.1)).collect();
            let (r, i, u) = diff_outcomes(&base, &cand).unwrap();
            prop_assert!(r.is_disjoint(&i) && r.is_disjoint(&u) && i.is_disjoint(&u));
            prop_assert_eq!(r.len() + i.len() + u.len(), pairs.len());
            for id in &r { prop_assert!(base[id] && !cand[id]); }
            for id in &i { prop_assert!(!base[id] && cand[id]); }
        }
    }
}
