use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::problem::{annotation_count, find_def_header, ProblemSpec};

/// Weights and threshold of the richness score.
///
/// `score = signature_weight·[signature]
///        + example_weight·min(examples, example_cap)
///        + annotation_weight·min(annotations, annotation_cap)
///        + min(docstring_chars / docstring_chars_per_point, docstring_cap)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RichnessConfig {
    pub signature_weight: f64,
    pub example_weight: f64,
    pub example_cap: usize,
    pub annotation_weight: f64,
    pub annotation_cap: usize,
    pub docstring_chars_per_point: f64,
    pub docstring_cap: f64,
    pub threshold: f64,
}

impl Default for RichnessConfig {
    fn default() -> Self {
        Self {
            signature_weight: 2.0,
            example_weight: 2.0,
            example_cap: 3,
            annotation_weight: 1.0,
            annotation_cap: 3,
            docstring_chars_per_point: 100.0,
            docstring_cap: 2.0,
            threshold: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RichnessLabel {
    Rich,
    Lean,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RichnessFeatures {
    pub docstring_length: usize,
    pub doctest_count: usize,
    /// Worked examples written as prose (`f(3) ==> 5`, "should return").
    pub prose_example_count: usize,
    pub annotation_count: usize,
    pub signature_present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichnessScore {
    pub task_id: String,
    pub features: RichnessFeatures,
    pub score: f64,
    pub label: RichnessLabel,
}

impl RichnessScore {
    pub fn is_rich(&self) -> bool {
        self.label == RichnessLabel::Rich
    }
}

/// Line endings unified and trailing whitespace removed from every line.
fn canonical(prompt: &str) -> String {
    prompt
        .replace("\r\n", "\n")
        .replace('\r', "\n")
        .lines()
        .map(str::trim_end)
        .collect::<Vec<_>>()
        .join("\n")
        .trim()
        .to_string()
}

/// Body of the entry point's docstring, or of the first string literal when
/// the prompt has no matching `def`; the whole prompt as a last resort.
fn docstring(prompt: &str, entry_point: &str) -> String {
    static TRIPLE: OnceLock<Regex> = OnceLock::new();
    let triple = TRIPLE.get_or_init(|| Regex::new(r#"(?s)("""|''')(.*?)("""|''')"#).unwrap());
    let def_start = Regex::new(&format!(
        r"(?m)^[ \t]*(?:async[ \t]+)?def[ \t]+{}[ \t]*\(",
        regex::escape(entry_point)
    ))
    .ok()
    .and_then(|re| re.find(prompt).map(|m| m.start()));
    let region = match def_start {
        Some(start) => &prompt[start..],
        None => prompt,
    };
    let body = match triple.captures(region) {
        Some(c) => c[2].to_string(),
        None if def_start.is_none() => prompt.to_string(),
        None => String::new(),
    };
    body.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

fn prose_example(line: &str, entry_point: &str) -> bool {
    static ARROWS: OnceLock<Regex> = OnceLock::new();
    let arrows =
        ARROWS.get_or_init(|| Regex::new(r"(?i)(==>|=>|➞|->|\bshould (?:be|return)\b|^\s*output\s*:)").unwrap());
    let t = line.trim();
    if t.starts_with(">>>") || t.starts_with("assert ") || t.starts_with("...") {
        return false;
    }
    let call = !entry_point.is_empty() && t.contains(&format!("{entry_point}("));
    call || arrows.is_match(t)
}

/// Scores how much detail a prompt gives; deterministic in the prompt text
/// and insensitive to line endings and trailing whitespace.
pub fn score_spec_richness(spec: &ProblemSpec, config: &RichnessConfig) -> RichnessScore {
    let prompt = canonical(&spec.prompt);
    let entry = spec.entry_point.as_str();
    let doc = docstring(&prompt, entry);
    let doctest_count = prompt.lines().filter(|l| l.trim_start().starts_with(">>>")).count();
    let prose_example_count = doc.lines().filter(|l| prose_example(l, entry)).count();
    let features = RichnessFeatures {
        docstring_length: doc.chars().count(),
        doctest_count,
        prose_example_count,
        annotation_count: annotation_count(&prompt),
        signature_present: !entry.is_empty() && find_def_header(&prompt, entry).is_some(),
    };
    let examples = (features.doctest_count + features.prose_example_count).min(config.example_cap);
    let doc_points = if config.docstring_chars_per_point > 0.0 {
        (features.docstring_length as f64 / config.docstring_chars_per_point).min(config.docstring_cap)
    } else {
        0.0
    };
    let score = config.signature_weight * f64::from(u8::from(features.signature_present))
        + config.example_weight * examples as f64
        + config.annotation_weight * features.annotation_count.min(config.annotation_cap) as f64
        + doc_points;
    let label = if score >= config.threshold {
        RichnessLabel::Rich
    } else {
        RichnessLabel::Lean
    };
    RichnessScore {
        task_id: spec.task_id.clone(),
        features,
        score,
        label,
    }
}
