//! Benchmark problems.

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    HumanevalPlus,
    MbppPlus,
    Custom,
}

impl DatasetKind {
    /// Problem count of the published benchmark, if this is one.
    pub fn expected_count(self) -> Option<usize> {
        match self {
            DatasetKind::HumanevalPlus => Some(164),
            DatasetKind::MbppPlus => Some(378),
            DatasetKind::Custom => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetKind::HumanevalPlus => "humaneval_plus",
            DatasetKind::MbppPlus => "mbpp_plus",
            DatasetKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "humaneval_plus" | "humaneval" | "he_plus" => Ok(DatasetKind::HumanevalPlus),
            "mbpp_plus" | "mbpp" => Ok(DatasetKind::MbppPlus),
            "custom" => Ok(DatasetKind::Custom),
            other => Err(format!("unknown dataset kind `{other}`")),
        }
    }
}

/// The part of a problem a pipeline is allowed to see.
///
/// Pipelines and prompt rendering only ever receive this view; the hidden
/// test program lives on [`Problem`] and is used for scoring alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub task_id: String,
    pub prompt: String,
    pub entry_point: String,
}

impl ProblemSpec {
    pub fn new(task_id: impl Into<String>, prompt: impl Into<String>, entry_point: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            prompt: prompt.into(),
            entry_point: entry_point.into(),
        }
    }

    /// The `def <entry_point>(...)` header in the prompt, joined onto one line.
    pub fn signature(&self) -> Option<String> {
        find_def_header(&self.prompt, &self.entry_point)
    }

    /// Parameter names of the entry point as declared in the prompt.
    pub fn parameter_names(&self) -> Option<Vec<String>> {
        self.signature().map(|sig| parameter_names(&sig))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    #[serde(flatten)]
    pub spec: ProblemSpec,
    #[serde(rename = "test")]
    hidden_test_program: String,
    #[serde(default = "custom_kind")]
    pub source_dataset: DatasetKind,
}

fn custom_kind() -> DatasetKind {
    DatasetKind::Custom
}

impl Problem {
    pub fn new(spec: ProblemSpec, hidden_test_program: impl Into<String>, source: DatasetKind) -> Self {
        Self {
            spec,
            hidden_test_program: hidden_test_program.into(),
            source_dataset: source,
        }
    }

    pub fn task_id(&self) -> &str {
        &self.spec.task_id
    }

    pub fn hidden_test_program(&self) -> &str {
        &self.hidden_test_program
    }

    /// The test program made runnable: HumanEval-style programs define
    /// `check(candidate)` without calling it, so a call is appended.
    pub fn scoring_program(&self) -> String {
        static CALLS_CHECK: OnceLock<Regex> = OnceLock::new();
        let calls_check = CALLS_CHECK.get_or_init(|| Regex::new(r"(?m)^check\s*\(").unwrap());
        let program = self.hidden_test_program.trim_end();
        if program.contains("def check(") && !calls_check.is_match(program) {
            format!("{program}\n\ncheck({})\n", self.spec.entry_point)
        } else {
            format!("{program}\n")
        }
    }
}

/// Finds the header of `def <name>(` in `source`, following it across lines
/// until the closing `:` at bracket depth zero.
pub fn find_def_header(source: &str, name: &str) -> Option<String> {
    let needle = Regex::new(&format!(
        r"(?m)^[ \t]*(?:async[ \t]+)?def[ \t]+{}[ \t]*\(",
        regex::escape(name)
    ))
    .expect("escaped name forms a valid pattern");
    let m = needle.find(source)?;
    let rest = &source[m.start()..];
    let mut depth = 0i32;
    let mut header = String::new();
    for ch in rest.chars() {
        match ch {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ':' if depth == 0 => {
                header.push(':');
                return Some(collapse_whitespace(header.trim()));
            }
            _ => {}
        }
        header.push(ch);
    }
    None
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parameter names of a one-line `def` header, in order, without `*`/`**`.
pub fn parameter_names(header: &str) -> Vec<String> {
    let Some(open) = header.find('(') else {
        return Vec::new();
    };
    let mut depth = 0i32;
    let mut close = None;
    for (i, ch) in header[open..].char_indices() {
        match ch {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => {
                depth -= 1;
                if depth == 0 {
                    close = Some(open + i);
                    break;
                }
            }
            _ => {}
        }
    }
    let Some(close) = close else { return Vec::new() };
    split_top_level(&header[open + 1..close])
        .into_iter()
        .filter_map(|param| {
            let name = param
                .split([':', '='])
                .next()
                .unwrap_or("")
                .trim()
                .trim_start_matches('*')
                .trim();
            (!name.is_empty() && name != "/").then(|| name.to_string())
        })
        .collect()
}

/// Counts annotated parameters plus return annotations over every `def`
/// header in `source`.
pub fn annotation_count(source: &str) -> usize {
    static DEF: OnceLock<Regex> = OnceLock::new();
    let def = DEF.get_or_init(|| Regex::new(r"(?m)^[ \t]*def[ \t]+([A-Za-z_][A-Za-z0-9_]*)[ \t]*\(").unwrap());
    def.captures_iter(source)
        .filter_map(|c| find_def_header(source, &c[1]))
        .map(|header| {
            let Some(open) = header.find('(') else { return 0 };
            let Some(close) = header.rfind(')') else { return 0 };
            let params = split_top_level(&header[open + 1..close])
                .into_iter()
                .filter(|p| p.contains(':'))
                .count();
            let returns = usize::from(header[close..].contains("->"));
            params + returns
        })
        .sum()
}

fn split_top_level(s: &str) -> Vec<String> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut current = String::new();
    for ch in s.chars() {
        match ch {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => depth -= 1,
            ',' if depth == 0 => {
                parts.push(std::mem::take(&mut current));
                continue;
            }
            _ => {}
        }
        current.push(ch);
    }
    if !current.trim().is_empty() {
        parts.push(current);
    }
    parts
}
