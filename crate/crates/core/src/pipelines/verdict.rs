//! Reading reviewer output.
//!
//! Reviewers are asked to end with `VERDICT: CLEAN` or `VERDICT: BUGS` and to
//! list findings as numbered lines above it. Comparisons end with
//! `SELECTED: A` or `SELECTED: B`.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// How many trailing non-empty lines the tolerant parsers look at.
const TAIL_LINES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Clean,
    Bugs,
}

/// One reported bug, kept verbatim in `text` and split best-effort into
/// where / what it does / what it should do.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub text: String,
    pub location_hint: Option<String>,
    pub observed_behavior: String,
    pub expected_behavior: Option<String>,
}

impl Finding {
    pub fn parse(text: &str) -> Self {
        static LOCATION: OnceLock<Regex> = OnceLock::new();
        static SHOULD: OnceLock<Regex> = OnceLock::new();
        let location = LOCATION.get_or_init(|| {
            Regex::new(r"(?i)^\**\s*(lines?\s+\d+(?:\s*[-–]\s*\d+)?|`[^`]+`|[A-Za-z_][\w.]*\(\))\**\s*[:,]?\s*")
                .unwrap()
        });
        let should =
            SHOULD.get_or_init(|| Regex::new(r"(?i)[,;.]?\s*\b(?:but\s+)?(?:it\s+)?should\s+(?:instead\s+)?").unwrap());
        let text = text.trim().to_string();
        let (location_hint, rest) = match location.captures(&text) {
            Some(c) => {
                let whole = c.get(0).expect("match").end();
                (Some(c[1].trim_matches('`').to_string()), text[whole..].to_string())
            }
            None => (None, text.clone()),
        };
        let (observed, expected) = match should.find(&rest) {
            Some(m) => (
                rest[..m.start()].trim().to_string(),
                Some(rest[m.end()..].trim().trim_end_matches('.').to_string()),
            ),
            None => (rest.trim().to_string(), None),
        };
        Finding {
            text,
            location_hint,
            observed_behavior: observed,
            expected_behavior: expected.filter(|e| !e.is_empty()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("review has no VERDICT line")]
pub struct ReviewUnparseable;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewReport {
    pub verdict: Verdict,
    /// Always empty for a clean verdict.
    pub findings: Vec<Finding>,
    pub raw_text: String,
}

fn verdict_line() -> &'static Regex {
    static STRICT: OnceLock<Regex> = OnceLock::new();
    STRICT.get_or_init(|| Regex::new(r"(?i)^verdict\s*:\s*(clean|bugs)$").unwrap())
}

fn verdict_anywhere() -> &'static Regex {
    static LOOSE: OnceLock<Regex> = OnceLock::new();
    LOOSE.get_or_init(|| Regex::new(r"(?i)verdict\s*\**\s*:\s*\**\s*`?(clean|bugs)\b").unwrap())
}

fn numbered() -> &'static Regex {
    static NUMBERED: OnceLock<Regex> = OnceLock::new();
    NUMBERED.get_or_init(|| Regex::new(r"^\s*\**(\d+)[.)]\**\s+(.+)$").unwrap())
}

fn strip_decoration(line: &str) -> &str {
    line.trim()
        .trim_matches(|c| c == '*' || c == '#' || c == '`' || c == '_')
        .trim()
}

impl ReviewReport {
    pub fn parse(text: &str) -> Result<Self, ReviewUnparseable> {
        let lines: Vec<&str> = text.lines().collect();
        let non_empty: Vec<usize> = (0..lines.len()).filter(|&i| !lines[i].trim().is_empty()).collect();

        let strict = non_empty.last().and_then(|&i| {
            verdict_line()
                .captures(strip_decoration(lines[i]))
                .map(|c| (i, c[1].to_string()))
        });
        let found = strict.or_else(|| {
            non_empty.iter().rev().take(TAIL_LINES).find_map(|&i| {
                verdict_anywhere()
                    .captures_iter(lines[i])
                    .last()
                    .map(|c| (i, c[1].to_string()))
            })
        });
        let (at, word) = found.ok_or(ReviewUnparseable)?;
        let verdict = if word.eq_ignore_ascii_case("clean") {
            Verdict::Clean
        } else {
            Verdict::Bugs
        };

        let findings = match verdict {
            Verdict::Clean => Vec::new(),
            Verdict::Bugs => collect_findings(&lines[..at]),
        };
        Ok(Self {
            verdict,
            findings,
            raw_text: text.to_string(),
        })
    }

    /// The findings as the reviewer wrote them, for fix prompts. Falls back
    /// to the whole review minus the verdict line when nothing was numbered.
    pub fn findings_text(&self) -> String {
        if !self.findings.is_empty() {
            return self
                .findings
                .iter()
                .enumerate()
                .map(|(i, f)| format!("{}. {}", i + 1, f.text))
                .collect::<Vec<_>>()
                .join("\n");
        }
        self.raw_text
            .lines()
            .filter(|l| !verdict_anywhere().is_match(l))
            .collect::<Vec<_>>()
            .join("\n")
            .trim()
            .to_string()
    }
}

fn collect_findings(lines: &[&str]) -> Vec<Finding> {
    let mut texts: Vec<String> = Vec::new();
    let mut open = false;
    for line in lines {
        if let Some(c) = numbered().captures(line) {
            texts.push(c[2].trim().to_string());
            open = true;
        } else if line.trim().is_empty() {
            open = false;
        } else if open && line.starts_with([' ', '\t']) {
            let last = texts.last_mut().expect("open implies a finding");
            last.push(' ');
            last.push_str(line.trim());
        } else {
            open = false;
        }
    }
    texts.iter().map(|t| Finding::parse(t)).collect()
}

/// `parse_review_verdict` under its operational name.
pub fn parse_review_verdict(review_text: &str) -> Result<ReviewReport, ReviewUnparseable> {
    ReviewReport::parse(review_text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pick {
    A,
    B,
}

/// Reads `SELECTED: A|B` from the last few lines of a comparison.
pub fn parse_selection(text: &str) -> Option<Pick> {
    static SELECTED: OnceLock<Regex> = OnceLock::new();
    let re = SELECTED.get_or_init(|| Regex::new(r"(?i)selected\s*\**\s*:\s*\**\s*`?\b([ab])\b").unwrap());
    text.lines()
        .rev()
        .filter(|l| !l.trim().is_empty())
        .take(TAIL_LINES)
        .find_map(|l| re.captures_iter(l).last())
        .map(|c| {
            if c[1].eq_ignore_ascii_case("a") {
                Pick::A
            } else {
                Pick::B
            }
        })
}

/// Splits a combined two-solution review at its `Solution A` / `Solution B`
/// headings. Without both headings each side gets the whole text.
pub fn split_pair_review(text: &str) -> (String, String) {
    static HEADING: OnceLock<Regex> = OnceLock::new();
    let re = HEADING.get_or_init(|| Regex::new(r"(?im)^\s*(?:#+\s*|\*\*)?solution\s+([ab])\b.*$").unwrap());
    let mut a_at = None;
    let mut b_at = None;
    for c in re.captures_iter(text) {
        let start = c.get(0).expect("match").start();
        if c[1].eq_ignore_ascii_case("a") && a_at.is_none() {
            a_at = Some(start);
        } else if c[1].eq_ignore_ascii_case("b") && b_at.is_none() {
            b_at = Some(start);
        }
    }
    match (a_at, b_at) {
        (Some(a), Some(b)) if a < b => (text[a..b].trim().to_string(), text[b..].trim().to_string()),
        (Some(a), Some(b)) => (text[a..].trim().to_string(), text[b..a].trim().to_string()),
        _ => (text.trim().to_string(), text.trim().to_string()),
    }
}
