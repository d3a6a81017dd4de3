//! Turning verbose model output into one compile-clean function definition.
//!
//! Four stages run in order: fence stripping, repeated-signature removal,
//! indentation normalization and trailing-text truncation. After each stage
//! that changed the text, the result is compile-checked in the sandbox and
//! extraction stops at the first state that compiles and defines the entry
//! point exactly once. No stage adds anything but whitespace.

pub mod corpus;
pub(crate) mod scan;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::harness::{compile_check, CompileOutcome};
use crate::sandbox::{Sandbox, SandboxError};

use scan::{indent_of, scan};

/// Upper bound on compile checks spent searching for a clean prefix.
const MAX_PREFIX_PROBES: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractStage {
    FenceStrip,
    RepeatedSignature,
    Indentation,
    TrailingTruncation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub code: String,
    /// Stages that changed the text, in order.
    pub stages_applied: Vec<ExtractStage>,
    pub compile_ok: bool,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExtractError {
    #[error("no extractable code in model output")]
    NoCodeFound { diagnostics: Vec<String> },
    #[error("extracted code does not compile cleanly")]
    CompileFailed(ExtractionResult),
    #[error(transparent)]
    Sandbox(#[from] SandboxError),
}

impl ExtractError {
    /// The code a pipeline should carry forward when extraction fails.
    pub fn best_effort(&self) -> ExtractionResult {
        match self {
            ExtractError::CompileFailed(result) => result.clone(),
            ExtractError::NoCodeFound { diagnostics } => ExtractionResult {
                code: String::new(),
                stages_applied: Vec::new(),
                compile_ok: false,
                diagnostics: diagnostics.clone(),
            },
            ExtractError::Sandbox(e) => ExtractionResult {
                code: String::new(),
                stages_applied: Vec::new(),
                compile_ok: false,
                diagnostics: vec![e.to_string()],
            },
        }
    }
}

fn def_pattern(entry_point: &str, top_level_only: bool) -> Regex {
    let indent = if top_level_only { "" } else { r"[ \t]*" };
    Regex::new(&format!(
        r"^{indent}(?:async[ \t]+)?def[ \t]+{}[ \t]*\(",
        regex::escape(entry_point)
    ))
    .expect("escaped entry point forms a valid pattern")
}

fn any_def() -> &'static Regex {
    static ANY_DEF: OnceLock<Regex> = OnceLock::new();
    ANY_DEF.get_or_init(|| Regex::new(r"(?m)^[ \t]*(?:async[ \t]+)?def[ \t]+[A-Za-z_][A-Za-z0-9_]*[ \t]*\(").unwrap())
}

/// Number of top-level definitions of `entry_point` in `code`.
pub fn count_top_level_defs(code: &str, entry_point: &str) -> usize {
    let pattern = def_pattern(entry_point, true);
    code.lines().filter(|l| pattern.is_match(l)).count()
}

/// Returns the first fenced block tagged as Python (or untagged), plus a
/// note when a choice between several blocks was made. Text without a
/// usable fence comes back unchanged.
pub fn strip_fences(raw: &str) -> (String, Option<String>) {
    let blocks = fenced_blocks(raw);
    if blocks.is_empty() {
        return (raw.to_string(), None);
    }
    let matching: Vec<usize> = blocks
        .iter()
        .enumerate()
        .filter(|(_, (info, _))| matches!(info.as_str(), "" | "python" | "py" | "python3"))
        .map(|(i, _)| i)
        .collect();
    match matching.first() {
        None => (
            raw.to_string(),
            Some(format!(
                "none of {} fenced block(s) is python; text left as is",
                blocks.len()
            )),
        ),
        Some(&first) => {
            let note = (blocks.len() > 1).then(|| format!("selected fenced block {} of {}", first + 1, blocks.len()));
            (blocks[first].1.clone(), note)
        }
    }
}

fn fence_run(line: &str) -> Option<(char, usize)> {
    let t = line.trim_start();
    let c = t.chars().next()?;
    if c != '`' && c != '~' {
        return None;
    }
    let n = t.chars().take_while(|&x| x == c).count();
    (n >= 3).then_some((c, n))
}

fn fenced_blocks(raw: &str) -> Vec<(String, String)> {
    let mut blocks = Vec::new();
    let mut lines = raw.lines();
    while let Some(line) = lines.next() {
        let Some((fence_char, fence_len)) = fence_run(line) else {
            continue;
        };
        let info = line.trim_start()[fence_len..]
            .split_whitespace()
            .next()
            .unwrap_or("")
            .to_ascii_lowercase();
        let closer: String = std::iter::repeat_n(fence_char, 3).collect();
        let mut body: Vec<&str> = Vec::new();
        for inner in lines.by_ref() {
            if fence_run(inner).is_some_and(|(c, _)| c == fence_char) {
                break;
            }
            if let Some(stripped) = inner.trim_end().strip_suffix(closer.as_str()) {
                body.push(stripped);
                break;
            }
            body.push(inner);
        }
        blocks.push((info, body.join("\n")));
    }
    blocks
}

/// Keeps only the last definition of `entry_point` when the model re-emitted
/// the function header (with or without its docstring) ahead of its own
/// definition. Detection is by name, so changed defaults or annotations
/// still count as a repeat.
pub fn remove_repeated_signature(code: &str, entry_point: &str) -> String {
    let pattern = def_pattern(entry_point, false);
    let lines: Vec<&str> = code.lines().collect();
    let headers: Vec<usize> = lines
        .iter()
        .enumerate()
        .filter(|(_, l)| pattern.is_match(l))
        .map(|(i, _)| i)
        .collect();
    if headers.len() < 2 {
        return code.to_string();
    }
    let infos = scan(&lines);
    let keep_from = *headers.last().expect("at least two headers");
    let mut remove = vec![false; lines.len()];
    for &start in &headers[..headers.len() - 1] {
        let header_indent = infos[start].indent;
        let mut end = start + 1;
        // Rest of a multi-line header.
        while end < lines.len() && !infos[end].is_statement_start() && !infos[end].blank {
            end += 1;
        }
        while end < lines.len() && end < keep_from {
            let info = &infos[end];
            if info.is_statement_start() && info.indent <= header_indent {
                break;
            }
            end += 1;
        }
        let end = end.min(keep_from);
        let last = (start..end).rev().find(|&i| !infos[i].blank).unwrap_or(start);
        for flag in &mut remove[start..=last] {
            *flag = true;
        }
    }
    let kept: Vec<&str> = lines
        .iter()
        .zip(&remove)
        .filter(|(_, r)| !**r)
        .map(|(l, _)| *l)
        .collect();
    rejoin(code, kept.join("\n"))
}

/// Expands leading tabs, removes indentation common to every line, and
/// re-anchors statement runs that start deeper than their context allows.
pub fn normalize_indentation(code: &str) -> String {
    let expanded: Vec<String> = code
        .lines()
        .map(|l| {
            let body = l.trim_start_matches([' ', '\t']);
            let lead = &l[..l.len() - body.len()];
            let width: usize = lead.chars().map(|c| if c == '\t' { 4 } else { 1 }).sum();
            format!("{}{}", " ".repeat(width), body).trim_end().to_string()
        })
        .collect();

    let common = expanded
        .iter()
        .filter(|l| !l.is_empty())
        .map(|l| indent_of(l))
        .min()
        .unwrap_or(0);
    let mut lines: Vec<String> = expanded
        .into_iter()
        .map(|l| if l.len() >= common { l[common..].to_string() } else { l })
        .collect();

    // Statement lines indented past the enclosing block without a preceding
    // `:` are shifted left along with everything nested under them.
    while reanchor_once(&mut lines) {}
    rejoin(code, lines.join("\n"))
}

fn reanchor_once(lines: &mut [String]) -> bool {
    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
    let infos = scan(&refs);
    let mut stack: Vec<usize> = vec![0];
    let mut prev_opens_block = false;
    for (i, info) in infos.iter().enumerate() {
        if info.is_statement_start() {
            let top = *stack.last().expect("stack never empty");
            if info.indent > top && prev_opens_block {
                stack.push(info.indent);
            } else if info.indent > top {
                let shift = info.indent - top;
                let anchor = info.indent;
                for j in i..lines.len() {
                    if j > i && infos[j].is_statement_start() && infos[j].indent < anchor {
                        break;
                    }
                    let strip = indent_of(&lines[j]).min(shift);
                    lines[j] = lines[j][strip..].to_string();
                }
                return true;
            } else {
                while stack.len() > 1 && *stack.last().unwrap() > info.indent {
                    stack.pop();
                }
            }
        }
        if !info.blank {
            prev_opens_block = info.opens_block;
        }
    }
    false
}

/// Preserves whether the input ended with a newline.
fn rejoin(original: &str, mut body: String) -> String {
    if original.ends_with('\n') && !body.is_empty() {
        body.push('\n');
    }
    body
}

fn code_start() -> &'static Regex {
    static START: OnceLock<Regex> = OnceLock::new();
    START.get_or_init(|| {
        Regex::new(r"^(?:import[ \t]|from[ \t].*[ \t]import[ \t]|(?:async[ \t]+)?def[ \t]|class[ \t]|@)").unwrap()
    })
}

/// Drops prose after the definition: the longest prefix of lines that
/// compiles and defines the entry point exactly once wins. Only prefixes
/// ending right before a top-level line are tried. If no prefix works,
/// leading prose is skipped too. Returns the input when nothing compiles.
pub async fn truncate_trailing(sandbox: &dyn Sandbox, code: &str, entry_point: &str) -> Result<String, SandboxError> {
    let lines: Vec<&str> = code.lines().collect();
    let infos = scan(&lines);
    let starts: Vec<usize> = std::iter::once(0)
        .chain(
            lines
                .iter()
                .enumerate()
                .filter(|(i, l)| {
                    *i > 0 && infos[*i].is_statement_start() && infos[*i].indent == 0 && code_start().is_match(l)
                })
                .map(|(i, _)| i)
                .take(3),
        )
        .collect();
    let mut probes = 0;
    for &start in &starts {
        let mut ends: Vec<usize> = (start..lines.len())
            .filter(|&j| {
                if infos[j].blank {
                    return false;
                }
                let next = (j + 1..lines.len()).find(|&k| !infos[k].blank);
                match next {
                    None => true,
                    Some(k) => infos[k].is_statement_start() && infos[k].indent == 0,
                }
            })
            .collect();
        ends.reverse();
        for end in ends {
            let candidate = lines[start..=end].join("\n");
            if count_top_level_defs(&candidate, entry_point) != 1 {
                continue;
            }
            if probes == MAX_PREFIX_PROBES {
                return Ok(code.to_string());
            }
            probes += 1;
            if compile_check(sandbox, &candidate).await?.is_ok() {
                return Ok(candidate);
            }
        }
    }
    Ok(code.to_string())
}

/// Runs the stage pipeline on `raw` for the function named `entry_point`.
pub async fn extract(sandbox: &dyn Sandbox, raw: &str, entry_point: &str) -> Result<ExtractionResult, ExtractError> {
    if raw.trim().is_empty() {
        return Err(ExtractError::NoCodeFound {
            diagnostics: vec!["model output is empty".into()],
        });
    }
    let mut state = raw.to_string();
    let mut stages_applied = Vec::new();
    let mut diagnostics = Vec::new();
    let mut last_checked: Option<String> = None;

    for stage in [
        ExtractStage::FenceStrip,
        ExtractStage::RepeatedSignature,
        ExtractStage::Indentation,
        ExtractStage::TrailingTruncation,
    ] {
        let next = match stage {
            ExtractStage::FenceStrip => {
                let (text, note) = strip_fences(&state);
                diagnostics.extend(note);
                text
            }
            ExtractStage::RepeatedSignature => remove_repeated_signature(&state, entry_point),
            ExtractStage::Indentation => normalize_indentation(&state),
            ExtractStage::TrailingTruncation => truncate_trailing(sandbox, &state, entry_point).await?,
        };
        if next != state {
            stages_applied.push(stage);
            state = next;
        }
        if last_checked.as_deref() == Some(state.as_str()) {
            continue;
        }
        let verdict = check(sandbox, &state, entry_point).await?;
        last_checked = Some(state.clone());
        match verdict {
            Ok(()) => {
                return Ok(ExtractionResult {
                    code: state,
                    stages_applied,
                    compile_ok: true,
                    diagnostics,
                })
            }
            Err(problems) => {
                if stage == ExtractStage::TrailingTruncation {
                    diagnostics.extend(problems);
                }
            }
        }
    }

    if !any_def().is_match(&state) {
        diagnostics.push("no function definition found".into());
        return Err(ExtractError::NoCodeFound { diagnostics });
    }
    Err(ExtractError::CompileFailed(ExtractionResult {
        code: state,
        stages_applied,
        compile_ok: false,
        diagnostics,
    }))
}

async fn check(sandbox: &dyn Sandbox, code: &str, entry_point: &str) -> Result<Result<(), Vec<String>>, SandboxError> {
    let defs = count_top_level_defs(code, entry_point);
    if defs != 1 {
        return Ok(Err(vec![format!(
            "expected exactly one top-level definition of `{entry_point}`, found {defs}"
        )]));
    }
    Ok(match compile_check(sandbox, code).await? {
        CompileOutcome::Ok => Ok(()),
        CompileOutcome::Diagnostics(d) => Err(d),
    })
}
