//! Examples that are visible in a problem prompt.

use serde::{Deserialize, Serialize};

use crate::sandbox::{TestKind, WireTest};

/// One example taken from the prompt text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisibleTest {
    pub kind: TestKind,
    pub call_expression: String,
    pub expected_repr: String,
    /// 1-based inclusive line range in the prompt.
    pub source_span: (usize, usize),
}

impl VisibleTest {
    pub fn to_wire(&self) -> WireTest {
        WireTest {
            kind: self.kind,
            call: self.call_expression.clone(),
            expected: self.expected_repr.clone(),
        }
    }
}

fn is_docstring_delimiter(line: &str) -> bool {
    line.starts_with("\"\"\"") || line.starts_with("'''") || line.ends_with("\"\"\"") || line.ends_with("'''")
}

/// Collects doctest pairs (`>>> call` followed by expected output) and bare
/// `assert` lines from a prompt. Never fails; a prompt without examples
/// yields an empty list.
pub fn parse_visible_tests(prompt: &str) -> Vec<VisibleTest> {
    let lines: Vec<&str> = prompt.lines().collect();
    let mut tests = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i].trim();
        if let Some(call) = doctest_source(line) {
            let start = i;
            let mut call = call.to_string();
            i += 1;
            while i < lines.len() {
                let next = lines[i].trim();
                match next.strip_prefix("...") {
                    Some(rest) if next == "..." || next.starts_with("... ") => {
                        call.push('\n');
                        call.push_str(rest.strip_prefix(' ').unwrap_or(rest));
                        i += 1;
                    }
                    _ => break,
                }
            }
            let mut expected = Vec::new();
            while i < lines.len() {
                let next = lines[i].trim();
                if next.is_empty() || doctest_source(next).is_some() {
                    break;
                }
                if is_docstring_delimiter(next) {
                    let body = next.trim_end_matches("\"\"\"").trim_end_matches("'''").trim_end();
                    if !body.is_empty() && !next.starts_with("\"\"\"") && !next.starts_with("'''") {
                        expected.push(body.to_string());
                        i += 1;
                    }
                    break;
                }
                expected.push(next.to_string());
                i += 1;
            }
            if !expected.is_empty() && !call.trim().is_empty() {
                tests.push(VisibleTest {
                    kind: TestKind::Doctest,
                    call_expression: call.trim().to_string(),
                    expected_repr: expected.join("\n"),
                    source_span: (start + 1, i),
                });
            }
            continue;
        }
        if let Some(expr) = line.strip_prefix("assert ") {
            let expr = expr.trim();
            let test = match split_top_level_eq(expr) {
                Some((lhs, rhs)) => VisibleTest {
                    kind: TestKind::Equals,
                    call_expression: lhs.trim().to_string(),
                    expected_repr: rhs.trim().to_string(),
                    source_span: (i + 1, i + 1),
                },
                None => VisibleTest {
                    kind: TestKind::Truthy,
                    call_expression: expr.to_string(),
                    expected_repr: "True".to_string(),
                    source_span: (i + 1, i + 1),
                },
            };
            tests.push(test);
        }
        i += 1;
    }
    tests
}

fn doctest_source(line: &str) -> Option<&str> {
    if line == ">>>" {
        Some("")
    } else {
        line.strip_prefix(">>> ")
    }
}

/// Splits `a == b` at the first `==` outside brackets and string literals.
fn split_top_level_eq(expr: &str) -> Option<(&str, &str)> {
    let bytes = expr.as_bytes();
    let mut depth = 0i32;
    let mut quote: Option<u8> = None;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if let Some(q) = quote {
            if b == b'\\' {
                i += 2;
                continue;
            }
            if b == q {
                quote = None;
            }
        } else {
            match b {
                b'\'' | b'"' => quote = Some(b),
                b'(' | b'[' | b'{' => depth += 1,
                b')' | b']' | b'}' => depth -= 1,
                b'=' if depth == 0 && bytes.get(i + 1) == Some(&b'=') => {
                    let prev = i.checked_sub(1).map(|p| bytes[p]);
                    if !matches!(prev, Some(b'!' | b'<' | b'>' | b'=')) {
                        return Some((&expr[..i], &expr[i + 2..]));
                    }
                    i += 1;
                }
                _ => {}
            }
        }
        i += 1;
    }
    None
}
