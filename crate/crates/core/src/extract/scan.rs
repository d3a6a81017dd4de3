//! Line-level lexical facts about Python source: enough to tell logical
//! line starts from continuation lines and string bodies.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineInfo {
    /// The line begins inside a triple-quoted string.
    pub starts_in_string: bool,
    /// Open brackets carried over from earlier lines.
    pub depth_at_start: i32,
    /// The line's code (outside strings/comments) ends with `:` at depth 0.
    pub opens_block: bool,
    pub blank: bool,
    pub indent: usize,
}

impl LineInfo {
    /// A line that starts a new logical line (statement).
    pub fn is_statement_start(&self) -> bool {
        !self.blank && !self.starts_in_string && self.depth_at_start == 0
    }
}

pub fn indent_of(line: &str) -> usize {
    line.len() - line.trim_start_matches([' ', '\t']).len()
}

pub fn scan(lines: &[&str]) -> Vec<LineInfo> {
    let mut infos = Vec::with_capacity(lines.len());
    let mut triple: Option<&'static str> = None;
    let mut depth: i32 = 0;
    for line in lines {
        let starts_in_string = triple.is_some();
        let depth_at_start = depth;
        let blank = line.trim().is_empty();
        let mut last_code_char: Option<char> = None;
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            if let Some(delim) = triple {
                if starts_with(&chars, i, delim) {
                    triple = None;
                    i += 3;
                    last_code_char = Some('"');
                } else {
                    if chars[i] == '\\' {
                        i += 1;
                    }
                    i += 1;
                }
                continue;
            }
            let c = chars[i];
            match c {
                '#' => break,
                '"' | '\'' => {
                    let delim = if c == '"' { "\"\"\"" } else { "'''" };
                    if starts_with(&chars, i, delim) {
                        triple = Some(delim);
                        i += 3;
                        continue;
                    }
                    i += 1;
                    while i < chars.len() && chars[i] != c {
                        if chars[i] == '\\' {
                            i += 1;
                        }
                        i += 1;
                    }
                    last_code_char = Some(c);
                }
                '(' | '[' | '{' => {
                    depth += 1;
                    last_code_char = Some(c);
                }
                ')' | ']' | '}' => {
                    depth = (depth - 1).max(0);
                    last_code_char = Some(c);
                }
                c if c.is_whitespace() => {}
                c => last_code_char = Some(c),
            }
            i += 1;
        }
        let opens_block = triple.is_none() && depth == 0 && last_code_char == Some(':');
        infos.push(LineInfo {
            starts_in_string,
            depth_at_start,
            opens_block,
            blank,
            indent: indent_of(line),
        });
    }
    infos
}

fn starts_with(chars: &[char], i: usize, pat: &str) -> bool {
    pat.chars().enumerate().all(|(k, p)| chars.get(i + k) == Some(&p))
}
