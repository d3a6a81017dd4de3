//! `{{name}}` placeholder substitution.

use std::collections::BTreeSet;

/// Placeholder names used in `template`, sorted and deduplicated.
pub fn placeholders(template: &str) -> Result<BTreeSet<String>, String> {
    let mut names = BTreeSet::new();
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let end = after
            .find("}}")
            .ok_or_else(|| "unterminated `{{` in template".to_string())?;
        let name = after[..end].trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(format!("invalid placeholder `{{{{{}}}}}`", &after[..end]));
        }
        names.insert(name.to_string());
        rest = &after[end + 2..];
    }
    Ok(names)
}

/// Single-pass substitution: inserted values are never re-scanned, so a
/// problem prompt that happens to contain `{{x}}` is embedded verbatim.
///
/// The template must already have passed [`placeholders`]; unknown names
/// render as nothing.
pub fn render(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            out.push_str(&rest[start..]);
            return out;
        };
        let name = after[..end].trim();
        match values.iter().find(|(k, _)| *k == name) {
            Some((_, v)) => out.push_str(v),
            None => debug_assert!(false, "placeholder `{name}` has no value"),
        }
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    out
}
