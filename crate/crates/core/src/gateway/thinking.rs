//! Removal of reasoning blocks that thinking-mode models emit ahead of their answer.

use serde::{Deserialize, Serialize};

/// Open/close delimiters of a reasoning block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThinkingMarkers {
    pub open: String,
    pub close: String,
}

impl Default for ThinkingMarkers {
    fn default() -> Self {
        Self {
            open: "<think>".to_string(),
            close: "</think>".to_string(),
        }
    }
}

/// A leading reasoning block was opened but never closed.
///
/// `kept` is the text that survives the resolution rule (everything before the
/// open marker), which is always whitespace for a leading block.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("reasoning block opened with {open:?} was never closed")]
pub struct UnclosedThinkingBlock {
    pub open: String,
    pub kept: String,
}

/// Strips every leading reasoning block from `raw` using the default markers.
pub fn strip_thinking(raw: &str) -> Result<String, UnclosedThinkingBlock> {
    strip_thinking_with(raw, &ThinkingMarkers::default())
}

/// Strips every leading reasoning block delimited by `markers`.
///
/// Blocks are only recognised at the start of the text (after whitespace);
/// an open marker appearing mid-answer is ordinary text. When at least one
/// block is removed the whitespace separating it from the answer goes with it.
pub fn strip_thinking_with(raw: &str, markers: &ThinkingMarkers) -> Result<String, UnclosedThinkingBlock> {
    let mut rest = raw;
    let mut removed_any = false;
    loop {
        let trimmed = rest.trim_start();
        if !trimmed.starts_with(markers.open.as_str()) {
            break;
        }
        let after_open = &trimmed[markers.open.len()..];
        match after_open.find(markers.close.as_str()) {
            Some(idx) => {
                rest = &after_open[idx + markers.close.len()..];
                removed_any = true;
            }
            None => {
                let kept_len = rest.len() - trimmed.len();
                return Err(UnclosedThinkingBlock {
                    open: markers.open.clone(),
                    kept: rest[..kept_len].to_string(),
                });
            }
        }
    }
    if removed_any {
        Ok(rest.trim_start().to_string())
    } else {
        Ok(raw.to_string())
    }
}
