//! Recovery of a single JSON value from free-form model replies.
//!
//! Models wrap their JSON in prose or code fences often enough that the
//! reply cannot be handed straight to a parser. The scanner below finds the
//! first balanced `{...}` (or `[...]`) span, respecting string literals and
//! escapes, and then parses that span strictly.

use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JsonExtractError {
    #[error("no balanced JSON value found in reply")]
    NoJsonFound,
    /// `position` is the byte offset into the original text.
    #[error("malformed JSON at byte {position}: {message}")]
    Parse { position: usize, message: String },
}

/// Returns the first balanced JSON object in `text`.
pub fn extract_json_object(text: &str) -> Result<Value, JsonExtractError> {
    extract_balanced(text, b'{', b'}')
}

/// Returns the first balanced JSON array in `text`.
pub fn extract_json_array(text: &str) -> Result<Value, JsonExtractError> {
    extract_balanced(text, b'[', b']')
}

fn extract_balanced(text: &str, open: u8, close: u8) -> Result<Value, JsonExtractError> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(rel) = bytes[from..].iter().position(|&b| b == open) {
        let start = from + rel;
        if let Some(end) = balanced_end(bytes, start, open, close) {
            let span = &text[start..=end];
            return serde_json::from_str(span).map_err(|e| JsonExtractError::Parse {
                position: start + offset_of(span, e.line(), e.column()),
                message: e.to_string(),
            });
        }
        from = start + 1;
    }
    Err(JsonExtractError::NoJsonFound)
}

/// Index of the byte closing the value opened at `start`, if any.
fn balanced_end(bytes: &[u8], start: usize, open: u8, close: u8) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            _ if b == open => depth += 1,
            _ if b == close => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// serde_json reports 1-based line and column; convert to a byte offset.
fn offset_of(span: &str, line: usize, column: usize) -> usize {
    let line_start: usize = span
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (line_start + column.saturating_sub(1)).min(span.len())
}
