//! Just enough Markdown handling to turn a section into plain prose.

use std::sync::LazyLock;

use regex::Regex;

static LEVEL2: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^##[ \t]+(.*?)[ \t#]*$").unwrap());
static IMAGE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"!\[[^\]]*\]\([^)]*\)").unwrap());
static LINK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[([^\]]*)\]\([^)]*\)").unwrap());
static REF_LINK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[([^\]]+)\]\[[^\]]*\]").unwrap());
static EMPHASIS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\*\*|__|`").unwrap());
static LIST_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*(?:[-*+]|\d+[.)])\s+").unwrap());
static HTML_COMMENT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<!--.*?-->").unwrap());

/// Title of an ATX level-2 heading line (`## Title`), if `line` is one.
pub(crate) fn level2_heading(line: &str) -> Option<String> {
    LEVEL2.captures(line.trim_end()).map(|c| c[1].trim().to_string())
}

/// Converts section lines to plain text. Headings, fences and horizontal
/// rules are dropped; links and emphasis are unwrapped. Lines within a
/// paragraph are joined with spaces and paragraphs with a blank line.
pub fn plain_text(lines: &[&str]) -> String {
    let mut paragraphs: Vec<String> = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let flush = |current: &mut Vec<String>, paragraphs: &mut Vec<String>| {
        if !current.is_empty() {
            paragraphs.push(current.join(" "));
            current.clear();
        }
    };
    for raw in lines {
        let line = raw.trim();
        let is_rule = line.len() >= 3 && line.chars().all(|c| matches!(c, '-' | '*' | '_' | ' '));
        if line.is_empty() || line.starts_with('#') || line.starts_with("```") || is_rule {
            flush(&mut current, &mut paragraphs);
            continue;
        }
        let line = line.trim_start_matches('>').trim_start();
        let line = LIST_MARKER.replace(line, "");
        let line = IMAGE.replace_all(&line, "");
        let line = LINK.replace_all(&line, "$1");
        let line = REF_LINK.replace_all(&line, "$1");
        let line = EMPHASIS.replace_all(&line, "");
        let line = line.trim();
        if !line.is_empty() {
            current.push(line.to_string());
        }
    }
    flush(&mut current, &mut paragraphs);
    let text = paragraphs.join("\n\n");
    HTML_COMMENT.replace_all(&text, "").trim().to_string()
}
