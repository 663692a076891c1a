//! Sentence segmentation through the splitter persona, with a rule-based
//! fallback when the model's split does not reconstruct the section.

use serde_json::Value;

use super::{normalize_ws, Section, SegmentedSection};
use crate::gateway::{extract_json_array, extract_json_object, Gateway, GatewayError, RequestTags};
use crate::persona::{render_prompt, PersonaError, PersonaSpec};

#[derive(Debug, thiserror::Error)]
pub enum SegmentError {
    #[error("section {0} has no text")]
    EmptySection(String),
    #[error("segmentation of {section_id} failed: {source}")]
    SegmentationFailed { section_id: String, source: GatewayError },
    #[error(transparent)]
    Persona(#[from] PersonaError),
}

/// Splits `section` into indexed sentences.
///
/// The model is asked at most twice (tags `iteration` 1 and 2). A reply is
/// accepted only if it parses to a list of strings whose whitespace-
/// normalized concatenation equals the normalized section text. After two
/// rejected replies the rule-based [`fallback_split`] is used and the result
/// is flagged with `fallback_segmentation`.
pub fn segment_sentences(
    section: &Section,
    gateway: &Gateway,
    splitter: &PersonaSpec,
) -> Result<SegmentedSection, SegmentError> {
    let text = normalize_ws(&section.text);
    if text.is_empty() {
        return Err(SegmentError::EmptySection(section.section_id.clone()));
    }
    let prompt = render_prompt(splitter, &section.text)?;
    for attempt in 1..=2 {
        let tags = RequestTags::new(&splitter.name).iteration(attempt).subject(&section.section_id);
        let request = splitter.request(vec![splitter.opening_message(prompt.clone())], tags);
        let reply = gateway.complete(&request).map_err(|source| SegmentError::SegmentationFailed {
            section_id: section.section_id.clone(),
            source,
        })?;
        match parse_sentences(&reply.content) {
            Some(sentences) if normalize_ws(&sentences.join(" ")) == text => {
                return Ok(build(section, sentences, false));
            }
            Some(_) => tracing::warn!(section = %section.section_id, attempt, "split is not lossless"),
            None => tracing::warn!(section = %section.section_id, attempt, "split reply unparsable"),
        }
    }
    tracing::warn!(section = %section.section_id, "using rule-based sentence splitter");
    Ok(build(section, fallback_split(&text), true))
}

fn build(section: &Section, sentences: Vec<String>, fallback: bool) -> SegmentedSection {
    let mut seg = SegmentedSection::new(&section.section_id, &section.article_id, section.kind, sentences);
    seg.fallback_segmentation = fallback;
    seg
}

/// Accepts either a bare JSON list of strings or an object with a
/// `sentences` list. Empty strings are dropped; the rest are trimmed.
fn parse_sentences(reply: &str) -> Option<Vec<String>> {
    let list = match extract_json_array(reply) {
        Ok(v @ Value::Array(_)) => v,
        _ => extract_json_object(reply).ok()?.get("sentences")?.clone(),
    };
    let sentences: Vec<String> = list
        .as_array()?
        .iter()
        .map(|v| v.as_str().map(normalize_ws))
        .collect::<Option<Vec<_>>>()?
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect();
    (!sentences.is_empty()).then_some(sentences)
}

/// Titles and other short forms that are followed by a capitalized word
/// without ending the sentence.
const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "gen", "gov", "sen", "rep", "rev", "lt", "col", "capt", "mt",
    "ft", "no", "vol", "fig", "inc", "ltd", "co", "corp", "vs", "etc", "approx", "jan", "feb", "mar", "apr", "jun",
    "jul", "aug", "sep", "sept", "oct", "nov", "dec",
];

fn token_start(chars: &[(usize, char)], end: usize) -> usize {
    let mut k = end;
    while k > 0 && !chars[k - 1].1.is_whitespace() {
        k -= 1;
    }
    while k < end && OPENERS.contains(&chars[k].1) {
        k += 1;
    }
    chars[k].0
}

/// `token` ends with the period under test. Dotted initialisms ("U.S.",
/// "J.") and listed short forms do not end a sentence.
fn is_abbreviation(token: &str) -> bool {
    let word = &token[..token.len() - 1];
    let initialism = token.len() >= 2
        && token.as_bytes().chunks(2).all(|c| c.len() == 2 && c[0].is_ascii_alphabetic() && c[1] == b'.');
    initialism || ABBREVIATIONS.contains(&word.to_ascii_lowercase().as_str())
}

const CLOSERS: &[char] = &['"', '\'', '\u{201d}', '\u{2019}', ')', ']'];
const OPENERS: &[char] = &['"', '\'', '\u{201c}', '\u{2018}', '(', '['];

/// Splits after `.`, `!` or `?` (plus any closing quotes or brackets) when
/// followed by whitespace and then an uppercase letter, optionally behind
/// an opening quote or bracket. A period that ends an initialism or a
/// listed abbreviation is not a boundary. Whitespace inside sentences is
/// normalized.
pub fn fallback_split(text: &str) -> Vec<String> {
    let text = normalize_ws(text);
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i].1, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && CLOSERS.contains(&chars[j].1) {
                j += 1;
            }
            let starts_sentence = |k: usize| {
                let k = chars[k..].iter().position(|&(_, c)| !OPENERS.contains(&c)).map(|p| p + k);
                k.is_some_and(|k| chars[k].1.is_uppercase())
            };
            let boundary = j + 1 < chars.len()
                && chars[j].1 == ' '
                && starts_sentence(j + 1)
                && !(chars[i].1 == '.' && is_abbreviation(&text[token_start(&chars, i)..=chars[i].0]));
            if boundary {
                out.push(text[start..chars[j].0].to_string());
                start = chars[j + 1].0;
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    if start < text.len() {
        out.push(text[start..].to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SectionKind;
    use crate::gateway::mock::{MockBackend, MockRule};
    use crate::gateway::{RetryPolicy, VirtualClock};
    use crate::persona::builtin_personas;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn section(text: &str) -> Section {
        Section {
            section_id: "s".into(),
            article_id: "a".into(),
            kind: SectionKind::Summary,
            heading: None,
            text: text.into(),
        }
    }

    fn gateway(rules: Vec<MockRule>) -> Gateway {
        let policy = RetryPolicy { retry_limit: 1, jitter: 0.0, ..RetryPolicy::default() };
        Gateway::new(Arc::new(MockBackend::new(rules)), policy, 10_000)
            .with_clock(Arc::new(VirtualClock::default()))
    }

    #[test]
    fn single_sentence_identity() {
        let text = "Mary planted a tree in her backyard because she loves nature.";
        let gw = gateway(vec![MockRule::reply("splitter", None, format!("[\"{text}\"]"))]);
        let splitter = builtin_personas().unwrap().splitter().unwrap().clone();
        let seg = segment_sentences(&section(text), &gw, &splitter).unwrap();
        assert_eq!(seg.sentences.len(), 1);
        assert_eq!(seg.sentences[0].index, 0);
        assert_eq!(seg.sentences[0].sentence, text);
        assert!(!seg.fallback_segmentation);
    }

    #[test]
    fn non_lossless_reply_falls_back_after_reask() {
        let gw = gateway(vec![MockRule::reply("splitter", None, "[\"Something else entirely.\"]")]);
        let splitter = builtin_personas().unwrap().splitter().unwrap().clone();
        let seg = segment_sentences(&section("One here. Two there."), &gw, &splitter).unwrap();
        assert!(seg.fallback_segmentation);
        assert_eq!(seg.text(), "One here. Two there.");
        assert_eq!(seg.len(), 2);
        assert_eq!(gw.call_count(), 2);
    }

    #[test]
    fn reask_can_recover() {
        let gw = gateway(vec![
            MockRule::reply("splitter", Some(1), "Sorry, I can't."),
            MockRule::reply("splitter", Some(2), "{\"sentences\": [\"One here.\", \"Two there.\"]}"),
        ]);
        let splitter = builtin_personas().unwrap().splitter().unwrap().clone();
        let seg = segment_sentences(&section("One here.  Two\nthere."), &gw, &splitter).unwrap();
        assert!(!seg.fallback_segmentation);
        assert_eq!(seg.len(), 2);
    }

    #[test]
    fn gateway_failure_is_segmentation_failed() {
        let gw = gateway(vec![]);
        let splitter = builtin_personas().unwrap().splitter().unwrap().clone();
        assert!(matches!(
            segment_sentences(&section("Text."), &gw, &splitter),
            Err(SegmentError::SegmentationFailed { .. })
        ));
        assert!(matches!(
            segment_sentences(&section("  "), &gw, &splitter),
            Err(SegmentError::EmptySection(_))
        ));
    }

    #[test]
    fn fallback_rules() {
        assert_eq!(fallback_split("Is it? Yes! \"Quoted.\" Then more."), [
            "Is it?",
            "Yes!",
            "\"Quoted.\"",
            "Then more."
        ]);
        assert_eq!(fallback_split("Passed by the U.S. Senate in 1970. It held."), ["Passed by the U.S. Senate in 1970.", "It held."]);
        assert_eq!(fallback_split("Dr. Kim met J. R. Doe. (Mr. Lee) left."), ["Dr. Kim met J. R. Doe.", "(Mr. Lee) left."]);
        assert_eq!(fallback_split("Version 2.0 shipped. it was fine."), ["Version 2.0 shipped. it was fine."]);
        assert_eq!(fallback_split("No terminal punctuation"), ["No terminal punctuation"]);
    }

    proptest! {
        #[test]
        fn fallback_is_lossless_and_non_empty(words in proptest::collection::vec("[A-Za-z]{1,8}[.!?]?", 1..40)) {
            let text = words.join(" ");
            let parts = fallback_split(&text);
            prop_assert!(parts.iter().all(|p| !p.trim().is_empty()));
            prop_assert_eq!(normalize_ws(&parts.join(" ")), normalize_ws(&text));
            let seg = SegmentedSection::new("s", "a", SectionKind::Body, parts);
            prop_assert!(seg.validate().is_ok());
        }
    }
}
