//! Candidate QA pairs, reviewer verdicts and the machine-checkable rules.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::SegmentedSection;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateQa {
    pub question: String,
    pub answer: String,
    pub required_sentence_indices: Vec<usize>,
}

impl CandidateQa {
    pub fn new(question: impl Into<String>, answer: impl Into<String>, indices: impl Into<Vec<usize>>) -> Self {
        Self { question: question.into(), answer: answer.into(), required_sentence_indices: indices.into() }
    }

    /// Reads the generator's reply object. Extra fields are ignored.
    pub fn from_json(value: &Value) -> Option<Self> {
        let obj = value.as_object()?;
        let indices = obj
            .get("required_sentence_indices")?
            .as_array()?
            .iter()
            .map(|v| v.as_u64().map(|n| n as usize))
            .collect::<Option<Vec<_>>>()?;
        Some(Self {
            question: obj.get("question")?.as_str()?.to_string(),
            answer: obj.get("answer")?.as_str()?.to_string(),
            required_sentence_indices: indices,
        })
    }

    /// `{"question": ..., "answer": ..., "required_sentence_indices": [..]}`
    /// with the spacing used in the prompt examples.
    pub fn to_prompt_json(&self) -> String {
        format!(
            "{{\"question\": {}, \"answer\": {}, \"required_sentence_indices\": {}}}",
            json_str(&self.question),
            json_str(&self.answer),
            index_list(&self.required_sentence_indices)
        )
    }
}

pub(crate) fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

pub(crate) fn index_list(indices: &[usize]) -> String {
    let items: Vec<String> = indices.iter().map(usize::to_string).collect();
    format!("[{}]", items.join(", "))
}

/// A structural rule broken by a candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum Violation {
    EmptyQuestion,
    EmptyAnswer,
    IndexOutOfRange { index: usize, sentence_count: usize },
    DuplicateIndex { index: usize },
    NotAscending,
    IndexCount { count: usize },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::EmptyQuestion => "empty_question",
            Violation::EmptyAnswer => "empty_answer",
            Violation::IndexOutOfRange { .. } => "index_out_of_range",
            Violation::DuplicateIndex { .. } => "duplicate_index",
            Violation::NotAscending => "not_ascending",
            Violation::IndexCount { .. } => "index_count",
        }
    }

    pub fn message(&self) -> String {
        match self {
            Violation::EmptyQuestion => "question must not be empty".into(),
            Violation::EmptyAnswer => "answer must not be empty".into(),
            Violation::IndexOutOfRange { index, sentence_count } => format!(
                "index out of range: {index} (segmented_text has indices 0 to {})",
                sentence_count.saturating_sub(1)
            ),
            Violation::DuplicateIndex { index } => format!("index {index} is listed more than once"),
            Violation::NotAscending => "required_sentence_indices must be in ascending order".into(),
            Violation::IndexCount { count } => {
                format!("index count must be 2 or 3 (got {count})")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn codes(&self) -> Vec<&'static str> {
        self.violations.iter().map(Violation::code).collect()
    }

    /// Feedback for the generator when a candidate breaks the format
    /// rules; sent in place of reviewer feedback.
    pub fn feedback(&self) -> String {
        let problems: Vec<String> = self.violations.iter().map(Violation::message).collect();
        format!(
            "Your response does not follow the rules: {}. Please revise your question, answer, and required_sentence_indices.",
            problems.join("; ")
        )
    }
}

/// Checks every structural rule and reports all that fail.
pub fn validate_candidate(candidate: &CandidateQa, segmented: &SegmentedSection) -> ValidationReport {
    let mut violations = Vec::new();
    if candidate.question.trim().is_empty() {
        violations.push(Violation::EmptyQuestion);
    }
    if candidate.answer.trim().is_empty() {
        violations.push(Violation::EmptyAnswer);
    }
    let indices = &candidate.required_sentence_indices;
    let n = segmented.len();
    for &index in indices.iter().filter(|&&i| i >= n) {
        violations.push(Violation::IndexOutOfRange { index, sentence_count: n });
    }
    let mut seen = std::collections::BTreeSet::new();
    for &index in indices {
        if !seen.insert(index) {
            violations.push(Violation::DuplicateIndex { index });
        }
    }
    if indices.windows(2).any(|w| w[0] > w[1]) {
        violations.push(Violation::NotAscending);
    }
    if !(2..=3).contains(&indices.len()) {
        violations.push(Violation::IndexCount { count: indices.len() });
    }
    ValidationReport { violations }
}

/// One reviewer's reasoned judgement of a candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewVerdict {
    pub persona_name: String,
    pub reason: String,
    pub is_quality: bool,
}

impl ReviewVerdict {
    /// Reads `{"reason": <non-empty string>, "is_quality": <bool>}`.
    pub fn from_json(persona_name: &str, value: &Value) -> Option<Self> {
        let reason = value.get("reason")?.as_str()?.trim();
        let is_quality = value.get("is_quality")?.as_bool()?;
        if reason.is_empty() {
            return None;
        }
        Some(Self { persona_name: persona_name.to_string(), reason: reason.to_string(), is_quality })
    }
}
