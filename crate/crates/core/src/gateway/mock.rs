//! Scripted backend for offline runs and tests.
//!
//! A script is a JSON Lines file of rules:
//!
//! ```text
//! {"match": {"persona": "generator", "iteration": 1}, "reply": "{...}"}
//! {"match": {"persona": "required_sentence"}, "reply": "{...}"}
//! ```
//!
//! The first rule whose `match` fields all equal the request's tags wins;
//! absent fields match anything. A request that matches nothing is a
//! [`BackendError::MockMiss`]. Optional rule fields:
//!
//! - `subject`: inside `match`, compared with the request's subject tag.
//! - `fail_attempts`: the first N attempts of a matching call fail with a
//!   transient error before the reply is delivered.
//! - `error`: `"transient"` or `"fatal"`; every attempt fails.
//! - `delay_ms`: simulated backend latency.
//!
//! Replies depend only on the script, the request tags and the attempt
//! number, so identical calls always get identical answers.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, RequestTags};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub persona: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

impl RuleMatch {
    fn accepts(&self, tags: &RequestTags) -> bool {
        self.persona.as_ref().is_none_or(|p| *p == tags.persona)
            && self.iteration.is_none_or(|i| Some(i) == tags.iteration)
            && self.subject.as_ref().is_none_or(|s| Some(s) == tags.subject.as_ref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptedError {
    Transient,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(rename = "match")]
    pub matcher: RuleMatch,
    #[serde(default)]
    pub reply: String,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub fail_attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ScriptedError>,
    #[serde(default, skip_serializing_if = "is_zero_u64")]
    pub delay_ms: u64,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

fn is_zero_u64(n: &u64) -> bool {
    *n == 0
}

impl MockRule {
    pub fn reply(persona: &str, iteration: Option<u32>, reply: impl Into<String>) -> Self {
        Self {
            matcher: RuleMatch { persona: Some(persona.to_string()), iteration, subject: None },
            reply: reply.into(),
            fail_attempts: 0,
            error: None,
            delay_ms: 0,
        }
    }

    pub fn for_subject(mut self, subject: impl Into<String>) -> Self {
        self.matcher.subject = Some(subject.into());
        self
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MockScriptError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    id: String,
    rules: Vec<MockRule>,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Self {
        Self { id: "mock".into(), rules }
    }

    pub fn from_script(path: &Path) -> Result<Self, MockScriptError> {
        let text = std::fs::read_to_string(path)?;
        let mut backend = Self::parse(&text)?;
        backend.id = format!("mock:{}", path.file_name().unwrap_or_default().to_string_lossy());
        Ok(backend)
    }

    pub fn parse(script: &str) -> Result<Self, MockScriptError> {
        let rules = script
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| {
                serde_json::from_str(l).map_err(|source| MockScriptError::Parse { line: n + 1, source })
            })
            .collect::<Result<Vec<MockRule>, _>>()?;
        Ok(Self::new(rules))
    }

    pub fn rules(&self) -> &[MockRule] {
        &self.rules
    }

    /// Serializes the rules back into script form.
    pub fn to_script(&self) -> String {
        self.rules
            .iter()
            .map(|r| serde_json::to_string(r).expect("rule serializes") + "\n")
            .collect()
    }
}

impl ChatBackend for MockBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn send(&self, request: &ChatRequest, attempt: u32) -> Result<String, BackendError> {
        let tags = &request.tags;
        let rule = self.rules.iter().find(|r| r.matcher.accepts(tags)).ok_or_else(|| {
            BackendError::MockMiss { persona: tags.persona.clone(), iteration: tags.iteration }
        })?;
        if rule.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(rule.delay_ms));
        }
        match rule.error {
            Some(ScriptedError::Transient) => {
                return Err(BackendError::Transient("scripted transient error".into()))
            }
            Some(ScriptedError::Fatal) => return Err(BackendError::Fatal("scripted fatal error".into())),
            None => {}
        }
        if attempt <= rule.fail_attempts {
            return Err(BackendError::Transient(format!("scripted failure on attempt {attempt}")));
        }
        Ok(rule.reply.clone())
    }
}
