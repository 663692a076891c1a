//! Prompt personas.
//!
//! Each persona is a prompt template on disk (`<name>.prompt.txt`) plus an
//! entry in `personas.json` giving its role, model, temperature and the
//! shape of reply it must produce. Templates carry exactly one
//! `*PLACEHOLDER*` token where the payload goes. The shipped set lives in
//! this crate's `prompts/` directory and can be swapped for another
//! directory at runtime so prompt wording can change without a rebuild.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::gateway::{ChatRequest, Message, RequestTags};

pub const PLACEHOLDER: &str = "*PLACEHOLDER*";
pub const INDEX_FILE: &str = "personas.json";
pub const PROMPTS_DIR_ENV: &str = "CRAQAN_PROMPTS_DIR";

pub const GENERATOR_TEMPERATURE: f64 = 0.7;
pub const REVIEWER_TEMPERATURE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PersonaRole {
    Generator,
    Reviewer,
    Splitter,
}

impl PersonaRole {
    pub fn default_temperature(self) -> f64 {
        match self {
            PersonaRole::Generator => GENERATOR_TEMPERATURE,
            PersonaRole::Reviewer => REVIEWER_TEMPERATURE,
            PersonaRole::Splitter => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplySchema {
    CandidateQa,
    ReviewVerdict,
    SentenceList,
}

/// How the rendered prompt is sent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageMode {
    /// A single user message.
    #[default]
    User,
    /// A single system message.
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub name: String,
    pub display_name: String,
    pub role: PersonaRole,
    pub template: String,
    pub model_name: String,
    pub temperature: f64,
    pub reply_schema: ReplySchema,
    pub message_mode: MessageMode,
}

impl PersonaSpec {
    /// Builds a persona, checking the placeholder invariant.
    pub fn new(
        name: impl Into<String>,
        role: PersonaRole,
        template: impl Into<String>,
        model_name: impl Into<String>,
        reply_schema: ReplySchema,
    ) -> Result<Self, PersonaError> {
        let name = name.into();
        let template = template.into();
        check_placeholder(&name, &template)?;
        Ok(Self {
            display_name: name.clone(),
            name,
            role,
            template,
            model_name: model_name.into(),
            temperature: role.default_temperature(),
            reply_schema,
            message_mode: MessageMode::User,
        })
    }

    /// Wraps a rendered prompt into the opening message of a conversation.
    pub fn opening_message(&self, prompt: String) -> Message {
        match self.message_mode {
            MessageMode::User => Message::user(prompt),
            MessageMode::System => Message::system(prompt),
        }
    }

    /// A request carrying this persona's model binding and temperature.
    pub fn request(&self, messages: Vec<Message>, tags: RequestTags) -> ChatRequest {
        ChatRequest {
            messages,
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            max_output_tokens: None,
            tags,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PersonaError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid {INDEX_FILE}: {0}")]
    Index(#[from] serde_json::Error),
    #[error("template for {persona} contains {count} placeholder(s); exactly one required")]
    Template { persona: String, count: usize },
    #[error("prompt payload must not be empty")]
    EmptyPayload,
    #[error("unknown persona {0}")]
    Unknown(String),
    #[error("persona {persona} has role {role:?}, expected {expected:?}")]
    WrongRole { persona: String, role: PersonaRole, expected: PersonaRole },
    #[error("reviewer panel must not be empty")]
    EmptyPanel,
}

fn check_placeholder(persona: &str, template: &str) -> Result<(), PersonaError> {
    match template.matches(PLACEHOLDER).count() {
        1 => Ok(()),
        count => Err(PersonaError::Template { persona: persona.to_string(), count }),
    }
}

/// Substitutes `payload` for the template's placeholder.
pub fn render_prompt(persona: &PersonaSpec, payload: &str) -> Result<String, PersonaError> {
    if payload.is_empty() {
        return Err(PersonaError::EmptyPayload);
    }
    check_placeholder(&persona.name, &persona.template)?;
    Ok(persona.template.replacen(PLACEHOLDER, payload, 1))
}

#[derive(Debug, Deserialize)]
struct IndexEntry {
    display_name: Option<String>,
    role: PersonaRole,
    model_name: String,
    temperature: Option<f64>,
    reply_schema: ReplySchema,
    #[serde(default)]
    message_mode: MessageMode,
}

/// Immutable set of personas, in index-file order.
#[derive(Debug, Clone)]
pub struct PersonaRegistry {
    dir: PathBuf,
    personas: IndexMap<String, PersonaSpec>,
}

/// The prompt directory used when none is configured: `$CRAQAN_PROMPTS_DIR`
/// if set, else the directory shipped with this crate.
pub fn default_prompts_dir() -> PathBuf {
    std::env::var_os(PROMPTS_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/prompts")))
}

/// The generator, the four reviewers and the sentence splitter.
pub fn builtin_personas() -> Result<PersonaRegistry, PersonaError> {
    PersonaRegistry::load_dir(&default_prompts_dir())
}

impl PersonaRegistry {
    /// Loads `personas.json` and each listed `<name>.prompt.txt` from
    /// `dir`, validating every template before returning.
    pub fn load_dir(dir: &Path) -> Result<Self, PersonaError> {
        let index_path = dir.join(INDEX_FILE);
        let index_text = std::fs::read_to_string(&index_path)
            .map_err(|source| PersonaError::Io { path: index_path, source })?;
        let index: IndexMap<String, IndexEntry> = serde_json::from_str(&index_text)?;
        let mut personas = IndexMap::new();
        for (name, entry) in index {
            let path = dir.join(format!("{name}.prompt.txt"));
            let template = std::fs::read_to_string(&path)
                .map_err(|source| PersonaError::Io { path, source })?;
            check_placeholder(&name, &template)?;
            let spec = PersonaSpec {
                display_name: entry.display_name.unwrap_or_else(|| name.clone()),
                name: name.clone(),
                role: entry.role,
                template,
                model_name: entry.model_name,
                temperature: entry.temperature.unwrap_or(entry.role.default_temperature()),
                reply_schema: entry.reply_schema,
                message_mode: entry.message_mode,
            };
            personas.insert(name, spec);
        }
        Ok(Self { dir: dir.to_path_buf(), personas })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.personas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.personas.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PersonaSpec> {
        self.personas.values()
    }

    pub fn get(&self, name: &str) -> Result<&PersonaSpec, PersonaError> {
        self.personas.get(name).ok_or_else(|| PersonaError::Unknown(name.to_string()))
    }

    /// Looks up `name` and checks it has `role`.
    pub fn with_role(&self, name: &str, role: PersonaRole) -> Result<&PersonaSpec, PersonaError> {
        let spec = self.get(name)?;
        if spec.role != role {
            return Err(PersonaError::WrongRole {
                persona: name.to_string(),
                role: spec.role,
                expected: role,
            });
        }
        Ok(spec)
    }

    /// The first persona with the generator role.
    pub fn generator(&self) -> Result<&PersonaSpec, PersonaError> {
        self.first_with(PersonaRole::Generator)
    }

    pub fn splitter(&self) -> Result<&PersonaSpec, PersonaError> {
        self.first_with(PersonaRole::Splitter)
    }

    fn first_with(&self, role: PersonaRole) -> Result<&PersonaSpec, PersonaError> {
        self.iter()
            .find(|p| p.role == role)
            .ok_or_else(|| PersonaError::Unknown(format!("<any {role:?}>")))
    }

    /// Every reviewer, in index order.
    pub fn default_panel(&self) -> Result<PanelSpec, PersonaError> {
        PanelSpec::new(self.iter().filter(|p| p.role == PersonaRole::Reviewer).cloned().collect())
    }

    /// The named reviewers, in the given order.
    pub fn panel<S: AsRef<str>>(&self, names: &[S]) -> Result<PanelSpec, PersonaError> {
        let reviewers = names
            .iter()
            .map(|n| self.with_role(n.as_ref(), PersonaRole::Reviewer).cloned())
            .collect::<Result<Vec<_>, _>>()?;
        PanelSpec::new(reviewers)
    }
}

/// Ordered, non-empty list of reviewer personas.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSpec {
    reviewers: Vec<PersonaSpec>,
}

impl PanelSpec {
    pub fn new(reviewers: Vec<PersonaSpec>) -> Result<Self, PersonaError> {
        if reviewers.is_empty() {
            return Err(PersonaError::EmptyPanel);
        }
        if let Some(p) = reviewers.iter().find(|p| p.role != PersonaRole::Reviewer) {
            return Err(PersonaError::WrongRole {
                persona: p.name.clone(),
                role: p.role,
                expected: PersonaRole::Reviewer,
            });
        }
        Ok(Self { reviewers })
    }

    pub fn reviewers(&self) -> &[PersonaSpec] {
        &self.reviewers
    }

    pub fn len(&self) -> usize {
        self.reviewers.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn persona(template: &str) -> PersonaSpec {
        PersonaSpec {
            name: "t".into(),
            display_name: "T".into(),
            role: PersonaRole::Generator,
            template: template.into(),
            model_name: "m".into(),
            temperature: 0.7,
            reply_schema: ReplySchema::CandidateQa,
            message_mode: MessageMode::User,
        }
    }

    #[test]
    fn builtin_registry_shape() {
        let reg = builtin_personas().unwrap();
        assert_eq!(reg.len(), 6);
        let reviewers: Vec<_> = reg.iter().filter(|p| p.role == PersonaRole::Reviewer).collect();
        assert_eq!(reviewers.len(), 4);
        assert_eq!(reg.generator().unwrap().temperature, 0.7);
        for r in &reviewers {
            assert_eq!(r.temperature, 0.3);
            assert!(r.template.contains("\"is_quality\""), "{}", r.name);
            assert_eq!(r.reply_schema, ReplySchema::ReviewVerdict);
        }
        let names: Vec<_> = reg.default_panel().unwrap().reviewers().iter().map(|p| p.display_name.clone()).collect();
        assert_eq!(
            names,
            [
                "Content Cohesion Reviewer",
                "Information Accuracy Reviewer",
                "Linguistic Quality Reviewer",
                "Required Sentence Reviewer"
            ]
        );
        assert_eq!(reg.splitter().unwrap().reply_schema, ReplySchema::SentenceList);
    }

    #[test]
    fn builtin_templates_match_files() {
        let reg = builtin_personas().unwrap();
        for p in reg.iter() {
            let on_disk = std::fs::read_to_string(reg.dir().join(format!("{}.prompt.txt", p.name))).unwrap();
            assert_eq!(p.template, on_disk);
        }
        let gen = reg.generator().unwrap();
        assert!(gen.template.starts_with("As a PhD holder in Computational Linguistics"));
    }

    #[test]
    fn substitution_identity() {
        assert_eq!(render_prompt(&persona("A *PLACEHOLDER* B"), "x").unwrap(), "A x B");
    }

    #[test]
    fn empty_payload_rejected() {
        assert!(matches!(render_prompt(&persona("A *PLACEHOLDER*"), ""), Err(PersonaError::EmptyPayload)));
    }

    #[test]
    fn zero_placeholders_rejected_at_load() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join(INDEX_FILE),
            r#"{"g": {"role": "generator", "model_name": "m", "reply_schema": "candidate_qa"}}"#,
        )
        .unwrap();
        std::fs::write(dir.path().join("g.prompt.txt"), "no placeholder here").unwrap();
        assert!(matches!(
            PersonaRegistry::load_dir(dir.path()),
            Err(PersonaError::Template { count: 0, .. })
        ));
        std::fs::write(dir.path().join("g.prompt.txt"), "*PLACEHOLDER* *PLACEHOLDER*").unwrap();
        assert!(matches!(
            PersonaRegistry::load_dir(dir.path()),
            Err(PersonaError::Template { count: 2, .. })
        ));
        std::fs::write(dir.path().join("g.prompt.txt"), "go: *PLACEHOLDER*").unwrap();
        let reg = PersonaRegistry::load_dir(dir.path()).unwrap();
        assert_eq!(reg.get("g").unwrap().temperature, GENERATOR_TEMPERATURE);
    }

    #[test]
    fn panel_rejects_non_reviewers_and_unknowns() {
        let reg = builtin_personas().unwrap();
        assert!(matches!(reg.panel(&["generator"]), Err(PersonaError::WrongRole { .. })));
        assert!(matches!(reg.panel(&["nobody"]), Err(PersonaError::Unknown(_))));
        assert!(matches!(reg.panel::<&str>(&[]), Err(PersonaError::EmptyPanel)));
        assert_eq!(reg.panel(&["required_sentence"]).unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn render_contains_payload_once(
            pre in "[a-z ]{0,20}",
            post in "[a-z ]{0,20}",
            payload in "[A-Z0-9]{1,30}",
        ) {
            let template = format!("{pre}{PLACEHOLDER}{post}");
            let out = render_prompt(&persona(&template), &payload).unwrap();
            prop_assert_eq!(out.matches(payload.as_str()).count(), 1);
            prop_assert_eq!(out.len(), template.len() - PLACEHOLDER.len() + payload.len());
        }
    }
}
