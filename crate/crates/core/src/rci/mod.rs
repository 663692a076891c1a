//! The generate → review → revise loop.
//!
//! For each section the generator proposes a candidate QA pair. A candidate
//! that breaks a structural rule is sent straight back with synthesized
//! feedback; otherwise every reviewer on the panel judges it. Unanimous
//! approval ends the loop with [`RciOutcome::PanelAccepted`]; any rejection
//! feeds the failing reviewers' reasons back to the generator as the next
//! turn of its conversation. Reviewers are stateless between iterations.
//! After `max_iterations` rounds without consensus the section is
//! [`RciOutcome::Exhausted`] and nothing is stored beyond the transcript.

mod candidate;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use candidate::{validate_candidate, CandidateQa, ReviewVerdict, ValidationReport, Violation};
pub(crate) use candidate::{index_list, json_str};

use crate::corpus::SegmentedSection;
use crate::exec::Execution;
use crate::gateway::{extract_json_object, ChatRequest, ChatResponse, Gateway, GatewayError, Message, RequestTags};
use crate::persona::{render_prompt, PanelSpec, PersonaError, PersonaSpec};

pub const DEFAULT_MAX_ITERATIONS: u32 = 5;

/// Reason recorded for a reviewer whose reply could not be parsed twice.
pub const UNPARSABLE_REVIEW: &str = "reviewer reply unparsable";

const GENERATOR_FORMAT_REMINDER: &str = "Your reply could not be read. Respond only with JSON in the format {\"question\": <question>, \"answer\": <answer>, \"required_sentence_indices\": <required_sentence_indices>}";
const REVIEWER_FORMAT_REMINDER: &str = "Your reply could not be read. Please respond in the following JSON format {\"reason\": <reason_for_quality>, \"is_quality\": <true/false>}";

#[derive(Debug, thiserror::Error)]
pub enum RciError {
    #[error("section {section_id} has {count} sentence(s); at least 2 are required")]
    TooFewSentences { section_id: String, count: usize },
    #[error("generator reply unparsable after re-ask: {0}")]
    GenerationParseFailure(String),
    #[error("candidate is structurally invalid: {0:?}")]
    InvalidCandidate(Vec<&'static str>),
    #[error("feedback requested but every verdict passed")]
    NoFailingVerdict,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RciOutcome {
    PanelAccepted,
    Exhausted,
    GenerationFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RciIteration {
    pub iteration_number: u32,
    pub candidate: CandidateQa,
    pub structural_valid: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
    /// One per panel reviewer in panel order; empty when the candidate
    /// failed structural validation.
    pub verdicts: Vec<ReviewVerdict>,
    /// What was sent back to the generator, if the loop continued.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

/// A model call made while processing one section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub persona: String,
    pub iteration: u32,
    pub request_digest: String,
    pub attempt_count: u32,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run_id: String,
    pub seed: u64,
    pub generator_model: String,
    pub reviewer_models: Vec<String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

/// Full record of one section's loop. Serialized one per line in
/// `rci_<run_id>.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RciTranscript {
    pub section_id: String,
    pub article_id: String,
    pub section: SegmentedSection,
    pub iterations: Vec<RciIteration>,
    pub outcome: RciOutcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub run_metadata: RunMetadata,
    pub calls: Vec<CallRecord>,
}

impl RciTranscript {
    pub fn run_id(&self) -> &str {
        &self.run_metadata.run_id
    }

    /// The last candidate, when the panel accepted it.
    pub fn accepted_candidate(&self) -> Option<&CandidateQa> {
        match self.outcome {
            RciOutcome::PanelAccepted => self.iterations.last().map(|it| &it.candidate),
            _ => None,
        }
    }

    /// Checks the outcome against the iteration record.
    pub fn is_consistent(&self, max_iterations: u32) -> bool {
        let last_unanimous = self.iterations.last().is_some_and(|it| {
            it.structural_valid && !it.verdicts.is_empty() && it.verdicts.iter().all(|v| v.is_quality)
        });
        let bounded = self.iterations.len() <= max_iterations as usize;
        let numbered = self.iterations.iter().enumerate().all(|(i, it)| it.iteration_number as usize == i + 1);
        let outcome_ok = match self.outcome {
            RciOutcome::PanelAccepted => last_unanimous,
            RciOutcome::Exhausted => {
                !last_unanimous && self.iterations.len() == max_iterations as usize
            }
            RciOutcome::GenerationFailed => !last_unanimous && self.failure.is_some(),
        };
        bounded && numbered && outcome_ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RciConfig {
    pub run_id: String,
    pub seed: u64,
    pub max_iterations: u32,
}

impl Default for RciConfig {
    fn default() -> Self {
        Self { run_id: "run".into(), seed: 0, max_iterations: DEFAULT_MAX_ITERATIONS }
    }
}

/// One earlier round as the generator remembers it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryTurn {
    pub candidate: CandidateQa,
    pub feedback: String,
}

/// The section's sentences as the JSON list shown in the prompts:
/// `[{"index": 0, "sentence": "..."}, ...]`.
pub fn segmented_text_json(segmented: &SegmentedSection) -> String {
    let items: Vec<String> = segmented
        .sentences
        .iter()
        .map(|s| format!("{{\"index\": {}, \"sentence\": {}}}", s.index, json_str(&s.sentence)))
        .collect();
    format!("[{}]", items.join(", "))
}

/// The reviewer INPUT object: segmented text, question, answer and
/// required indices.
pub fn review_payload(candidate: &CandidateQa, segmented: &SegmentedSection) -> String {
    format!(
        "{{\"segmented_text\": {}, \"question\": {}, \"answer\": {}, \"required_sentence_indices\": {}}}",
        segmented_text_json(segmented),
        json_str(&candidate.question),
        json_str(&candidate.answer),
        index_list(&candidate.required_sentence_indices)
    )
}

/// Concatenates the failing verdicts' reasons, each prefixed with its
/// reviewer's name, in panel order.
pub fn aggregate_feedback(verdicts: &[ReviewVerdict]) -> Result<String, RciError> {
    let failing: Vec<String> = verdicts
        .iter()
        .filter(|v| !v.is_quality)
        .map(|v| format!("{}: {}", v.persona_name, v.reason))
        .collect();
    if failing.is_empty() {
        return Err(RciError::NoFailingVerdict);
    }
    Ok(failing.join("\n"))
}

/// Collects call records for one section.
#[derive(Debug, Default)]
struct CallLog(Vec<CallRecord>);

impl CallLog {
    fn call(&mut self, gateway: &Gateway, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let result = gateway.complete(request);
        self.0.push(CallRecord {
            persona: request.tags.persona.clone(),
            iteration: request.tags.iteration.unwrap_or(0),
            request_digest: request.digest(),
            attempt_count: result.as_ref().map(|r| r.attempt_count).unwrap_or(0),
            backend_id: gateway.backend_id().to_string(),
            error: result.as_ref().err().map(ToString::to_string),
        });
        result
    }
}

/// The generator's conversation for one iteration: the rendered prompt,
/// then each earlier candidate followed by the feedback it received.
pub fn generator_messages(
    generator: &PersonaSpec,
    segmented: &SegmentedSection,
    history: &[HistoryTurn],
) -> Result<Vec<Message>, RciError> {
    let prompt = render_prompt(generator, &segmented_text_json(segmented))?;
    let mut messages = vec![generator.opening_message(prompt)];
    for turn in history {
        messages.push(Message::assistant(turn.candidate.to_prompt_json()));
        messages.push(Message::user(turn.feedback.clone()));
    }
    Ok(messages)
}

/// Asks the generator for a candidate. Structural rules are not checked
/// here. An unparsable reply gets one re-ask with a format reminder.
pub fn generate_candidate(
    segmented: &SegmentedSection,
    history: &[HistoryTurn],
    gateway: &Gateway,
    generator: &PersonaSpec,
) -> Result<CandidateQa, RciError> {
    let iteration = history.len() as u32 + 1;
    generate_logged(segmented, history, gateway, generator, iteration, &mut CallLog::default())
}

fn generate_logged(
    segmented: &SegmentedSection,
    history: &[HistoryTurn],
    gateway: &Gateway,
    generator: &PersonaSpec,
    iteration: u32,
    log: &mut CallLog,
) -> Result<CandidateQa, RciError> {
    if segmented.len() < 2 {
        return Err(RciError::TooFewSentences {
            section_id: segmented.section_id.clone(),
            count: segmented.len(),
        });
    }
    let tags = RequestTags::new(&generator.name).iteration(iteration).subject(&segmented.section_id);
    let mut messages = generator_messages(generator, segmented, history)?;
    let mut last_problem = String::new();
    for _ in 0..2 {
        let reply = log.call(gateway, &generator.request(messages.clone(), tags.clone()))?;
        match extract_json_object(&reply.content) {
            Ok(value) => match CandidateQa::from_json(&value) {
                Some(candidate) => return Ok(candidate),
                None => last_problem = "reply JSON lacks question/answer/required_sentence_indices".into(),
            },
            Err(e) => last_problem = e.to_string(),
        }
        messages.push(Message::assistant(reply.content));
        messages.push(Message::user(GENERATOR_FORMAT_REMINDER));
    }
    Err(RciError::GenerationParseFailure(last_problem))
}

/// Has one reviewer judge a structurally valid candidate. A reviewer that
/// fails to produce a readable verdict twice is recorded as rejecting.
pub fn review_candidate(
    candidate: &CandidateQa,
    segmented: &SegmentedSection,
    reviewer: &PersonaSpec,
    gateway: &Gateway,
) -> Result<ReviewVerdict, RciError> {
    let report = validate_candidate(candidate, segmented);
    if !report.is_valid() {
        return Err(RciError::InvalidCandidate(report.codes()));
    }
    review_logged(candidate, segmented, reviewer, gateway, 1, &mut CallLog::default())
}

fn review_logged(
    candidate: &CandidateQa,
    segmented: &SegmentedSection,
    reviewer: &PersonaSpec,
    gateway: &Gateway,
    iteration: u32,
    log: &mut CallLog,
) -> Result<ReviewVerdict, RciError> {
    let prompt = render_prompt(reviewer, &review_payload(candidate, segmented))?;
    let tags = RequestTags::new(&reviewer.name).iteration(iteration).subject(&segmented.section_id);
    let mut messages = vec![reviewer.opening_message(prompt)];
    for _ in 0..2 {
        let reply = log.call(gateway, &reviewer.request(messages.clone(), tags.clone()))?;
        let verdict = extract_json_object(&reply.content)
            .ok()
            .and_then(|v| ReviewVerdict::from_json(&reviewer.display_name, &v));
        if let Some(verdict) = verdict {
            return Ok(verdict);
        }
        messages.push(Message::assistant(reply.content));
        messages.push(Message::user(REVIEWER_FORMAT_REMINDER));
    }
    Ok(ReviewVerdict {
        persona_name: reviewer.display_name.clone(),
        reason: UNPARSABLE_REVIEW.into(),
        is_quality: false,
    })
}

/// Runs the loop for batches of sections.
pub struct RciEngine<'a> {
    pub generator: &'a PersonaSpec,
    pub panel: &'a PanelSpec,
    pub generator_gateway: &'a Gateway,
    pub reviewer_gateway: &'a Gateway,
    pub config: RciConfig,
    pub exec: Execution,
}

impl<'a> RciEngine<'a> {
    pub fn new(generator: &'a PersonaSpec, panel: &'a PanelSpec, gateway: &'a Gateway, config: RciConfig) -> Self {
        Self {
            generator,
            panel,
            generator_gateway: gateway,
            reviewer_gateway: gateway,
            config,
            exec: Execution::default(),
        }
    }

    pub fn with_reviewer_gateway(mut self, gateway: &'a Gateway) -> Self {
        self.reviewer_gateway = gateway;
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    /// Runs one section to a terminal outcome.
    pub fn run(&self, segmented: &SegmentedSection) -> RciTranscript {
        let started_at = Utc::now();
        let max = self.config.max_iterations.max(1);
        let mut log = CallLog::default();
        let mut iterations: Vec<RciIteration> = Vec::new();
        let mut history: Vec<HistoryTurn> = Vec::new();
        let mut outcome = RciOutcome::Exhausted;
        let mut failure = None;

        for iteration in 1..=max {
            let candidate = match generate_logged(
                segmented,
                &history,
                self.generator_gateway,
                self.generator,
                iteration,
                &mut log,
            ) {
                Ok(c) => c,
                Err(e) => {
                    outcome = RciOutcome::GenerationFailed;
                    failure = Some(e.to_string());
                    break;
                }
            };

            let report = validate_candidate(&candidate, segmented);
            if !report.is_valid() {
                let feedback = report.feedback();
                history.push(HistoryTurn { candidate: candidate.clone(), feedback: feedback.clone() });
                iterations.push(RciIteration {
                    iteration_number: iteration,
                    candidate,
                    structural_valid: false,
                    violations: report.violations,
                    verdicts: Vec::new(),
                    feedback: (iteration < max).then_some(feedback),
                });
                continue;
            }

            let reviews = self.exec.fan_out(self.panel.reviewers(), |reviewer| {
                let mut own = CallLog::default();
                let verdict =
                    review_logged(&candidate, segmented, reviewer, self.reviewer_gateway, iteration, &mut own);
                (verdict, own.0)
            });
            let mut verdicts = Vec::with_capacity(reviews.len());
            let mut review_error = None;
            for (verdict, calls) in reviews {
                log.0.extend(calls);
                match verdict {
                    Ok(v) => verdicts.push(v),
                    Err(e) => {
                        review_error.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = review_error {
                outcome = RciOutcome::GenerationFailed;
                failure = Some(e.to_string());
                break;
            }

            if verdicts.iter().all(|v| v.is_quality) {
                iterations.push(RciIteration {
                    iteration_number: iteration,
                    candidate,
                    structural_valid: true,
                    violations: Vec::new(),
                    verdicts,
                    feedback: None,
                });
                outcome = RciOutcome::PanelAccepted;
                break;
            }
            let feedback = aggregate_feedback(&verdicts).expect("at least one verdict failed");
            history.push(HistoryTurn { candidate: candidate.clone(), feedback: feedback.clone() });
            iterations.push(RciIteration {
                iteration_number: iteration,
                candidate,
                structural_valid: true,
                violations: Vec::new(),
                verdicts,
                feedback: (iteration < max).then_some(feedback),
            });
        }

        RciTranscript {
            section_id: segmented.section_id.clone(),
            article_id: segmented.article_id.clone(),
            section: segmented.clone(),
            iterations,
            outcome,
            failure,
            run_metadata: RunMetadata {
                run_id: self.config.run_id.clone(),
                seed: self.config.seed,
                generator_model: self.generator.model_name.clone(),
                reviewer_models: self.panel.reviewers().iter().map(|p| p.model_name.clone()).collect(),
                started_at,
                finished_at: Utc::now(),
            },
            calls: log.0,
        }
    }

    /// Runs every section, handing each transcript to `sink` as soon as it
    /// is finished. The returned transcripts follow input order.
    pub fn run_batch<F>(&self, sections: &[SegmentedSection], sink: F) -> Vec<RciTranscript>
    where
        F: Fn(&RciTranscript) + Sync + Send,
    {
        self.exec.map(sections, |s| {
            let transcript = self.run(s);
            sink(&transcript);
            transcript
        })
    }
}

/// Runs one section with a single gateway for all personas.
pub fn run_rci(
    segmented: &SegmentedSection,
    generator: &PersonaSpec,
    panel: &PanelSpec,
    gateway: &Gateway,
    config: RciConfig,
) -> RciTranscript {
    RciEngine::new(generator, panel, gateway, config).run(segmented)
}
