//! Human review of panel-accepted candidates.
//!
//! Items enter a queue from accepted transcripts. Reviewers accept or
//! reject; the first side to collect two votes decides the item. Accepted
//! items are deduplicated per section and exported as the release. All
//! state changes are events in an append-only JSON Lines log
//! ([`store::ReviewStore`]); the in-memory [`state::ReviewState`] is a pure
//! fold over that log.

mod dedup;
mod export;
pub mod state;
pub mod store;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{IndexedSentence, SectionKind, SegmentedSection};
use crate::rci::CandidateQa;

pub use dedup::{dedup, DedupResult};
pub use export::{export_dataset, ExportSummary, ReleaseMeta, META_FILE, RELEASE_FILE};
pub use state::{ReviewEvent, ReviewProgress, ReviewState};
pub use store::{ReviewStore, EVENT_LOG_FILE};

/// Decisions needed on one side to finalize an item.
pub const DECISION_QUORUM: usize = 2;

/// Reasons a human reviewer may give for rejecting a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectionCategory {
    #[serde(rename = "Irrelevant Sentences Included")]
    IrrelevantSentencesIncluded,
    #[serde(rename = "Important Sentences Excluded")]
    ImportantSentencesExcluded,
    #[serde(rename = "Parsing or Formatting Errors")]
    ParsingOrFormattingErrors,
    #[serde(rename = "Incomplete or Unclear Answer")]
    IncompleteOrUnclearAnswer,
    #[serde(rename = "Question Ambiguity")]
    QuestionAmbiguity,
    #[serde(rename = "Coreference Errors")]
    CoreferenceErrors,
    #[serde(rename = "Other")]
    Other,
    #[serde(rename = "Wrong Information")]
    WrongInformation,
    #[serde(rename = "Compound or Double Questions")]
    CompoundOrDoubleQuestions,
}

impl RejectionCategory {
    pub const ALL: [RejectionCategory; 9] = [
        RejectionCategory::IrrelevantSentencesIncluded,
        RejectionCategory::ImportantSentencesExcluded,
        RejectionCategory::ParsingOrFormattingErrors,
        RejectionCategory::IncompleteOrUnclearAnswer,
        RejectionCategory::QuestionAmbiguity,
        RejectionCategory::CoreferenceErrors,
        RejectionCategory::Other,
        RejectionCategory::WrongInformation,
        RejectionCategory::CompoundOrDoubleQuestions,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RejectionCategory::IrrelevantSentencesIncluded => "Irrelevant Sentences Included",
            RejectionCategory::ImportantSentencesExcluded => "Important Sentences Excluded",
            RejectionCategory::ParsingOrFormattingErrors => "Parsing or Formatting Errors",
            RejectionCategory::IncompleteOrUnclearAnswer => "Incomplete or Unclear Answer",
            RejectionCategory::QuestionAmbiguity => "Question Ambiguity",
            RejectionCategory::CoreferenceErrors => "Coreference Errors",
            RejectionCategory::Other => "Other",
            RejectionCategory::WrongInformation => "Wrong Information",
            RejectionCategory::CompoundOrDoubleQuestions => "Compound or Double Questions",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.label() == label)
    }
}

impl std::fmt::Display for RejectionCategory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanDecision {
    pub reviewer_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason_category: Option<RejectionCategory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub free_text: Option<String>,
    pub decided_at: DateTime<Utc>,
}

impl HumanDecision {
    pub fn accept(reviewer_id: impl Into<String>, decided_at: DateTime<Utc>) -> Self {
        Self {
            reviewer_id: reviewer_id.into(),
            verdict: Verdict::Accept,
            reason_category: None,
            free_text: None,
            decided_at,
        }
    }

    pub fn reject(
        reviewer_id: impl Into<String>,
        category: RejectionCategory,
        decided_at: DateTime<Utc>,
    ) -> Self {
        Self {
            reviewer_id: reviewer_id.into(),
            verdict: Verdict::Reject,
            reason_category: Some(category),
            free_text: None,
            decided_at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Accepted,
    Rejected,
    DroppedDuplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub run_id: String,
    pub section_id: String,
    pub article_id: String,
    pub segmented: SegmentedSection,
    pub candidate: CandidateQa,
    pub iteration_count: u32,
    pub status: ItemStatus,
    pub decisions: Vec<HumanDecision>,
    /// Event sequence number at which the item was enqueued.
    pub enqueued_seq: u64,
    /// Event sequence number of the decision that finalized the item.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finalized_seq: Option<u64>,
}

impl ReviewItem {
    pub fn count(&self, verdict: Verdict) -> usize {
        self.decisions.iter().filter(|d| d.verdict == verdict).count()
    }

    /// Pending with one vote on each side.
    pub fn is_disputed(&self) -> bool {
        self.status == ItemStatus::Pending && self.count(Verdict::Accept) >= 1 && self.count(Verdict::Reject) >= 1
    }

    pub fn decided_by(&self, reviewer_id: &str) -> bool {
        self.decisions.iter().any(|d| d.reviewer_id == reviewer_id)
    }

    pub fn to_record(&self) -> DatasetRecord {
        DatasetRecord {
            record_id: self.item_id.clone(),
            article_id: self.article_id.clone(),
            section_id: self.section_id.clone(),
            section_kind: self.segmented.kind,
            sentences: self.segmented.sentences.clone(),
            question: self.candidate.question.clone(),
            answer: self.candidate.answer.clone(),
            required_sentence_indices: self.candidate.required_sentence_indices.clone(),
            provenance: Provenance {
                run_id: self.run_id.clone(),
                iteration_count: self.iteration_count,
                human_reviewer_ids: self
                    .decisions
                    .iter()
                    .filter(|d| d.verdict == Verdict::Accept)
                    .map(|d| d.reviewer_id.clone())
                    .collect(),
            },
        }
    }
}

/// Item ids are derived from `(run_id, section_id)`, which makes enqueueing
/// idempotent.
pub fn item_id(run_id: &str, section_id: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(run_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(section_id.as_bytes());
    hasher.finalize()[..12].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    pub iteration_count: u32,
    pub human_reviewer_ids: Vec<String>,
}

/// One line of the exported release.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub record_id: String,
    pub article_id: String,
    pub section_id: String,
    pub section_kind: SectionKind,
    pub sentences: Vec<IndexedSentence>,
    pub question: String,
    pub answer: String,
    pub required_sentence_indices: Vec<usize>,
    pub provenance: Provenance,
}

impl DatasetRecord {
    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(|s| s.sentence.split_whitespace().count()).sum()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("item {0} not found")]
    NotFound(String),
    #[error("reviewer {reviewer_id} already decided item {item_id}")]
    DuplicateDecision { item_id: String, reviewer_id: String },
    #[error("{0}")]
    Validation(String),
    #[error("item {item_id} is already {status:?}")]
    NotPending { item_id: String, status: ItemStatus },
    #[error("only panel-accepted transcripts can be enqueued (section {0})")]
    NotPanelAccepted(String),
    #[error("event log {path} is locked by another process")]
    Locked { path: String },
    #[error("event log line {line} is corrupt: {message}")]
    Corrupt { line: usize, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl ReviewError {
    /// Stable machine-readable code for API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ReviewError::NotFound(_) => "not_found",
            ReviewError::DuplicateDecision { .. } => "duplicate_decision",
            ReviewError::Validation(_) => "validation_error",
            ReviewError::NotPending { .. } => "not_pending",
            ReviewError::NotPanelAccepted(_) => "not_panel_accepted",
            ReviewError::Locked { .. } => "store_locked",
            ReviewError::Corrupt { .. } => "store_corrupt",
            ReviewError::Io { .. } => "io_error",
        }
    }
}
