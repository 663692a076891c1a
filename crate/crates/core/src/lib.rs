//! Coreference-resolution QA dataset generation.
//!
//! The pipeline runs in stages:
//!
//! 1. [`corpus`] loads Markdown articles, splits them into sections, samples
//!    sections and segments each into indexed sentences.
//! 2. [`rci`] drives a generator persona and a panel of reviewer personas
//!    through a bounded criticize-and-improve loop per section.
//! 3. [`review`] queues panel-accepted candidates for human review, applies
//!    the two-reviewer decision rule, deduplicates per section and exports
//!    the release.
//! 4. [`stats`] computes the release characteristics, rejection tallies and
//!    yield.
//!
//! All model traffic goes through [`gateway`], which fronts either a remote
//! chat-completions endpoint or a scripted mock for offline runs. Prompt
//! texts live in [`persona`].

pub mod corpus;
pub mod exec;
pub mod gateway;
pub mod jsonl;
pub mod persona;
pub mod rci;
pub mod review;
pub mod stats;

pub use corpus::{Article, IndexedSentence, SectionKind, Section, SegmentedSection};
pub use gateway::{BackendConfig, ChatRequest, ChatResponse, Gateway, GatewayError};
pub use persona::{PanelSpec, PersonaRegistry, PersonaSpec};
pub use rci::{CandidateQa, RciConfig, RciOutcome, RciTranscript, ReviewVerdict};
pub use review::{DatasetRecord, HumanDecision, RejectionCategory, ReviewItem, ReviewStore};
pub use stats::StatsReport;
