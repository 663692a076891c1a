//! Review events and the state they fold into.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{item_id, HumanDecision, ItemStatus, RejectionCategory, ReviewError, ReviewItem, Verdict, DECISION_QUORUM};
use crate::rci::RciTranscript;

/// One line of `review_events.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ReviewEvent {
    Enqueued { seq: u64, item: Box<ReviewItem> },
    Decided { seq: u64, item_id: String, decision: HumanDecision },
    DuplicatesDropped { seq: u64, item_ids: Vec<String> },
}

impl ReviewEvent {
    pub fn seq(&self) -> u64 {
        match self {
            ReviewEvent::Enqueued { seq, .. }
            | ReviewEvent::Decided { seq, .. }
            | ReviewEvent::DuplicatesDropped { seq, .. } => *seq,
        }
    }
}

/// Materialized view of the event log.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewState {
    pub items: BTreeMap<String, ReviewItem>,
    pub last_seq: u64,
}

/// Live counts for progress reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewProgress {
    pub total: usize,
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub dropped_duplicate: usize,
    /// Pending items with one accept and one reject, waiting for a third
    /// reviewer.
    pub disputed: usize,
    /// Items that reached two accepts, whether or not later dropped as
    /// duplicates.
    pub human_accepted: usize,
    pub rejecting_decisions: usize,
    pub rejection_tally: IndexMap<RejectionCategory, usize>,
}

impl ReviewState {
    /// Folds `events` from an empty state.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a ReviewEvent>) -> Result<Self, ReviewError> {
        let mut state = Self::default();
        for event in events {
            state.apply(event)?;
        }
        Ok(state)
    }

    pub fn get(&self, item_id: &str) -> Result<&ReviewItem, ReviewError> {
        self.items.get(item_id).ok_or_else(|| ReviewError::NotFound(item_id.to_string()))
    }

    /// The pending item for an accepted transcript, or `None` if it is
    /// already queued.
    pub fn item_for(&self, transcript: &RciTranscript) -> Result<Option<ReviewItem>, ReviewError> {
        let candidate = transcript
            .accepted_candidate()
            .ok_or_else(|| ReviewError::NotPanelAccepted(transcript.section_id.clone()))?;
        let id = item_id(transcript.run_id(), &transcript.section_id);
        if self.items.contains_key(&id) {
            return Ok(None);
        }
        Ok(Some(ReviewItem {
            item_id: id,
            run_id: transcript.run_id().to_string(),
            section_id: transcript.section_id.clone(),
            article_id: transcript.article_id.clone(),
            segmented: transcript.section.clone(),
            candidate: candidate.clone(),
            iteration_count: transcript.iterations.len() as u32,
            status: ItemStatus::Pending,
            decisions: Vec::new(),
            enqueued_seq: self.last_seq + 1,
            finalized_seq: None,
        }))
    }

    pub fn check_decision(&self, item_id: &str, decision: &HumanDecision) -> Result<(), ReviewError> {
        let item = self.get(item_id)?;
        if decision.reviewer_id.trim().is_empty() {
            return Err(ReviewError::Validation("reviewer_id must not be empty".into()));
        }
        if decision.verdict == Verdict::Reject && decision.reason_category.is_none() {
            return Err(ReviewError::Validation("a rejection requires reason_category".into()));
        }
        if item.decided_by(&decision.reviewer_id) {
            return Err(ReviewError::DuplicateDecision {
                item_id: item_id.to_string(),
                reviewer_id: decision.reviewer_id.clone(),
            });
        }
        if item.status != ItemStatus::Pending {
            return Err(ReviewError::NotPending { item_id: item_id.to_string(), status: item.status });
        }
        Ok(())
    }

    pub fn check_drop(&self, item_ids: &[String]) -> Result<(), ReviewError> {
        for id in item_ids {
            let item = self.get(id)?;
            if item.status != ItemStatus::Accepted {
                return Err(ReviewError::Validation(format!(
                    "only accepted items can be dropped as duplicates ({id} is {:?})",
                    item.status
                )));
            }
        }
        Ok(())
    }

    /// Checks that `event` may be applied next.
    pub fn validate(&self, event: &ReviewEvent) -> Result<(), ReviewError> {
        let seq = event.seq();
        if seq != self.last_seq + 1 {
            return Err(ReviewError::Validation(format!(
                "event sequence {seq} does not follow {}",
                self.last_seq
            )));
        }
        match event {
            ReviewEvent::Enqueued { item, .. } => {
                if self.items.contains_key(&item.item_id) {
                    return Err(ReviewError::Validation(format!("item {} enqueued twice", item.item_id)));
                }
                if item.status != ItemStatus::Pending || !item.decisions.is_empty() {
                    return Err(ReviewError::Validation("enqueued items must be fresh".into()));
                }
                Ok(())
            }
            ReviewEvent::Decided { item_id, decision, .. } => self.check_decision(item_id, decision),
            ReviewEvent::DuplicatesDropped { item_ids, .. } => self.check_drop(item_ids),
        }
    }

    /// Applies one event. Invalid events are rejected without changing the
    /// state.
    pub fn apply(&mut self, event: &ReviewEvent) -> Result<(), ReviewError> {
        self.validate(event)?;
        let seq = event.seq();
        match event {
            ReviewEvent::Enqueued { item, .. } => {
                let mut item = (**item).clone();
                item.enqueued_seq = seq;
                self.items.insert(item.item_id.clone(), item);
            }
            ReviewEvent::Decided { item_id, decision, .. } => {
                let item = self.items.get_mut(item_id).expect("checked");
                item.decisions.push(decision.clone());
                if item.count(Verdict::Accept) >= DECISION_QUORUM {
                    item.status = ItemStatus::Accepted;
                    item.finalized_seq = Some(seq);
                } else if item.count(Verdict::Reject) >= DECISION_QUORUM {
                    item.status = ItemStatus::Rejected;
                    item.finalized_seq = Some(seq);
                }
            }
            ReviewEvent::DuplicatesDropped { item_ids, .. } => {
                for id in item_ids {
                    self.items.get_mut(id).expect("checked").status = ItemStatus::DroppedDuplicate;
                }
            }
        }
        self.last_seq = seq;
        Ok(())
    }

    /// Items with `status`, optionally hiding those `reviewer_id` has
    /// already decided. Ordered by enqueue sequence.
    pub fn queue(&self, status: Option<ItemStatus>, exclude_reviewer: Option<&str>) -> Vec<&ReviewItem> {
        let mut items: Vec<&ReviewItem> = self
            .items
            .values()
            .filter(|i| status.is_none_or(|s| i.status == s))
            .filter(|i| exclude_reviewer.is_none_or(|r| !i.decided_by(r)))
            .collect();
        items.sort_by_key(|i| i.enqueued_seq);
        items
    }

    pub fn with_status(&self, status: ItemStatus) -> Vec<ReviewItem> {
        self.queue(Some(status), None).into_iter().cloned().collect()
    }

    pub fn progress(&self) -> ReviewProgress {
        let mut p = ReviewProgress {
            rejection_tally: RejectionCategory::ALL.iter().map(|&c| (c, 0)).collect(),
            ..Default::default()
        };
        for item in self.items.values() {
            p.total += 1;
            match item.status {
                ItemStatus::Pending => p.pending += 1,
                ItemStatus::Accepted => p.accepted += 1,
                ItemStatus::Rejected => p.rejected += 1,
                ItemStatus::DroppedDuplicate => p.dropped_duplicate += 1,
            }
            if item.is_disputed() {
                p.disputed += 1;
            }
            for d in item.decisions.iter().filter(|d| d.verdict == Verdict::Reject) {
                p.rejecting_decisions += 1;
                if let Some(c) = d.reason_category {
                    *p.rejection_tally.get_mut(&c).expect("all categories present") += 1;
                }
            }
        }
        p.human_accepted = p.accepted + p.dropped_duplicate;
        p
    }
}
