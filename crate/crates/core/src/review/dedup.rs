use std::collections::BTreeMap;

use super::ReviewItem;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DedupResult {
    /// One item per section, sorted by `(article_id, section_id)`.
    pub kept: Vec<ReviewItem>,
    /// Sorted by `item_id`.
    pub dropped: Vec<ReviewItem>,
}

/// Keeps the earliest-accepted item per `section_id`, breaking ties on
/// `item_id`. The result does not depend on input order.
pub fn dedup(items: &[ReviewItem]) -> DedupResult {
    let mut groups: BTreeMap<(&str, &str), Vec<&ReviewItem>> = BTreeMap::new();
    for item in items {
        groups.entry((&item.article_id, &item.section_id)).or_default().push(item);
    }
    let mut result = DedupResult::default();
    for mut group in groups.into_values() {
        group.sort_by(|a, b| {
            let key = |i: &ReviewItem| (i.finalized_seq.unwrap_or(u64::MAX), i.item_id.clone());
            key(a).cmp(&key(b))
        });
        let mut group = group.into_iter().cloned();
        result.kept.extend(group.next());
        result.dropped.extend(group);
    }
    result.dropped.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    result
}
