//! Dataset characteristics, rejection tallies and yield.
//!
//! Quantiles use linear interpolation between closest ranks: for sorted
//! values `x` of length `n`, `h = (n - 1) q` and the result is
//! `x[floor(h)] + (h - floor(h)) (x[floor(h) + 1] - x[floor(h)])`.

use std::collections::{BTreeMap, BTreeSet};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::SectionKind;
use crate::rci::RciTranscript;
use crate::review::{DatasetRecord, RejectionCategory, ReviewState};

pub const QUANTILE_METHOD: &str = "linear interpolation between closest ranks, h = (n-1)q";

/// p10 / p50 / p90 of the coreference gap reported for the published
/// release.
pub const PUBLISHED_GAP_QUANTILES: [f64; 3] = [1.0, 1.5, 4.0];

const QUANTILE_TOLERANCE: f64 = 1e-9;

/// The `q`-quantile of `sorted`, or `None` when empty.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    let last = sorted.len().checked_sub(1)?;
    let h = last as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(last);
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

/// p10 / p50 / p90. `None` marks an undefined quantile (no data).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub p10: Option<f64>,
    pub p50: Option<f64>,
    pub p90: Option<f64>,
}

impl Quantiles {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        v.sort_by(f64::total_cmp);
        Self { p10: quantile(&v, 0.1), p50: quantile(&v, 0.5), p90: quantile(&v, 0.9) }
    }

    pub fn as_array(&self) -> [Option<f64>; 3] {
        [self.p10, self.p50, self.p90]
    }

    pub fn matches(&self, expected: [f64; 3]) -> bool {
        self.as_array()
            .iter()
            .zip(expected)
            .all(|(got, want)| got.is_some_and(|g| (g - want).abs() <= QUANTILE_TOLERANCE))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapDefinition {
    /// Largest difference between consecutive required indices.
    MaxConsecutive,
    /// Last required index minus the first.
    Span,
}

impl GapDefinition {
    pub const ALL: [GapDefinition; 2] = [GapDefinition::MaxConsecutive, GapDefinition::Span];

    pub fn gap(self, indices: &[usize]) -> Option<usize> {
        match self {
            GapDefinition::MaxConsecutive => coreference_gap(indices),
            GapDefinition::Span => coreference_span(indices),
        }
    }
}

/// Largest difference between consecutive sorted required indices.
/// `None` for fewer than two indices.
pub fn coreference_gap(indices: &[usize]) -> Option<usize> {
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    sorted.windows(2).map(|w| w[1] - w[0]).max()
}

/// `max - min` of the required indices. `None` for fewer than two.
pub fn coreference_span(indices: &[usize]) -> Option<usize> {
    if indices.len() < 2 {
        return None;
    }
    Some(indices.iter().max()? - indices.iter().min()?)
}

/// Record counts of a release.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseCounts {
    pub record_count: usize,
    pub unique_articles: usize,
    pub qa_from_summary: usize,
    pub qa_from_body: usize,
    pub qa_requiring_2: usize,
    pub qa_requiring_3: usize,
}

impl ReleaseCounts {
    pub fn of(records: &[DatasetRecord]) -> Self {
        let count = |f: &dyn Fn(&DatasetRecord) -> bool| records.iter().filter(|r| f(r)).count();
        Self {
            record_count: records.len(),
            unique_articles: records.iter().map(|r| &r.article_id).collect::<BTreeSet<_>>().len(),
            qa_from_summary: count(&|r| r.section_kind == SectionKind::Summary),
            qa_from_body: count(&|r| r.section_kind == SectionKind::Body),
            qa_requiring_2: count(&|r| r.required_sentence_indices.len() == 2),
            qa_requiring_3: count(&|r| r.required_sentence_indices.len() == 3),
        }
    }
}

/// Gap quantiles under both definitions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub max_consecutive: Quantiles,
    pub span: Quantiles,
    /// Definitions whose quantiles equal [`PUBLISHED_GAP_QUANTILES`].
    pub matching_published: Vec<GapDefinition>,
}

impl GapReport {
    pub fn of(records: &[DatasetRecord]) -> Self {
        let quantiles = |d: GapDefinition| {
            Quantiles::of(records.iter().filter_map(|r| d.gap(&r.required_sentence_indices)).map(|g| g as f64))
        };
        let max_consecutive = quantiles(GapDefinition::MaxConsecutive);
        let span = quantiles(GapDefinition::Span);
        let matching_published = GapDefinition::ALL
            .into_iter()
            .filter(|&d| {
                let q = if d == GapDefinition::MaxConsecutive { max_consecutive } else { span };
                q.matches(PUBLISHED_GAP_QUANTILES)
            })
            .collect();
        Self { max_consecutive, span, matching_published }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    #[serde(flatten)]
    pub counts: ReleaseCounts,
    /// Sections contributing records, per article in the release (not
    /// sections in the source article).
    pub sections_per_article: Quantiles,
    pub sentences_per_section: Quantiles,
    pub words_per_section: Quantiles,
    /// Max consecutive gap between required indices.
    pub sentences_between_coreferences: Quantiles,
    /// Span between first and last required index.
    pub sentences_between_coreferences_span: Quantiles,
    pub gap_definitions_matching_published: Vec<GapDefinition>,
    pub quantile_method: String,
    pub attempted_sections: usize,
    pub human_accepted: usize,
    /// `None` when nothing was attempted.
    pub yield_fraction: Option<f64>,
    pub rejecting_decisions: usize,
    pub rejection_tally: IndexMap<RejectionCategory, usize>,
}

/// Sections attempted by the transcripts, counting each
/// `(run_id, section_id)` once.
pub fn attempted_sections(transcripts: &[RciTranscript]) -> usize {
    transcripts.iter().map(|t| (t.run_id(), t.section_id.as_str())).collect::<BTreeSet<_>>().len()
}

/// Human-accepted items (including those later dropped as duplicates)
/// divided by attempted sections. `None` for zero attempts.
pub fn compute_yield(transcripts: &[RciTranscript], state: &ReviewState) -> Option<f64> {
    let attempted = attempted_sections(transcripts);
    (attempted > 0).then(|| state.progress().human_accepted as f64 / attempted as f64)
}

pub fn compute_stats(release: &[DatasetRecord], transcripts: &[RciTranscript], state: &ReviewState) -> StatsReport {
    let mut per_article: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in release {
        per_article.entry(&r.article_id).or_default().insert(&r.section_id);
    }
    let gaps = GapReport::of(release);
    let progress = state.progress();
    StatsReport {
        counts: ReleaseCounts::of(release),
        sections_per_article: Quantiles::of(per_article.values().map(|s| s.len() as f64)),
        sentences_per_section: Quantiles::of(release.iter().map(|r| r.sentences.len() as f64)),
        words_per_section: Quantiles::of(release.iter().map(|r| r.word_count() as f64)),
        sentences_between_coreferences: gaps.max_consecutive,
        sentences_between_coreferences_span: gaps.span,
        gap_definitions_matching_published: gaps.matching_published,
        quantile_method: QUANTILE_METHOD.to_string(),
        attempted_sections: attempted_sections(transcripts),
        human_accepted: progress.human_accepted,
        yield_fraction: compute_yield(transcripts, state),
        rejecting_decisions: progress.rejecting_decisions,
        rejection_tally: progress.rejection_tally,
    }
}

fn fmt_num(v: Option<f64>) -> String {
    match v {
        Some(v) if v.fract() == 0.0 => format!("{v:.0}"),
        Some(v) => format!("{v:.2}").trim_end_matches('0').to_string(),
        None => "-".to_string(),
    }
}

impl StatsReport {
    /// Aligned plain-text table.
    pub fn render_table(&self) -> String {
        let c = &self.counts;
        let mut rows: Vec<(String, String)> = vec![
            ("Records".into(), c.record_count.to_string()),
            ("Unique articles".into(), c.unique_articles.to_string()),
            ("QA pairs from summary section".into(), c.qa_from_summary.to_string()),
            ("QA pairs from body sections".into(), c.qa_from_body.to_string()),
            ("QA pairs requiring 2 sentences".into(), c.qa_requiring_2.to_string()),
            ("QA pairs requiring 3 sentences".into(), c.qa_requiring_3.to_string()),
        ];
        let quantile_rows = [
            ("Sections per article", &self.sections_per_article),
            ("Sentences per section", &self.sentences_per_section),
            ("Words per section", &self.words_per_section),
            ("Sentences between coreferences (max gap)", &self.sentences_between_coreferences),
            ("Sentences between coreferences (span)", &self.sentences_between_coreferences_span),
        ];
        rows.push(("".into(), format!("{:>7} {:>7} {:>7}", "p10", "p50", "p90")));
        for (label, q) in quantile_rows {
            rows.push((
                label.into(),
                format!("{:>7} {:>7} {:>7}", fmt_num(q.p10), fmt_num(q.p50), fmt_num(q.p90)),
            ));
        }
        rows.push(("".into(), String::new()));
        rows.push(("Attempted sections".into(), self.attempted_sections.to_string()));
        rows.push(("Human-accepted".into(), self.human_accepted.to_string()));
        rows.push((
            "Yield".into(),
            self.yield_fraction.map_or_else(|| "undefined".into(), |y| format!("{:.1}%", y * 100.0)),
        ));
        rows.push(("".into(), String::new()));
        rows.push(("Rejection reason".into(), "count".into()));
        for (category, n) in &self.rejection_tally {
            rows.push((category.label().into(), n.to_string()));
        }
        rows.push(("Total rejecting decisions".into(), self.rejecting_decisions.to_string()));

        let width = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (label, value) in rows {
            let line = format!("{label:<width$}  {value}");
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}
