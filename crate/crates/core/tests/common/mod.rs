#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use craqan_core::corpus::{SectionKind, SegmentedSection};
use craqan_core::gateway::mock::{MockBackend, MockRule};
use craqan_core::gateway::{Gateway, RetryPolicy, VirtualClock};
use craqan_core::persona::{builtin_personas, PersonaRegistry};
use craqan_core::rci::{CandidateQa, RciIteration, RciOutcome, RciTranscript, ReviewVerdict, RunMetadata};
use craqan_core::review::{item_id, HumanDecision, ItemStatus, RejectionCategory, ReviewEvent, ReviewItem};

pub const REVIEWERS: [&str; 4] = ["content_cohesion", "information_accuracy", "linguistic_quality", "required_sentence"];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn personas() -> PersonaRegistry {
    builtin_personas().expect("shipped personas load")
}

/// Gateway over a mock with instant backoff.
pub fn mock_gateway(rules: Vec<MockRule>) -> Gateway {
    let policy = RetryPolicy { jitter: 0.0, ..RetryPolicy::default() };
    Gateway::new(Arc::new(MockBackend::new(rules)), policy, 100_000).with_clock(Arc::new(VirtualClock::default()))
}

pub fn verdict_json(ok: bool, reason: &str) -> String {
    json!({"reason": reason, "is_quality": ok}).to_string()
}

pub fn t(secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(1_700_000_000 + secs, 0).unwrap()
}

/// A worked example from the generator prompt.
#[derive(Debug, Clone)]
pub struct FewShot {
    pub section: SegmentedSection,
    /// Every `YOU:` candidate, in order.
    pub candidates: Vec<CandidateQa>,
    /// Every `REVIEWER:` line, in order.
    pub reviewer_lines: Vec<String>,
}

/// Parses the four worked examples out of the shipped generator prompt.
pub fn few_shot_examples() -> Vec<FewShot> {
    let registry = personas();
    let template = &registry.generator().unwrap().template;
    let mut out: Vec<FewShot> = Vec::new();
    for line in template.lines() {
        if line.starts_with("Example ") {
            out.push(FewShot {
                section: SegmentedSection::new("", "", SectionKind::Body, Vec::<String>::new()),
                candidates: vec![],
                reviewer_lines: vec![],
            });
        }
        let number = out.len();
        let Some(current) = out.last_mut() else { continue };
        if let Some(rest) = line.strip_prefix("SEGMENTED_TEXT: ") {
            if rest.contains("PLACEHOLDER") {
                break;
            }
            let items: Vec<Value> = serde_json::from_str(rest).unwrap();
            let sentences = items.iter().map(|v| v["sentence"].as_str().unwrap().to_string());
            let id = format!("example/{number}");
            current.section = SegmentedSection::new(id, "example", SectionKind::Body, sentences);
        } else if let Some(rest) = line.strip_prefix("YOU: ") {
            current.candidates.push(CandidateQa::from_json(&serde_json::from_str(rest).unwrap()).unwrap());
        } else if let Some(rest) = line.strip_prefix("REVIEWER: ") {
            current.reviewer_lines.push(rest.to_string());
        }
    }
    assert_eq!(out.len(), 4);
    out
}

/// The script replaying worked example 4: the required-sentence reviewer
/// rejects the first candidate, everyone accepts the revision.
pub fn example4_rules() -> Vec<MockRule> {
    let ex = &few_shot_examples()[3];
    let mut rules = vec![
        MockRule::reply("generator", Some(1), ex.candidates[0].to_prompt_json()),
        MockRule::reply("generator", Some(2), ex.candidates[1].to_prompt_json()),
        MockRule::reply("required_sentence", Some(1), verdict_json(false, &ex.reviewer_lines[0])),
    ];
    for r in REVIEWERS {
        rules.push(MockRule::reply(r, None, verdict_json(true, &ex.reviewer_lines[1])));
    }
    rules
}

pub fn segmented(section_id: &str, n: usize) -> SegmentedSection {
    let article = section_id.split('/').next().unwrap_or(section_id);
    SegmentedSection::new(section_id, article, SectionKind::Body, (0..n).map(|i| format!("Sentence number {i}.")))
}

/// A transcript with a single accepted or rejected iteration.
pub fn transcript(run_id: &str, section_id: &str, accepted: bool) -> RciTranscript {
    let section = segmented(section_id, 4);
    let verdicts = REVIEWERS
        .iter()
        .map(|r| ReviewVerdict { persona_name: r.to_string(), reason: "checked".into(), is_quality: accepted })
        .collect();
    RciTranscript {
        section_id: section.section_id.clone(),
        article_id: section.article_id.clone(),
        section,
        iterations: vec![RciIteration {
            iteration_number: 1,
            candidate: CandidateQa::new(format!("Question about {section_id}?"), "Answer.", [0, 2]),
            structural_valid: true,
            violations: vec![],
            verdicts,
            feedback: None,
        }],
        outcome: if accepted { RciOutcome::PanelAccepted } else { RciOutcome::Exhausted },
        failure: None,
        run_metadata: RunMetadata {
            run_id: run_id.into(),
            seed: 0,
            generator_model: "gpt-4".into(),
            reviewer_models: vec!["gpt-4".into(); 4],
            started_at: t(0),
            finished_at: t(1),
        },
        calls: vec![],
    }
}

pub const REFERENCE_TALLY: [(RejectionCategory, usize); 9] = [
    (RejectionCategory::IrrelevantSentencesIncluded, 47),
    (RejectionCategory::ImportantSentencesExcluded, 43),
    (RejectionCategory::ParsingOrFormattingErrors, 36),
    (RejectionCategory::IncompleteOrUnclearAnswer, 17),
    (RejectionCategory::QuestionAmbiguity, 17),
    (RejectionCategory::CoreferenceErrors, 11),
    (RejectionCategory::Other, 9),
    (RejectionCategory::WrongInformation, 7),
    (RejectionCategory::CompoundOrDoubleQuestions, 6),
];

/// Synthetic curation run: 578 attempted sections over three runs, 428 of
/// them panel-accepted and queued. Humans accept 348 (33 of them after one
/// dissenting vote) and reject 80 with two votes each, giving 193 rejecting
/// decisions in the reference tally proportions. The 348 accepted items cover 261
/// distinct sections: 75 sections are accepted in two runs and 6 in all
/// three.
pub struct CurationFixture {
    pub transcripts: Vec<RciTranscript>,
    pub events: Vec<ReviewEvent>,
}

pub fn curation_fixture() -> CurationFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(578);
    let section = |i: usize| format!("art{:02}/{}", i % 70, i);

    // (run, section index, human outcome) for every queued item
    #[derive(Clone, Copy, PartialEq)]
    enum Human {
        Accept,
        AcceptAfterDissent,
        Reject,
    }
    let mut queued: Vec<(&str, usize, Human)> = Vec::new();
    for s in 0..261 {
        queued.push(("run-a", s, Human::Accept));
    }
    for s in 0..81 {
        queued.push(("run-b", s, Human::Accept));
    }
    for s in 0..6 {
        queued.push(("run-c", s, Human::Accept));
    }
    for s in 261..341 {
        queued.push(("run-b", s, Human::Reject));
    }
    // 33 accepted items drew one reject before the second accept
    let mut accepted_idx: Vec<usize> = (0..348).collect();
    accepted_idx.shuffle(&mut rng);
    for &i in &accepted_idx[..33] {
        queued[i].2 = Human::AcceptAfterDissent;
    }

    let mut transcripts: Vec<RciTranscript> =
        queued.iter().map(|&(run, s, _)| transcript(run, &section(s), true)).collect();
    // 150 attempts the panel never accepted
    for s in 341..491 {
        transcripts.push(transcript("run-c", &section(s), false));
    }
    assert_eq!(transcripts.len(), 578);

    let mut categories: Vec<RejectionCategory> =
        REFERENCE_TALLY.iter().flat_map(|&(c, n)| std::iter::repeat_n(c, n)).collect();
    categories.shuffle(&mut rng);
    let mut categories = categories.into_iter();

    let mut events = Vec::new();
    let mut seq = 0;
    let mut next = || {
        seq += 1;
        seq
    };
    let mut order: Vec<usize> = (0..queued.len()).collect();
    order.shuffle(&mut rng);
    for &i in &order {
        let tr = &transcripts[i];
        let item = ReviewItem {
            item_id: item_id(tr.run_id(), &tr.section_id),
            run_id: tr.run_id().into(),
            section_id: tr.section_id.clone(),
            article_id: tr.article_id.clone(),
            segmented: tr.section.clone(),
            candidate: tr.iterations[0].candidate.clone(),
            iteration_count: 1,
            status: ItemStatus::Pending,
            decisions: vec![],
            enqueued_seq: 0,
            finalized_seq: None,
        };
        events.push(ReviewEvent::Enqueued { seq: next(), item: Box::new(item) });
    }
    for (k, &i) in order.iter().enumerate() {
        let tr = &transcripts[i];
        let id = item_id(tr.run_id(), &tr.section_id);
        let when = t(k as i64 * 10);
        let decisions = match queued[i].2 {
            Human::Accept => vec![HumanDecision::accept("ana", when), HumanDecision::accept("ben", when)],
            Human::AcceptAfterDissent => vec![
                HumanDecision::accept("ana", when),
                HumanDecision::reject("ben", categories.next().unwrap(), when),
                HumanDecision::accept("cy", when),
            ],
            Human::Reject => vec![
                HumanDecision::reject("ana", categories.next().unwrap(), when),
                HumanDecision::reject("ben", categories.next().unwrap(), when),
            ],
        };
        for decision in decisions {
            events.push(ReviewEvent::Decided { seq: next(), item_id: id.clone(), decision });
        }
    }
    assert!(categories.next().is_none());
    CurationFixture { transcripts, events }
}
