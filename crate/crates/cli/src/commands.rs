use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use anyhow::{anyhow, Context};

use craqan_core::corpus::{article_seed, load_corpus, sample_sections, segment_sentences, split_sections, CorpusError};
use craqan_core::exec::Execution;
use craqan_core::jsonl::{self, JsonlSink};
use craqan_core::persona::PersonaRole;
use craqan_core::rci::{RciEngine, RciConfig};
use craqan_core::review::{export_dataset, ReviewStore, EVENT_LOG_FILE};
use craqan_core::stats::compute_stats;
use craqan_core::{DatasetRecord, Gateway, RciOutcome, RciTranscript, SegmentedSection};
use craqan_service::ServiceConfig;

use crate::config::RunConfig;

pub const SECTIONS_FILE: &str = "sections.jsonl";
pub const STATS_JSON: &str = "stats.json";
pub const STATS_TABLE: &str = "stats.txt";

/// How a command ended, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad configuration or usage (exit 2).
    Usage(anyhow::Error),
    /// The command could not finish (exit 1).
    Runtime(anyhow::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Completion {
    Full,
    /// Some inputs failed; the rest were processed (exit 1).
    Partial,
}

pub type CommandResult = Result<Completion, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn prepare_output_dir(config: &RunConfig) -> Result<&Path, Failure> {
    let dir = config.output_dir.as_path();
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(usage)?;
    Ok(dir)
}

fn gateway_for(config: &RunConfig, role: PersonaRole) -> Result<Gateway, Failure> {
    let backend = config.backend.for_role(role).map_err(usage)?;
    Gateway::from_config(backend).with_context(|| format!("{role:?} backend")).map_err(usage)
}

pub fn ingest(config: &RunConfig) -> CommandResult {
    let corpus = config
        .corpus_path
        .as_deref()
        .ok_or_else(|| usage(anyhow!("no corpus given; set corpus_path or pass --corpus")))?;
    let registry = config.personas().map_err(usage)?;
    let splitter = registry.splitter().map_err(usage)?;
    let gateway = gateway_for(config, PersonaRole::Splitter)?;
    let out_dir = prepare_output_dir(config)?;

    let load = load_corpus(corpus).map_err(|e| match e {
        CorpusError::NotFound(_) | CorpusError::CorpusEmpty(_) => usage(e),
        _ => runtime(e),
    })?;
    let mut partial = !load.failures.is_empty();
    for failure in &load.failures {
        eprintln!("failed to load {}: {}", failure.path.display(), failure.reason);
    }

    let mut sampled = Vec::new();
    for article in &load.articles {
        match split_sections(article) {
            Ok(sections) => {
                let chosen =
                    sample_sections(&sections, config.sections_per_article, article_seed(config.seed, &article.article_id));
                eprintln!("{}: {} of {} sections", article.article_id, chosen.len(), sections.len());
                sampled.extend(chosen);
            }
            Err(e) => {
                eprintln!("{}: {e}", article.article_id);
                partial = true;
            }
        }
    }

    let exec = Execution::with_parallelism(config.parallelism);
    let results = exec.map(&sampled, |s| segment_sentences(s, &gateway, splitter));
    let mut segmented = Vec::with_capacity(results.len());
    for result in results {
        match result {
            Ok(s) => segmented.push(s),
            Err(e) => {
                eprintln!("skipped: {e}");
                partial = true;
            }
        }
    }
    let path = out_dir.join(SECTIONS_FILE);
    jsonl::write_all(&path, &segmented).map_err(runtime)?;
    let fallback = segmented.iter().filter(|s| s.fallback_segmentation).count();
    println!(
        "wrote {} sections from {} articles to {} ({fallback} with fallback segmentation)",
        segmented.len(),
        load.articles.len(),
        path.display()
    );
    Ok(if partial { Completion::Partial } else { Completion::Full })
}

fn transcripts_path(out_dir: &Path, run_id: &str) -> PathBuf {
    out_dir.join(format!("rci_{run_id}.jsonl"))
}

/// Every `rci_*.jsonl` in `dir`, in file name order.
fn all_transcripts(dir: &Path) -> Result<Vec<RciTranscript>, Failure> {
    let mut paths: Vec<PathBuf> = match std::fs::read_dir(dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("rci_") && n.ends_with(".jsonl"))
            })
            .collect(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(runtime(e)),
    };
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        out.extend(jsonl::read_complete::<RciTranscript>(&path).map_err(runtime)?.0);
    }
    Ok(out)
}

/// Loads finished transcripts for a resumed run, cutting off a record left
/// half-written by an interrupted one.
fn resume(path: &Path) -> Result<Vec<RciTranscript>, Failure> {
    let (done, good_len) = jsonl::read_complete::<RciTranscript>(path).map_err(runtime)?;
    let len = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
    if good_len < len {
        tracing::warn!(path = %path.display(), "discarding incomplete final transcript");
        OpenOptions::new()
            .write(true)
            .open(path)
            .and_then(|f| f.set_len(good_len))
            .with_context(|| format!("cannot repair {}", path.display()))
            .map_err(runtime)?;
    }
    Ok(done)
}

#[derive(Debug, Default, PartialEq, Eq)]
struct Tally {
    accepted: usize,
    exhausted: usize,
    failed: usize,
}

impl Tally {
    fn of<'a>(transcripts: impl IntoIterator<Item = &'a RciTranscript>) -> Self {
        let mut t = Tally::default();
        for transcript in transcripts {
            match transcript.outcome {
                RciOutcome::PanelAccepted => t.accepted += 1,
                RciOutcome::Exhausted => t.exhausted += 1,
                RciOutcome::GenerationFailed => t.failed += 1,
            }
        }
        t
    }
}

pub fn generate(config: &RunConfig, stop: Arc<AtomicBool>) -> CommandResult {
    let out_dir = prepare_output_dir(config)?;
    let sections_path = out_dir.join(SECTIONS_FILE);
    if !sections_path.exists() {
        return Err(usage(anyhow!("{} not found; run `craqan ingest` first", sections_path.display())));
    }
    let sections: Vec<SegmentedSection> = jsonl::read_all(&sections_path).map_err(usage)?;
    let registry = config.personas().map_err(usage)?;
    let generator = registry.generator().map_err(usage)?;
    let panel = config.panel(&registry).map_err(usage)?;
    let generator_gateway = gateway_for(config, PersonaRole::Generator)?;
    let separate_reviewer_backend = config.backend.for_role(PersonaRole::Reviewer).map_err(usage)?
        != config.backend.for_role(PersonaRole::Generator).map_err(usage)?;
    let reviewer_gateway =
        if separate_reviewer_backend { Some(gateway_for(config, PersonaRole::Reviewer)?) } else { None };

    let run_id = config.run_id();
    let path = transcripts_path(out_dir, &run_id);
    let done = resume(&path)?;
    let done_ids: BTreeSet<&str> = done.iter().map(|t| t.section_id.as_str()).collect();
    let (eligible, too_short): (Vec<&SegmentedSection>, Vec<&SegmentedSection>) =
        sections.iter().partition(|s| s.len() >= 2);
    if !too_short.is_empty() {
        eprintln!("skipping {} sections with fewer than 2 sentences", too_short.len());
    }
    let todo: Vec<SegmentedSection> =
        eligible.into_iter().filter(|s| !done_ids.contains(s.section_id.as_str())).cloned().collect();
    if !done.is_empty() {
        eprintln!("resuming run {run_id}: {} sections already done, {} to go", done.len(), todo.len());
    }

    let exec = Execution::with_parallelism(config.parallelism);
    let rci_config = RciConfig { run_id: run_id.clone(), seed: config.seed, max_iterations: config.max_iterations };
    let mut engine = RciEngine::new(generator, &panel, &generator_gateway, rci_config).with_execution(exec);
    if let Some(g) = &reviewer_gateway {
        engine = engine.with_reviewer_gateway(g);
    }
    let sink = JsonlSink::append_to(&path).map_err(runtime)?;
    let results = exec.map(&todo, |section| {
        if stop.load(Ordering::SeqCst) {
            return None;
        }
        let transcript = engine.run(section);
        let written = sink.push(&transcript);
        Some((transcript, written))
    });

    let mut finished = Vec::new();
    let mut write_errors = 0;
    for (transcript, written) in results.into_iter().flatten() {
        if let Err(e) = written {
            eprintln!("could not save {}: {e}", transcript.section_id);
            write_errors += 1;
        }
        finished.push(transcript);
    }
    let not_started = todo.len() - finished.len();
    let total = Tally::of(done.iter().chain(&finished));
    println!(
        "run {run_id}: {} accepted, {} exhausted, {} failed ({} sections this invocation{})",
        total.accepted,
        total.exhausted,
        total.failed,
        finished.len(),
        if not_started > 0 { format!(", {not_started} not started") } else { String::new() }
    );
    if not_started > 0 {
        eprintln!("interrupted; re-run the same command to resume");
    }
    let partial = not_started > 0 || write_errors > 0 || total.failed > 0;
    Ok(if partial { Completion::Partial } else { Completion::Full })
}

pub fn serve(config: &RunConfig) -> CommandResult {
    let out_dir = prepare_output_dir(config)?;
    let store = Arc::new(ReviewStore::open_dir(out_dir).map_err(runtime)?);
    let transcripts = all_transcripts(out_dir)?;
    let created = store.enqueue_accepted(&transcripts).map_err(runtime)?;
    let attempted = craqan_core::stats::attempted_sections(&transcripts);
    eprintln!("queued {created} new items from {} transcripts", transcripts.len());

    let service = ServiceConfig { addr: config.service_addr(), export_dir: out_dir.to_path_buf(), attempted_sections: attempted };
    let rt = tokio::runtime::Runtime::new().map_err(runtime)?;
    rt.block_on(async {
        let listener = craqan_service::bind(&service).await.map_err(runtime)?;
        let addr = listener.local_addr().map_err(runtime)?;
        println!("listening on http://{addr}");
        craqan_service::serve(listener, store, &service, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(runtime)
    })?;
    Ok(Completion::Full)
}

pub fn export(config: &RunConfig) -> CommandResult {
    let out_dir = prepare_output_dir(config)?;
    let store = ReviewStore::open_dir(out_dir).map_err(runtime)?;
    let dedup = store.dedup().map_err(runtime)?;
    let summary = export_dataset(&dedup.kept, out_dir).map_err(runtime)?;
    println!(
        "exported {} records to {} ({} duplicates dropped)",
        summary.record_count,
        summary.release_path.display(),
        dedup.dropped.len()
    );
    Ok(Completion::Full)
}

pub fn stats(config: &RunConfig, release: Option<&Path>) -> CommandResult {
    let out_dir = prepare_output_dir(config)?;
    let release_path = release.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join(craqan_core::review::RELEASE_FILE));
    if !release_path.exists() {
        return Err(usage(anyhow!("{} not found; run `craqan export` first", release_path.display())));
    }
    let records: Vec<DatasetRecord> = jsonl::read_all(&release_path).map_err(runtime)?;
    let transcripts = all_transcripts(out_dir)?;
    let state = ReviewStore::read_state(&out_dir.join(EVENT_LOG_FILE)).map_err(runtime)?;
    let report = compute_stats(&records, &transcripts, &state);
    let table = report.render_table();
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    std::fs::write(out_dir.join(STATS_JSON), json).map_err(runtime)?;
    std::fs::write(out_dir.join(STATS_TABLE), &table).map_err(runtime)?;
    print!("{table}");
    Ok(Completion::Full)
}
