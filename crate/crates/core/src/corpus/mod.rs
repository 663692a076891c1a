//! Corpus ingestion: Markdown articles in, indexed sentences out.

mod markdown;
mod segment;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use markdown::plain_text;
pub use segment::{fallback_split, segment_sentences, SegmentError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub article_id: String,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
    pub markdown: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SectionKind {
    Summary,
    Body,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub section_id: String,
    pub article_id: String,
    pub kind: SectionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<String>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedSentence {
    pub index: usize,
    pub sentence: String,
}

/// A section as the generator sees it. Serialized one per line in
/// `sections.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentedSection {
    pub section_id: String,
    pub article_id: String,
    pub kind: SectionKind,
    pub sentences: Vec<IndexedSentence>,
    #[serde(default)]
    pub fallback_segmentation: bool,
}

impl SegmentedSection {
    /// Numbers `sentences` from zero.
    pub fn new<S: Into<String>>(
        section_id: impl Into<String>,
        article_id: impl Into<String>,
        kind: SectionKind,
        sentences: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            section_id: section_id.into(),
            article_id: article_id.into(),
            kind,
            sentences: sentences
                .into_iter()
                .enumerate()
                .map(|(index, s)| IndexedSentence { index, sentence: s.into() })
                .collect(),
            fallback_segmentation: false,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sentences joined by single spaces.
    pub fn text(&self) -> String {
        self.sentences.iter().map(|s| s.sentence.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(|s| s.sentence.split_whitespace().count()).sum()
    }

    /// Checks contiguous indices and non-empty sentences.
    pub fn validate(&self) -> Result<(), String> {
        for (pos, s) in self.sentences.iter().enumerate() {
            if s.index != pos {
                return Err(format!("sentence at position {pos} has index {}", s.index));
            }
            if s.sentence.trim().is_empty() {
                return Err(format!("sentence {pos} is empty"));
            }
        }
        Ok(())
    }
}

/// Collapses whitespace runs to single spaces and trims.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("corpus path {0} does not exist")]
    NotFound(PathBuf),
    #[error("corpus at {0} contains no loadable articles")]
    CorpusEmpty(PathBuf),
    #[error("i/o error reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("article {0} has no extractable text")]
    NoSections(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadFailure {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct CorpusLoad {
    /// Sorted by `article_id`.
    pub articles: Vec<Article>,
    pub failures: Vec<LoadFailure>,
}

/// Loads every `.md` file in a directory, or every file listed in a
/// manifest.
///
/// Manifest lines are `path [article_id [source_url]]`, whitespace
/// separated, with paths relative to the manifest's directory. Blank lines
/// and lines starting with `#` are ignored. Without an explicit id, the
/// file stem is used.
pub fn load_corpus(path: &Path) -> Result<CorpusLoad, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::NotFound(path.to_path_buf()));
    }
    let entries = if path.is_dir() { directory_entries(path)? } else { manifest_entries(path)? };

    let mut load = CorpusLoad::default();
    let mut by_id: BTreeMap<String, Article> = BTreeMap::new();
    for entry in entries {
        match read_article(&entry) {
            Ok(article) if by_id.contains_key(&article.article_id) => {
                load.failures.push(LoadFailure {
                    path: entry.path,
                    reason: format!("duplicate article_id {}", article.article_id),
                });
            }
            Ok(article) => {
                by_id.insert(article.article_id.clone(), article);
            }
            Err(reason) => load.failures.push(LoadFailure { path: entry.path, reason }),
        }
    }
    for failure in &load.failures {
        tracing::warn!(path = %failure.path.display(), "skipping article: {}", failure.reason);
    }
    if by_id.is_empty() {
        return Err(CorpusError::CorpusEmpty(path.to_path_buf()));
    }
    load.articles = by_id.into_values().collect();
    Ok(load)
}

struct Entry {
    path: PathBuf,
    article_id: Option<String>,
    source_url: Option<String>,
}

fn directory_entries(dir: &Path) -> Result<Vec<Entry>, CorpusError> {
    let io_err = |source| CorpusError::Io { path: dir.to_path_buf(), source };
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("md")) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths.into_iter().map(|path| Entry { path, article_id: None, source_url: None }).collect())
}

fn manifest_entries(manifest: &Path) -> Result<Vec<Entry>, CorpusError> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|source| CorpusError::Io { path: manifest.to_path_buf(), source })?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|line| {
            let mut parts = line.split_whitespace();
            let rel = parts.next().expect("non-empty line");
            Entry {
                path: base.join(rel),
                article_id: parts.next().map(str::to_string),
                source_url: parts.next().map(str::to_string),
            }
        })
        .collect())
}

fn read_article(entry: &Entry) -> Result<Article, String> {
    let markdown = std::fs::read_to_string(&entry.path).map_err(|e| e.to_string())?;
    if markdown.trim().is_empty() {
        return Err("file is empty".into());
    }
    let stem = entry.path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let article_id = entry.article_id.clone().unwrap_or(stem);
    let title = markdown
        .lines()
        .find_map(|l| l.strip_prefix("# "))
        .map(|t| t.trim().to_string())
        .unwrap_or_else(|| article_id.clone());
    Ok(Article { article_id, title, source_url: entry.source_url.clone(), markdown })
}

/// Splits an article at its level-2 headings. Text before the first such
/// heading is the summary; each heading's body becomes a body section.
/// Sections whose plain text is empty are dropped.
///
/// Section ids are `<article_id>/summary` and `<article_id>/<n>` where `n`
/// is the 1-based position of the heading among all level-2 headings, so
/// ids stay stable when empty sections are dropped.
pub fn split_sections(article: &Article) -> Result<Vec<Section>, CorpusError> {
    let mut chunks: Vec<(Option<String>, Vec<&str>)> = vec![(None, Vec::new())];
    for line in article.markdown.lines() {
        if let Some(heading) = markdown::level2_heading(line) {
            chunks.push((Some(heading), Vec::new()));
        } else {
            chunks.last_mut().expect("non-empty").1.push(line);
        }
    }

    let mut sections = Vec::new();
    for (ordinal, (heading, lines)) in chunks.into_iter().enumerate() {
        let text = plain_text(&lines);
        if text.is_empty() {
            continue;
        }
        let (kind, section_id) = if ordinal == 0 {
            (SectionKind::Summary, format!("{}/summary", article.article_id))
        } else {
            (SectionKind::Body, format!("{}/{ordinal}", article.article_id))
        };
        sections.push(Section {
            section_id,
            article_id: article.article_id.clone(),
            kind,
            heading,
            text,
        });
    }
    if sections.is_empty() {
        return Err(CorpusError::NoSections(article.article_id.clone()));
    }
    Ok(sections)
}

/// Keeps the summary section (if any) plus `min(k, bodies)` body sections
/// drawn without replacement. The result keeps document order and depends
/// only on the inputs.
pub fn sample_sections(sections: &[Section], k: usize, seed: u64) -> Vec<Section> {
    let bodies: Vec<usize> = sections
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == SectionKind::Body)
        .map(|(i, _)| i)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = rand::seq::index::sample(&mut rng, bodies.len(), k.min(bodies.len()))
        .into_iter()
        .map(|i| bodies[i])
        .collect();
    chosen.extend(sections.iter().position(|s| s.kind == SectionKind::Summary));
    chosen.sort_unstable();
    chosen.into_iter().map(|i| sections[i].clone()).collect()
}

/// Per-article sampling seed derived from the run seed, so that articles
/// with the same layout do not all get the same sample.
pub fn article_seed(run_seed: u64, article_id: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(run_seed.to_le_bytes());
    hasher.update(article_id.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
