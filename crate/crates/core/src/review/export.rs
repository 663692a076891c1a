use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{DatasetRecord, ReviewError, ReviewItem};
use crate::stats::{GapReport, ReleaseCounts, QUANTILE_METHOD};

pub const RELEASE_FILE: &str = "release.jsonl";
pub const META_FILE: &str = "release_meta.json";

/// Sidecar describing a release. Contains no timestamps, so re-exporting
/// unchanged items reproduces it byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseMeta {
    #[serde(flatten)]
    pub counts: ReleaseCounts,
    pub run_ids: Vec<String>,
    pub human_reviewer_ids: Vec<String>,
    pub quantile_method: String,
    pub coreference_gap: GapReport,
}

impl ReleaseMeta {
    pub fn of(records: &[DatasetRecord]) -> Self {
        Self {
            counts: ReleaseCounts::of(records),
            run_ids: records.iter().map(|r| r.provenance.run_id.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
            human_reviewer_ids: records
                .iter()
                .flat_map(|r| r.provenance.human_reviewer_ids.iter().cloned())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            quantile_method: QUANTILE_METHOD.to_string(),
            coreference_gap: GapReport::of(records),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub release_path: PathBuf,
    pub meta_path: PathBuf,
    pub record_count: usize,
}

/// Writes `release.jsonl` and `release_meta.json` into `dest_dir`, sorted
/// by `(article_id, section_id)`. Each file is written to a temporary name
/// and renamed into place.
pub fn export_dataset(kept: &[ReviewItem], dest_dir: &Path) -> Result<ExportSummary, ReviewError> {
    let mut records: Vec<DatasetRecord> = kept.iter().map(ReviewItem::to_record).collect();
    records.sort_by(|a, b| (&a.article_id, &a.section_id).cmp(&(&b.article_id, &b.section_id)));
    if let Some(w) = records.windows(2).find(|w| w[0].section_id == w[1].section_id) {
        return Err(ReviewError::Validation(format!(
            "section {} appears more than once; run dedup before exporting",
            w[0].section_id
        )));
    }

    let mut release = Vec::new();
    for r in &records {
        serde_json::to_writer(&mut release, r).expect("record serializes");
        release.push(b'\n');
    }
    let mut meta = serde_json::to_vec_pretty(&ReleaseMeta::of(&records)).expect("meta serializes");
    meta.push(b'\n');

    let release_path = dest_dir.join(RELEASE_FILE);
    let meta_path = dest_dir.join(META_FILE);
    std::fs::create_dir_all(dest_dir).map_err(|source| io(dest_dir, source))?;
    write_atomic(&release_path, &release)?;
    write_atomic(&meta_path, &meta)?;
    Ok(ExportSummary { release_path, meta_path, record_count: records.len() })
}

fn io(path: &Path, source: std::io::Error) -> ReviewError {
    ReviewError::Io { path: path.display().to_string(), source }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReviewError> {
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(|e| io(&tmp, e))?;
    file.write_all(bytes).and_then(|_| file.sync_all()).map_err(|e| io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io(path, e))
}
