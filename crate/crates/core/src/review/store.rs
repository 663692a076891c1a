//! Durable review store: a JSON Lines event log plus its materialized
//! state.
//!
//! Every mutation is validated against the current state, written and
//! flushed to the log, and only then applied in memory, so an acknowledged
//! change is always on disk. Writes go through one mutex; reads take a
//! shared lock on the state. Opening the store takes an exclusive file lock
//! on the log, so two processes cannot write to it at once. A torn final
//! line left by a crash mid-write is discarded on open.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock, RwLockReadGuard};

use super::state::{ReviewEvent, ReviewState};
use super::{dedup, DedupResult, HumanDecision, ItemStatus, ReviewError, ReviewItem};
use crate::rci::RciTranscript;

pub const EVENT_LOG_FILE: &str = "review_events.jsonl";

pub struct ReviewStore {
    path: PathBuf,
    writer: Mutex<File>,
    state: RwLock<ReviewState>,
}

impl std::fmt::Debug for ReviewStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ReviewStore").field("path", &self.path).finish_non_exhaustive()
    }
}

impl ReviewStore {
    /// Opens (creating if needed) the event log at `path` and replays it.
    pub fn open(path: &Path) -> Result<Self, ReviewError> {
        let io_err = |source| ReviewError::Io { path: path.display().to_string(), source };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .read(true)
            .write(true)
            .open(path)
            .map_err(io_err)?;
        match file.try_lock() {
            Ok(()) => {}
            Err(std::fs::TryLockError::WouldBlock) => {
                return Err(ReviewError::Locked { path: path.display().to_string() })
            }
            Err(std::fs::TryLockError::Error(e)) => return Err(io_err(e)),
        }

        let (events, good_len) = read_events(&file)?;
        let file_len = file.metadata().map_err(io_err)?.len();
        if good_len < file_len {
            tracing::warn!(
                path = %path.display(),
                discarded = file_len - good_len,
                "discarding torn final event"
            );
            file.set_len(good_len).map_err(io_err)?;
        }
        file.seek(SeekFrom::End(0)).map_err(io_err)?;
        let state = ReviewState::replay(&events)?;
        Ok(Self { path: path.to_path_buf(), writer: Mutex::new(file), state: RwLock::new(state) })
    }

    /// Replays the log at `path` without locking or repairing it, for
    /// readers running beside a live store. A missing log is an empty
    /// state; a torn final line is ignored.
    pub fn read_state(path: &Path) -> Result<ReviewState, ReviewError> {
        let file = match File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ReviewState::default()),
            Err(source) => return Err(ReviewError::Io { path: path.display().to_string(), source }),
        };
        let (events, _) = read_events(&file)?;
        ReviewState::replay(&events)
    }

    /// Opens `<dir>/review_events.jsonl`.
    pub fn open_dir(dir: &Path) -> Result<Self, ReviewError> {
        Self::open(&dir.join(EVENT_LOG_FILE))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Read access to the materialized state.
    pub fn state(&self) -> RwLockReadGuard<'_, ReviewState> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn snapshot(&self) -> ReviewState {
        self.state().clone()
    }

    pub fn get(&self, item_id: &str) -> Result<ReviewItem, ReviewError> {
        self.state().get(item_id).cloned()
    }

    /// Queues the accepted candidate of `transcript`. Enqueueing the same
    /// `(run_id, section_id)` again returns the existing item.
    pub fn enqueue(&self, transcript: &RciTranscript) -> Result<ReviewItem, ReviewError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let item = match self.state().item_for(transcript)? {
            Some(item) => item,
            None => {
                let id = super::item_id(transcript.run_id(), &transcript.section_id);
                return self.get(&id);
            }
        };
        let id = item.item_id.clone();
        self.commit(&mut writer, |seq| ReviewEvent::Enqueued { seq, item: Box::new(item) })?;
        self.get(&id)
    }

    /// Enqueues every panel-accepted transcript, skipping the rest.
    /// Returns the number of newly created items.
    pub fn enqueue_accepted<'a>(
        &self,
        transcripts: impl IntoIterator<Item = &'a RciTranscript>,
    ) -> Result<usize, ReviewError> {
        let mut created = 0;
        for t in transcripts {
            if t.accepted_candidate().is_none() {
                continue;
            }
            let before = self.state().last_seq;
            self.enqueue(t)?;
            if self.state().last_seq != before {
                created += 1;
            }
        }
        Ok(created)
    }

    pub fn record_decision(&self, item_id: &str, decision: HumanDecision) -> Result<ReviewItem, ReviewError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        self.state().check_decision(item_id, &decision)?;
        let id = item_id.to_string();
        self.commit(&mut writer, |seq| ReviewEvent::Decided { seq, item_id: id, decision })?;
        self.get(item_id)
    }

    /// Drops duplicate accepted items, keeping the earliest accepted per
    /// section. Running it again is a no-op.
    pub fn dedup(&self) -> Result<DedupResult, ReviewError> {
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let result = dedup(&self.state().with_status(ItemStatus::Accepted));
        if !result.dropped.is_empty() {
            let item_ids: Vec<String> = result.dropped.iter().map(|i| i.item_id.clone()).collect();
            self.commit(&mut writer, |seq| ReviewEvent::DuplicatesDropped { seq, item_ids })?;
        }
        Ok(result)
    }

    fn commit(
        &self,
        writer: &mut File,
        make: impl FnOnce(u64) -> ReviewEvent,
    ) -> Result<(), ReviewError> {
        let event = make(self.state().last_seq + 1);
        self.state().validate(&event)?;
        let mut line = serde_json::to_string(&event).expect("event serializes");
        line.push('\n');
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.flush())
            .and_then(|_| writer.sync_data())
            .map_err(|source| ReviewError::Io { path: self.path.display().to_string(), source })?;
        self.state.write().unwrap_or_else(|e| e.into_inner()).apply(&event)
    }
}

/// Parses the log, returning the events and the byte length of the
/// well-formed prefix. Only the final line may be malformed.
fn read_events(file: &File) -> Result<(Vec<ReviewEvent>, u64), ReviewError> {
    let mut reader = BufReader::new(file);
    let mut events = Vec::new();
    let mut good_len = 0u64;
    let mut line = String::new();
    let mut line_no = 0;
    let mut pending_error: Option<ReviewError> = None;
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|source| ReviewError::Io { path: "event log".into(), source })?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if let Some(e) = pending_error.take() {
            // a malformed line followed by more data is corruption, not a torn tail
            return Err(e);
        }
        let complete = line.ends_with('\n');
        if line.trim().is_empty() && complete {
            good_len += n as u64;
            continue;
        }
        match serde_json::from_str::<ReviewEvent>(line.trim_end()) {
            Ok(event) if complete => {
                events.push(event);
                good_len += n as u64;
            }
            Ok(_) => {} // unterminated final line: treat as torn
            Err(e) => {
                pending_error = Some(ReviewError::Corrupt { line: line_no, message: e.to_string() });
            }
        }
    }
    Ok((events, good_len))
}
