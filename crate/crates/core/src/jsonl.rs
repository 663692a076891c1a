//! JSON Lines helpers shared by the stage outputs.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
}

/// Reads every non-blank line of `path` as a `T`.
pub fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let io_err = |source| JsonlError::Io { path: path.display().to_string(), source };
    let file = File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| JsonlError::Parse {
            path: path.display().to_string(),
            line: n + 1,
            source,
        })?;
        out.push(value);
    }
    Ok(out)
}

/// Reads the complete records of a file that may have been cut off
/// mid-write. Returns the records and the byte length of the well-formed
/// prefix; an unterminated or unparsable final line is left out. A missing
/// file reads as empty.
pub fn read_complete<T: DeserializeOwned>(path: &Path) -> Result<(Vec<T>, u64), JsonlError> {
    let io_err = |source| JsonlError::Io { path: path.display().to_string(), source };
    let text = match std::fs::read(path) {
        Ok(bytes) => bytes,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok((Vec::new(), 0)),
        Err(e) => return Err(io_err(e)),
    };
    let mut out = Vec::new();
    let mut good_len = 0usize;
    let mut lines = text.split_inclusive(|&b| b == b'\n').enumerate().peekable();
    while let Some((n, raw)) = lines.next() {
        let last = lines.peek().is_none();
        let line = String::from_utf8_lossy(raw);
        if line.trim().is_empty() {
            good_len += raw.len();
            continue;
        }
        match serde_json::from_str(line.trim_end()) {
            Ok(value) if raw.ends_with(b"\n") => {
                out.push(value);
                good_len += raw.len();
            }
            _ if last => break,
            Ok(_) => unreachable!("only the final line can lack a newline"),
            Err(source) => {
                return Err(JsonlError::Parse { path: path.display().to_string(), line: n + 1, source })
            }
        }
    }
    Ok((out, good_len as u64))
}

/// Writes `items` to `path`, one compact JSON object per line, replacing
/// any existing file.
pub fn write_all<T: Serialize>(path: &Path, items: &[T]) -> Result<(), JsonlError> {
    let io_err = |source| JsonlError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    for item in items {
        let line = serde_json::to_string(item).expect("record serializes");
        w.write_all(line.as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

/// Append-only JSONL sink safe for concurrent writers. Each record is
/// flushed as soon as it is written, so an interrupted run leaves only
/// complete lines behind.
pub struct JsonlSink {
    path: String,
    file: Mutex<File>,
}

impl JsonlSink {
    pub fn append_to(path: &Path) -> Result<Self, JsonlError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| JsonlError::Io { path: path.display().to_string(), source })?;
        Ok(Self { path: path.display().to_string(), file: Mutex::new(file) })
    }

    pub fn push<T: Serialize>(&self, item: &T) -> Result<(), JsonlError> {
        let mut line = serde_json::to_string(item).expect("record serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|source| JsonlError::Io { path: self.path.clone(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_prefix_survives_a_cut() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.jsonl");
        assert_eq!(read_complete::<u32>(&path).unwrap(), (vec![], 0));
        std::fs::write(&path, "1\n2\n\n3\n{\"a").unwrap();
        assert_eq!(read_complete::<u32>(&path).unwrap(), (vec![1, 2, 3], 7));
        std::fs::write(&path, "1\n2").unwrap();
        assert_eq!(read_complete::<u32>(&path).unwrap(), (vec![1], 2));
        std::fs::write(&path, "1\nx\n2\n").unwrap();
        assert!(matches!(read_complete::<u32>(&path), Err(JsonlError::Parse { line: 2, .. })));
    }
}
