//! Record/replay cassettes for HTTP-backed components.
//!
//! A cassette is a JSON Lines file of `{"request": ..., "response": ...}`
//! pairs. In record mode every live exchange is appended; in replay mode
//! requests are answered from the file with no network at all, which is how
//! the whole test suite stays hermetic. Matching is by structural equality
//! of the request value, FIFO among duplicates.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cassette {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cassette {path} line {line}: malformed entry: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("replay miss: no recorded response for request {request}")]
    Miss { request: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayMode {
    /// No cassette: always hit the network.
    Live,
    /// Hit the network and append every exchange to the cassette.
    Record,
    /// Never hit the network; answer from the cassette or fail.
    Replay,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    request: Value,
    response: Value,
}

/// A loaded cassette plus its mode.
#[derive(Debug)]
pub struct Cassette {
    mode: ReplayMode,
    path: Option<PathBuf>,
    entries: Mutex<Vec<Entry>>,
}

impl Cassette {
    pub fn live() -> Self {
        Self {
            mode: ReplayMode::Live,
            path: None,
            entries: Mutex::new(Vec::new()),
        }
    }

    /// Open for recording; existing entries are kept and appended to.
    pub fn record(path: impl Into<PathBuf>) -> Result<Self, ReplayError> {
        let path = path.into();
        let entries = if path.exists() { load(&path)? } else { Vec::new() };
        Ok(Self {
            mode: ReplayMode::Record,
            path: Some(path),
            entries: Mutex::new(entries),
        })
    }

    /// Open for replay; the cassette file must exist.
    pub fn replay(path: impl Into<PathBuf>) -> Result<Self, ReplayError> {
        let path = path.into();
        let entries = load(&path)?;
        Ok(Self {
            mode: ReplayMode::Replay,
            path: Some(path),
            entries: Mutex::new(entries),
        })
    }

    pub fn open(mode: ReplayMode, path: Option<&Path>) -> Result<Self, ReplayError> {
        match (mode, path) {
            (ReplayMode::Live, _) => Ok(Self::live()),
            (ReplayMode::Record, Some(p)) => Self::record(p),
            (ReplayMode::Replay, Some(p)) => Self::replay(p),
            (_, None) => Err(ReplayError::Miss {
                request: "record/replay mode requires a cassette path".into(),
            }),
        }
    }

    pub fn mode(&self) -> ReplayMode {
        self.mode
    }

    /// Take the first recorded response matching `request` (FIFO).
    pub fn fetch(&self, request: &Value) -> Result<Value, ReplayError> {
        let mut entries = self.entries.lock().expect("cassette lock");
        if let Some(idx) = entries.iter().position(|e| &e.request == request) {
            return Ok(entries.remove(idx).response);
        }
        Err(ReplayError::Miss {
            request: request.to_string(),
        })
    }

    /// Append an exchange to the cassette file.
    pub fn store(&self, request: Value, response: Value) -> Result<(), ReplayError> {
        let path = self.path.as_ref().expect("record mode has a path");
        let entry = Entry { request, response };
        let line = serde_json::to_string(&entry).expect("cassette entry serializes");
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| ReplayError::Io {
                path: path.clone(),
                source,
            })?;
        writeln!(file, "{line}").map_err(|source| ReplayError::Io {
            path: path.clone(),
            source,
        })?;
        self.entries.lock().expect("cassette lock").push(entry);
        Ok(())
    }
}

fn load(path: &Path) -> Result<Vec<Entry>, ReplayError> {
    let file = File::open(path).map_err(|source| ReplayError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|source| ReplayError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: Entry = serde_json::from_str(&line).map_err(|e| ReplayError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        entries.push(entry);
    }
    Ok(entries)
}
