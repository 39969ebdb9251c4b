//! Event-sourced persistence.
//!
//! A state directory holds:
//!
//! ```text
//! events.jsonl              append-only decision log, one event per line
//! snapshots/NNNNNNNN.snap   canonical state after event NNNNNNNN
//! LOCK                      held exclusively by the single writer
//! ```
//!
//! A snapshot file is three LF-terminated JSON lines: a header with
//! `digest`, `format_version` and `last_seq`; the effective configuration;
//! the canonical state. All objects have sorted keys and floats use the
//! shortest representation that round-trips. The digest is the SHA-256 of the
//! state line without its terminator. Snapshot `00000000.snap` is written when
//! a directory is initialized, so every log has a base to replay from.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::{ClusterId, StoryId};
use crate::config::Config;
use crate::embed::Vector;
use crate::investigate::Signal;
use crate::model::{Article, ArticleId};
use crate::Timestamp;

pub const FORMAT_VERSION: u32 = 1;
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const LOCK_FILE: &str = "LOCK";

#[derive(Debug, thiserror::Error)]
pub enum MemoryError {
    #[error("sequence gap: expected {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("storage failure: {0}")]
    StorageFailure(#[from] io::Error),
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("corrupt snapshot {path}: {reason}")]
    CorruptSnapshot { path: String, reason: String },
    #[error("state directory {0} is locked by another writer")]
    LockHeld(PathBuf),
    #[error("state directory {0} does not exist")]
    Missing(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub payload: EventPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventPayload {
    /// `vector` is present only when the embedder cannot be re-run at replay.
    ArticleIngested {
        article: Article,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        vector: Option<Vector>,
    },
    ArticleRejected {
        external_id: Option<String>,
        line: Option<u64>,
        reason: String,
    },
    PendingCreated {
        cluster_id: ClusterId,
    },
    /// `score` is absent when the article seeded the cluster.
    AssignedToPending {
        article_id: ArticleId,
        cluster_id: ClusterId,
        score: Option<f64>,
    },
    AssignedToStory {
        article_id: ArticleId,
        novelty: f64,
        score: f64,
        story_id: StoryId,
    },
    StoryInstantiated {
        cluster_id: ClusterId,
        coherence: f64,
        instantiated_at: Timestamp,
        story_id: StoryId,
    },
    StoryUpdated {
        last_updated: Timestamp,
        members: usize,
        sources: usize,
        story_id: StoryId,
    },
    PendingExpired {
        article_ids: Vec<ArticleId>,
        cluster_id: ClusterId,
    },
    SignalEmitted {
        signal: Signal,
    },
    SignalRevised {
        signal: Signal,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum EventKind {
    ArticleIngested,
    ArticleRejected,
    PendingCreated,
    AssignedToPending,
    AssignedToStory,
    StoryInstantiated,
    StoryUpdated,
    PendingExpired,
    SignalEmitted,
    SignalRevised,
}

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            Self::ArticleIngested { .. } => EventKind::ArticleIngested,
            Self::ArticleRejected { .. } => EventKind::ArticleRejected,
            Self::PendingCreated { .. } => EventKind::PendingCreated,
            Self::AssignedToPending { .. } => EventKind::AssignedToPending,
            Self::AssignedToStory { .. } => EventKind::AssignedToStory,
            Self::StoryInstantiated { .. } => EventKind::StoryInstantiated,
            Self::StoryUpdated { .. } => EventKind::StoryUpdated,
            Self::PendingExpired { .. } => EventKind::PendingExpired,
            Self::SignalEmitted { .. } => EventKind::SignalEmitted,
            Self::SignalRevised { .. } => EventKind::SignalRevised,
        }
    }
}

impl Event {
    pub fn kind(&self) -> EventKind {
        self.payload.kind()
    }
}

/// Destination for events. `append` must reject anything but the next
/// sequence number; `commit` marks the events so far as acknowledged.
pub trait EventSink {
    fn append(&mut self, event: &Event) -> Result<(), MemoryError>;
    fn commit(&mut self) -> Result<(), MemoryError>;
}

fn check_next(last_seq: u64, event: &Event) -> Result<(), MemoryError> {
    if event.seq != last_seq + 1 {
        return Err(MemoryError::SequenceGap {
            expected: last_seq + 1,
            got: event.seq,
        });
    }
    Ok(())
}

/// In-memory log, used by tests and the browser demo.
#[derive(Debug, Default, Clone)]
pub struct MemoryLog {
    pub events: Vec<Event>,
    bytes: Vec<u8>,
}

impl MemoryLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// The log exactly as it would appear in `events.jsonl`.
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn last_seq(&self) -> u64 {
        self.events.last().map_or(0, |e| e.seq)
    }
}

impl EventSink for MemoryLog {
    fn append(&mut self, event: &Event) -> Result<(), MemoryError> {
        check_next(self.last_seq(), event)?;
        serde_json::to_writer(&mut self.bytes, event).map_err(io::Error::from)?;
        self.bytes.push(b'\n');
        self.events.push(event.clone());
        Ok(())
    }

    fn commit(&mut self) -> Result<(), MemoryError> {
        Ok(())
    }
}

/// Appender for `events.jsonl`. Events are buffered until [`commit`], which
/// hands them to the operating system; [`sync`] forces them to disk.
///
/// [`commit`]: EventSink::commit
/// [`sync`]: FileLog::sync
pub struct FileLog {
    out: BufWriter<File>,
    last_seq: u64,
}

impl FileLog {
    pub fn last_seq(&self) -> u64 {
        self.last_seq
    }

    pub fn sync(&mut self) -> Result<(), MemoryError> {
        self.out.flush()?;
        self.out.get_ref().sync_data()?;
        Ok(())
    }
}

impl EventSink for FileLog {
    fn append(&mut self, event: &Event) -> Result<(), MemoryError> {
        check_next(self.last_seq, event)?;
        serde_json::to_writer(&mut self.out, event).map_err(io::Error::from)?;
        self.out.write_all(b"\n")?;
        self.last_seq = event.seq;
        Ok(())
    }

    fn commit(&mut self) -> Result<(), MemoryError> {
        self.out.flush()?;
        Ok(())
    }
}

/// Streams events from a log, checking that sequence numbers are gapless
/// from 1 and timestamps never go backwards. A final line without a newline
/// was never acknowledged and is ignored.
pub struct EventReader<R> {
    inner: R,
    buf: Vec<u8>,
    last_seq: u64,
    last_at: Timestamp,
}

impl<R: BufRead> EventReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: Vec::new(),
            last_seq: 0,
            last_at: Timestamp::MIN,
        }
    }
}

impl<R: BufRead> Iterator for EventReader<R> {
    type Item = Result<Event, MemoryError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.buf.clear();
        match self.inner.read_until(b'\n', &mut self.buf) {
            Ok(0) => return None,
            Ok(_) => {}
            Err(e) => return Some(Err(e.into())),
        }
        if self.buf.last() != Some(&b'\n') {
            return None;
        }
        let event: Event = match serde_json::from_slice(&self.buf[..self.buf.len() - 1]) {
            Ok(e) => e,
            Err(e) => {
                return Some(Err(MemoryError::CorruptLog(format!(
                    "after seq {}: {e}",
                    self.last_seq
                ))))
            }
        };
        if event.seq != self.last_seq + 1 {
            return Some(Err(MemoryError::CorruptLog(format!(
                "sequence gap: expected {}, got {}",
                self.last_seq + 1,
                event.seq
            ))));
        }
        if event.at < self.last_at {
            return Some(Err(MemoryError::CorruptLog(format!(
                "seq {}: time goes backwards",
                event.seq
            ))));
        }
        self.last_seq = event.seq;
        self.last_at = event.at;
        Some(Ok(event))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SnapshotHeader {
    digest: String,
    format_version: u32,
    last_seq: u64,
}

/// A canonical state image with its configuration and log position.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub format_version: u32,
    pub config: Config,
    /// Canonical state bytes (one JSON line, no terminator).
    pub state: Vec<u8>,
    pub last_seq: u64,
    pub digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

impl Snapshot {
    pub fn new(config: Config, state: Vec<u8>, last_seq: u64) -> Self {
        let digest = sha256_hex(&state);
        Self {
            format_version: FORMAT_VERSION,
            config,
            state,
            last_seq,
            digest,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = SnapshotHeader {
            digest: self.digest.clone(),
            format_version: self.format_version,
            last_seq: self.last_seq,
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        serde_json::to_writer(&mut out, &self.config).expect("config serializes");
        out.push(b'\n');
        out.extend_from_slice(&self.state);
        out.push(b'\n');
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self, MemoryError> {
        let corrupt = |reason: String| MemoryError::CorruptSnapshot {
            path: origin.to_string(),
            reason,
        };
        let mut lines = bytes.split(|&b| b == b'\n');
        let (Some(h), Some(c), Some(s), Some(rest)) = (lines.next(), lines.next(), lines.next(), lines.next()) else {
            return Err(corrupt("expected three LF-terminated lines".into()));
        };
        if !rest.is_empty() || lines.next().is_some() {
            return Err(corrupt("trailing data".into()));
        }
        let header: SnapshotHeader = serde_json::from_slice(h).map_err(|e| corrupt(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "format version {} is not {FORMAT_VERSION}",
                header.format_version
            )));
        }
        let config: Config = serde_json::from_slice(c).map_err(|e| corrupt(e.to_string()))?;
        let digest = sha256_hex(s);
        if digest != header.digest {
            return Err(corrupt("digest mismatch".into()));
        }
        Ok(Self {
            format_version: header.format_version,
            config,
            state: s.to_vec(),
            last_seq: header.last_seq,
            digest,
        })
    }
}

/// A state directory opened either as the single writer or read-only.
pub struct StateDir {
    root: PathBuf,
    _lock: Option<File>,
}

impl StateDir {
    /// Creates the directory if needed and takes the writer lock.
    pub fn open_exclusive(root: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join(SNAPSHOT_DIR))?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(root.join(LOCK_FILE))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(fs::TryLockError::WouldBlock) => return Err(MemoryError::LockHeld(root)),
            Err(fs::TryLockError::Error(e)) => return Err(e.into()),
        }
        Ok(Self {
            root,
            _lock: Some(lock),
        })
    }

    pub fn open_read_only(root: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let root = root.as_ref().to_path_buf();
        if !root.join(SNAPSHOT_DIR).is_dir() {
            return Err(MemoryError::Missing(root));
        }
        Ok(Self { root, _lock: None })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn events_path(&self) -> PathBuf {
        self.root.join(EVENTS_FILE)
    }

    pub fn snapshot_path(&self, last_seq: u64) -> PathBuf {
        self.root.join(SNAPSHOT_DIR).join(format!("{last_seq:08}.snap"))
    }

    pub fn events(&self) -> Result<EventReader<BufReader<File>>, MemoryError> {
        let file = match File::open(self.events_path()) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => File::open(self.empty_events()?)?,
            Err(e) => return Err(e.into()),
        };
        Ok(EventReader::new(BufReader::new(file)))
    }

    fn empty_events(&self) -> Result<PathBuf, MemoryError> {
        // Read-only openers of a directory with no log yet see an empty log.
        let path = self.events_path();
        if self._lock.is_some() {
            File::create(&path)?;
            return Ok(path);
        }
        Ok(PathBuf::from("/dev/null"))
    }

    /// Drops an unterminated final line left by an interrupted append.
    /// Returns the number of bytes removed.
    pub fn repair_tail(&self) -> Result<u64, MemoryError> {
        let path = self.events_path();
        let mut file = match OpenOptions::new().read(true).write(true).open(&path) {
            Ok(f) => f,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(e.into()),
        };
        let len = file.metadata()?.len();
        if len == 0 {
            return Ok(0);
        }
        // Walk back to the last newline.
        let mut end = len;
        let mut chunk = vec![0u8; 4096];
        loop {
            let start = end.saturating_sub(chunk.len() as u64);
            let n = (end - start) as usize;
            file.seek(SeekFrom::Start(start))?;
            file.read_exact(&mut chunk[..n])?;
            if let Some(pos) = chunk[..n].iter().rposition(|&b| b == b'\n') {
                let keep = start + pos as u64 + 1;
                if keep < len {
                    file.set_len(keep)?;
                    file.sync_data()?;
                }
                return Ok(len - keep);
            }
            if start == 0 {
                file.set_len(0)?;
                file.sync_data()?;
                return Ok(len);
            }
            end = start;
        }
    }

    /// Opens the log for appending after `last_seq`.
    pub fn open_log(&self, last_seq: u64) -> Result<FileLog, MemoryError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.events_path())?;
        Ok(FileLog {
            out: BufWriter::with_capacity(1 << 16, file),
            last_seq,
        })
    }

    /// Snapshot positions present on disk, ascending.
    pub fn snapshot_seqs(&self) -> Result<Vec<u64>, MemoryError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(self.root.join(SNAPSHOT_DIR))? {
            let name = entry?.file_name();
            let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".snap")) else {
                continue;
            };
            if let Ok(seq) = stem.parse::<u64>() {
                out.push(seq);
            }
        }
        out.sort_unstable();
        Ok(out)
    }

    pub fn read_snapshot(&self, last_seq: u64) -> Result<Snapshot, MemoryError> {
        let path = self.snapshot_path(last_seq);
        let bytes = fs::read(&path)?;
        let snap = Snapshot::from_bytes(&bytes, &path.display().to_string())?;
        if snap.last_seq != last_seq {
            return Err(MemoryError::CorruptSnapshot {
                path: path.display().to_string(),
                reason: format!("file name says {last_seq}, header says {}", snap.last_seq),
            });
        }
        Ok(snap)
    }

    pub fn latest_snapshot(&self) -> Result<Option<Snapshot>, MemoryError> {
        match self.snapshot_seqs()?.last() {
            Some(&seq) => self.read_snapshot(seq).map(Some),
            None => Ok(None),
        }
    }

    /// Writes atomically (temp file, fsync, rename).
    pub fn write_snapshot(&self, snapshot: &Snapshot) -> Result<PathBuf, MemoryError> {
        let path = self.snapshot_path(snapshot.last_seq);
        let tmp = path.with_extension("snap.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&snapshot.to_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        Ok(path)
    }
}
