//! Append-only corpus store: a JSONL event log plus a JSONL snapshot that
//! only exists to make startup fast.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use chrono::{DateTime, Utc};
use guardqa_core::corpus::{
    CorpusEvent, CorpusSnapshot, EventOp, IngestReport, QARecord, RecordDraft, RecordError, RecordStatus, ReplayError,
};
use guardqa_core::sanitizer::Sanitizer;
use serde::{Deserialize, Serialize};

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt store file {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Record(#[from] RecordError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SnapshotHeader {
    version: u64,
}

/// Single-writer store. Wrap in a mutex to share; readers take
/// [`CorpusStore::snapshot`] clones or borrow under the lock.
pub struct CorpusStore {
    dir: Option<PathBuf>,
    log: Option<File>,
    snapshot: CorpusSnapshot,
    sanitizer: Sanitizer,
    subscribers: Vec<mpsc::Sender<CorpusEvent>>,
    snapshot_every: u64,
    since_snapshot: u64,
}

impl std::fmt::Debug for CorpusStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CorpusStore")
            .field("dir", &self.dir)
            .field("version", &self.snapshot.version)
            .field("records", &self.snapshot.records.len())
            .finish()
    }
}

impl CorpusStore {
    /// A store that lives only in memory.
    pub fn in_memory(sanitizer: Sanitizer) -> Self {
        Self {
            dir: None,
            log: None,
            snapshot: CorpusSnapshot::default(),
            sanitizer,
            subscribers: Vec::new(),
            snapshot_every: 0,
            since_snapshot: 0,
        }
    }

    /// Open (or create) a store directory: load the snapshot if present,
    /// then replay newer events from the log. A torn final log line left by
    /// a crash is cut off.
    pub fn open(dir: &Path, sanitizer: Sanitizer, snapshot_every: u64) -> Result<Self, StoreError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let mut snapshot = if snap_path.exists() {
            read_snapshot(&snap_path)?
        } else {
            CorpusSnapshot::default()
        };
        let log_path = dir.join(EVENTS_FILE);
        let mut replayed = 0;
        if log_path.exists() {
            let (events, good_len) = read_events(&log_path)?;
            let file_len = fs::metadata(&log_path).map_err(io_err(&log_path))?.len();
            if good_len < file_len {
                let f = OpenOptions::new().write(true).open(&log_path).map_err(io_err(&log_path))?;
                f.set_len(good_len).map_err(io_err(&log_path))?;
            }
            if snapshot.version > events.last().map_or(0, |e| e.version) {
                // snapshot ahead of the log means the log was lost; trust the log
                snapshot = CorpusSnapshot::default();
            }
            let base = snapshot.version;
            for e in events.iter().filter(|e| e.version > base) {
                snapshot.apply(e)?;
                replayed += 1;
            }
        } else {
            snapshot = CorpusSnapshot::default();
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        Ok(Self {
            dir: Some(dir.to_path_buf()),
            log: Some(log),
            snapshot,
            sanitizer,
            subscribers: Vec::new(),
            snapshot_every,
            since_snapshot: replayed,
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn version(&self) -> u64 {
        self.snapshot.version
    }

    pub fn snapshot(&self) -> &CorpusSnapshot {
        &self.snapshot
    }

    pub fn sanitizer(&self) -> &Sanitizer {
        &self.sanitizer
    }

    pub fn get(&self, id: &str) -> Option<&QARecord> {
        self.snapshot.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.snapshot.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshot.records.is_empty()
    }

    pub fn published(&self) -> Vec<QARecord> {
        self.snapshot.published().cloned().collect()
    }

    /// Receive every event committed from now on.
    pub fn subscribe(&mut self) -> mpsc::Receiver<CorpusEvent> {
        let (tx, rx) = mpsc::channel();
        self.subscribers.push(tx);
        rx
    }

    /// Validate and append one record; returns the new version. On error
    /// nothing is written.
    pub fn append_record(&mut self, record: QARecord) -> Result<u64, StoreError> {
        record.validate(&self.sanitizer)?;
        self.snapshot.check_insert(&record)?;
        self.commit(EventOp::Add, record)
    }

    pub fn update_status(&mut self, id: &str, status: RecordStatus) -> Result<u64, StoreError> {
        let mut record = self
            .snapshot
            .records
            .get(id)
            .cloned()
            .ok_or_else(|| RecordError::UnknownRecord(id.into()))?;
        record.status = status;
        record.validate(&self.sanitizer)?;
        self.commit(EventOp::UpdateStatus, record)
    }

    fn commit(&mut self, op: EventOp, record: QARecord) -> Result<u64, StoreError> {
        let event = CorpusEvent {
            version: self.snapshot.version + 1,
            op,
            record,
        };
        if let (Some(log), Some(dir)) = (self.log.as_mut(), self.dir.as_ref()) {
            let path = dir.join(EVENTS_FILE);
            let mut line = serde_json::to_string(&event).expect("events serialize");
            line.push('\n');
            log.write_all(line.as_bytes()).map_err(io_err(&path))?;
            log.flush().map_err(io_err(&path))?;
        }
        self.snapshot.apply(&event)?;
        self.subscribers.retain(|s| s.send(event.clone()).is_ok());
        self.since_snapshot += 1;
        if self.snapshot_every > 0 && self.since_snapshot >= self.snapshot_every {
            self.write_snapshot()?;
        }
        Ok(event.version)
    }

    /// Write the materialized snapshot (header line, then one record per
    /// line) atomically via a temporary file.
    pub fn write_snapshot(&mut self) -> Result<(), StoreError> {
        let Some(dir) = self.dir.clone() else {
            return Ok(());
        };
        if let Some(log) = self.log.as_mut() {
            log.sync_data().map_err(io_err(&dir))?;
        }
        let path = dir.join(SNAPSHOT_FILE);
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let mut out = io::BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
        let header = SnapshotHeader {
            version: self.snapshot.version,
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io_err(&tmp))?;
        for r in self.snapshot.records.values() {
            writeln!(out, "{}", serde_json::to_string(r).expect("records serialize")).map_err(io_err(&tmp))?;
        }
        out.into_inner()
            .map_err(|e| StoreError::Io {
                path: tmp.clone(),
                source: e.into_error(),
            })?
            .sync_all()
            .map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
        self.since_snapshot = 0;
        Ok(())
    }

    /// Replay the whole event log from empty.
    pub fn replay_log(&self) -> Result<CorpusSnapshot, StoreError> {
        let Some(dir) = &self.dir else {
            return Ok(self.snapshot.clone());
        };
        let (events, _) = read_events(&dir.join(EVENTS_FILE))?;
        Ok(CorpusSnapshot::replay(&events)?)
    }

    pub fn ingest_jsonl(&mut self, path: &Path, now: DateTime<Utc>) -> Result<IngestReport, StoreError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        self.ingest_str(&text, now)
    }

    /// Ingest one record per line. Bad lines are rejected with a reason and
    /// never abort the run; IO failures do.
    pub fn ingest_str(&mut self, text: &str, now: DateTime<Utc>) -> Result<IngestReport, StoreError> {
        let mut report = IngestReport::default();
        let mut groups = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            let mut reject = |reason: String| {
                report.rejected += 1;
                report.rejection_reasons.push((lineno, reason));
            };
            if line.trim().is_empty() {
                reject("empty line".into());
                continue;
            }
            let draft: RecordDraft = match serde_json::from_str(line) {
                Ok(d) => d,
                Err(e) => {
                    reject(format!("malformed json: {e}"));
                    continue;
                }
            };
            let record = match draft.into_record(&self.sanitizer, now) {
                Ok(r) => r,
                Err(e) => {
                    reject(e.to_string());
                    continue;
                }
            };
            let group = record.group_id.clone();
            match self.append_record(record) {
                Ok(_) => {
                    report.accepted += 1;
                    groups.insert(group);
                }
                Err(StoreError::Record(e)) => reject(e.to_string()),
                Err(e) => return Err(e),
            }
        }
        report.groups_formed = groups.len();
        Ok(report)
    }
}

fn read_snapshot(path: &Path) -> Result<CorpusSnapshot, StoreError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut snap = CorpusSnapshot::default();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let corrupt = |message: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        if i == 0 {
            let h: SnapshotHeader = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            snap.version = h.version;
        } else if !line.trim().is_empty() {
            let r: QARecord = serde_json::from_str(&line).map_err(|e| corrupt(e.to_string()))?;
            snap.records.insert(r.id.clone(), r);
        }
    }
    Ok(snap)
}

/// Parsed events and the byte length of the well-formed prefix. Only a
/// torn last line is tolerated.
fn read_events(path: &Path) -> Result<(Vec<CorpusEvent>, u64), StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut events = Vec::new();
    let mut good = 0u64;
    let mut offset = 0usize;
    let mut lineno = 0;
    while offset < bytes.len() {
        lineno += 1;
        let end = bytes[offset..].iter().position(|&b| b == b'\n').map(|p| offset + p);
        let (line, next, terminated) = match end {
            Some(e) => (&bytes[offset..e], e + 1, true),
            None => (&bytes[offset..], bytes.len(), false),
        };
        if !line.iter().all(u8::is_ascii_whitespace) {
            match (serde_json::from_slice::<CorpusEvent>(line), terminated) {
                (Ok(ev), true) => events.push(ev),
                (_, false) => break,
                (Err(e), true) => {
                    return Err(StoreError::Corrupt {
                        path: path.to_path_buf(),
                        line: lineno,
                        message: e.to_string(),
                    })
                }
            }
        }
        offset = next;
        good = next as u64;
    }
    Ok((events, good))
}
