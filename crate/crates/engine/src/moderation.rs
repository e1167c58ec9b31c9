//! Moderation queue. Items are appended to a JSONL file on every state
//! change; on load the last line per id wins.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const QUEUE_FILE: &str = "moderation.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscalationReason {
    OffTopic,
    LowRelevanceAndGenerationUnavailable,
    OutputEscalated,
    RailEscalated,
}

impl EscalationReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::OffTopic => "off_topic",
            Self::LowRelevanceAndGenerationUnavailable => "low_relevance_and_generation_unavailable",
            Self::OutputEscalated => "output_escalated",
            Self::RailEscalated => "rail_escalated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemStatus {
    #[default]
    Open,
    Resolved,
    Dismissed,
}

impl std::str::FromStr for ItemStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open" => Ok(Self::Open),
            "resolved" => Ok(Self::Resolved),
            "dismissed" => Ok(Self::Dismissed),
            other => Err(format!("unknown status {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub answer: String,
    pub theme: String,
    pub sub_theme: String,
    pub record_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModerationItem {
    pub id: String,
    /// Always redacted.
    pub query_text: String,
    pub reason: EscalationReason,
    pub created_at: DateTime<Utc>,
    pub status: ItemStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
}

/// Dedup key: identical redacted text on the same UTC day maps to one item.
pub fn item_id(redacted: &str, at: DateTime<Utc>) -> String {
    let mut h = Sha256::new();
    h.update(redacted.as_bytes());
    h.update([0]);
    h.update(at.format("%Y-%m-%d").to_string().as_bytes());
    let digest = h.finalize();
    let hex: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    format!("mod-{hex}")
}

#[derive(Debug, thiserror::Error)]
pub enum QueueError {
    #[error("moderation store io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("corrupt moderation store line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("unknown moderation item {0}")]
    NotFound(String),
    #[error("not open")]
    NotOpen,
    #[error("invalid cursor")]
    BadCursor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub items: Vec<ModerationItem>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_cursor: Option<String>,
}

#[derive(Debug, Default)]
pub struct ModerationQueue {
    path: Option<PathBuf>,
    items: BTreeMap<String, ModerationItem>,
}

impl ModerationQueue {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: &Path) -> Result<Self, QueueError> {
        let path = dir.join(QUEUE_FILE);
        let io = |source| QueueError::Io {
            path: path.clone(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let mut items = BTreeMap::new();
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(io)?;
            let complete = text.ends_with('\n');
            let lines: Vec<&str> = text.lines().collect();
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<ModerationItem>(line) {
                    Ok(item) => {
                        items.insert(item.id.clone(), item);
                    }
                    Err(_) if i + 1 == lines.len() && !complete => {}
                    Err(e) => {
                        return Err(QueueError::Corrupt {
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                }
            }
        }
        Ok(Self {
            path: Some(path),
            items,
        })
    }

    fn persist(&self, item: &ModerationItem) -> Result<(), QueueError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let io = |source| QueueError::Io {
            path: path.clone(),
            source,
        };
        let mut f: File = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        let mut line = serde_json::to_string(item).expect("items serialize");
        line.push('\n');
        f.write_all(line.as_bytes()).map_err(io)?;
        f.flush().map_err(io)
    }

    /// Open an item for `redacted` or return the existing item with the same
    /// dedup key. A resolved or dismissed item with that key is returned as is.
    pub fn escalate(
        &mut self,
        redacted: &str,
        reason: EscalationReason,
        now: DateTime<Utc>,
    ) -> Result<ModerationItem, QueueError> {
        let id = item_id(redacted, now);
        if let Some(existing) = self.items.get(&id) {
            return Ok(existing.clone());
        }
        let item = ModerationItem {
            id: id.clone(),
            query_text: redacted.to_string(),
            reason,
            created_at: now,
            status: ItemStatus::Open,
            resolution: None,
        };
        self.persist(&item)?;
        self.items.insert(id, item.clone());
        Ok(item)
    }

    pub fn get(&self, id: &str) -> Option<&ModerationItem> {
        self.items.get(id)
    }

    pub fn require_open(&self, id: &str) -> Result<&ModerationItem, QueueError> {
        let item = self.items.get(id).ok_or_else(|| QueueError::NotFound(id.into()))?;
        if item.status != ItemStatus::Open {
            return Err(QueueError::NotOpen);
        }
        Ok(item)
    }

    pub fn resolve(&mut self, id: &str, resolution: Resolution) -> Result<ModerationItem, QueueError> {
        let mut item = self.require_open(id)?.clone();
        item.status = ItemStatus::Resolved;
        item.resolution = Some(resolution);
        self.persist(&item)?;
        self.items.insert(id.to_string(), item.clone());
        Ok(item)
    }

    pub fn dismiss(&mut self, id: &str) -> Result<ModerationItem, QueueError> {
        let mut item = self.require_open(id)?.clone();
        item.status = ItemStatus::Dismissed;
        self.persist(&item)?;
        self.items.insert(id.to_string(), item.clone());
        Ok(item)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Newest first, ties by id. The cursor is the offset of the next page.
    pub fn list(&self, status: Option<ItemStatus>, cursor: Option<&str>, limit: usize) -> Result<Page, QueueError> {
        let offset = match cursor {
            None => 0,
            Some(c) => c.parse::<usize>().map_err(|_| QueueError::BadCursor)?,
        };
        let mut all: Vec<&ModerationItem> = self
            .items
            .values()
            .filter(|i| status.is_none_or(|s| i.status == s))
            .collect();
        if offset > all.len() {
            return Err(QueueError::BadCursor);
        }
        all.sort_by(|a, b| b.created_at.cmp(&a.created_at).then_with(|| a.id.cmp(&b.id)));
        let limit = limit.max(1);
        let items: Vec<ModerationItem> = all.iter().skip(offset).take(limit).map(|i| (*i).clone()).collect();
        let end = offset + items.len();
        Ok(Page {
            items,
            next_cursor: (end < all.len()).then(|| end.to_string()),
        })
    }
}
