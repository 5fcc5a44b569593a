//! Append-only memory stream.

use chrono::{Duration, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::profile::AgentId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryKind {
    Incident,
    Behavior,
    Message,
    Reflection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub time: NaiveDateTime,
    pub kind: MemoryKind,
    pub text: String,
    /// Counterpart of a message exchange.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peer: Option<AgentId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryStream {
    entries: Vec<MemoryEntry>,
    /// Summary of the last day, rebuilt at each reflection.
    pub day_digest: String,
}

pub const DIGEST_WINDOW_HOURS: i64 = 24;
const DIGEST_MAX_ENTRIES: usize = 30;

impl MemoryStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, time: NaiveDateTime, kind: MemoryKind, text: impl Into<String>) {
        self.entries.push(MemoryEntry { time, kind, text: text.into(), peer: None });
    }

    pub fn append_message(&mut self, time: NaiveDateTime, peer: AgentId, text: impl Into<String>) {
        self.entries.push(MemoryEntry { time, kind: MemoryKind::Message, text: text.into(), peer: Some(peer) });
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries with `now - window < time <= now`.
    pub fn recent(&self, now: NaiveDateTime, window: Duration) -> impl Iterator<Item = &MemoryEntry> {
        let from = now - window;
        let start = self.entries.partition_point(|e| e.time <= from);
        self.entries[start..].iter().filter(move |e| e.time <= now)
    }

    /// The last day's entries as text, most recent last.
    pub fn digest(&self, now: NaiveDateTime) -> String {
        let recent: Vec<&MemoryEntry> = self.recent(now, Duration::hours(DIGEST_WINDOW_HOURS)).collect();
        if recent.is_empty() {
            return "No notable memories.".to_string();
        }
        let skip = recent.len().saturating_sub(DIGEST_MAX_ENTRIES);
        recent[skip..]
            .iter()
            .map(|e| format!("[{}] {}", e.time.format("%Y-%m-%d %H:%M"), e.text))
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn refresh_digest(&mut self, now: NaiveDateTime) {
        self.day_digest = self.digest(now);
    }

    /// Message exchanges with `peer`, oldest first, at most `limit`.
    pub fn chat_history(&self, peer: AgentId, limit: usize) -> String {
        let msgs: Vec<&MemoryEntry> = self.entries.iter().filter(|e| e.peer == Some(peer)).collect();
        let skip = msgs.len().saturating_sub(limit);
        if msgs.len() == skip {
            return "No previous conversation.".to_string();
        }
        msgs[skip..].iter().map(|e| e.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("memory serializes"));
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn t(h: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap() + Duration::hours(h as i64)
    }

    #[test]
    fn digest_covers_last_day_only() {
        let mut m = MemoryStream::new();
        m.append(t(1), MemoryKind::Behavior, "early");
        m.append(t(30), MemoryKind::Behavior, "late");
        let d = m.digest(t(40));
        assert!(d.contains("late") && !d.contains("early"));
        assert_eq!(MemoryStream::new().digest(t(1)), "No notable memories.");
    }

    #[test]
    fn hash_changes_only_with_content() {
        let mut m = MemoryStream::new();
        let h0 = m.content_hash();
        assert_eq!(h0, m.clone().content_hash());
        m.append(t(1), MemoryKind::Incident, "x");
        assert_ne!(h0, m.content_hash());
    }

    #[test]
    fn chat_history_per_peer() {
        let mut m = MemoryStream::new();
        m.append_message(t(1), 4, "to 4");
        m.append_message(t(2), 5, "to 5");
        assert_eq!(m.chat_history(4, 5), "to 4");
        assert_eq!(m.chat_history(9, 5), "No previous conversation.");
    }
}
