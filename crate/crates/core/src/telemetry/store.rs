//! Append-only JSON-lines event store.

use super::protocol::{WireEvent, CONFIDENCE_SCALE};
use serde::{Deserialize, Serialize};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: io::Error },
    #[error("{path}:{line}: {msg}")]
    Record { path: PathBuf, line: usize, msg: String },
}

/// On-disk form of one event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredEvent {
    pub learner: u32,
    pub timestamp_ms: u64,
    pub frame: u32,
    pub class: u8,
    pub confidence: f64,
}

impl From<&WireEvent> for StoredEvent {
    fn from(e: &WireEvent) -> Self {
        StoredEvent {
            learner: e.learner,
            timestamp_ms: e.timestamp_ms,
            frame: e.frame,
            class: e.class,
            confidence: e.confidence(),
        }
    }
}

impl TryFrom<StoredEvent> for WireEvent {
    type Error = String;

    fn try_from(s: StoredEvent) -> Result<Self, String> {
        if !(0.0..=1.0).contains(&s.confidence) {
            return Err(format!("confidence {} not in [0, 1]", s.confidence));
        }
        Ok(WireEvent {
            learner: s.learner,
            timestamp_ms: s.timestamp_ms,
            frame: s.frame,
            class: s.class,
            confidence: (s.confidence * CONFIDENCE_SCALE as f64).round() as u16,
        })
    }
}

/// Encodes one event as a store line, newline included.
pub fn event_line(e: &WireEvent) -> String {
    let mut s = serde_json::to_string(&StoredEvent::from(e)).expect("plain struct serializes");
    s.push('\n');
    s
}

/// Parses store text. A final line without its newline is a write still in
/// progress and is skipped.
pub fn parse_events(text: &str, path: &Path) -> Result<Vec<WireEvent>, StoreError> {
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    let mut out = Vec::new();
    for (i, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| StoreError::Record { path: path.to_path_buf(), line: i + 1, msg };
        let s: StoredEvent = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        out.push(WireEvent::try_from(s).map_err(err)?);
    }
    Ok(out)
}

pub fn load_events(path: &Path) -> Result<Vec<WireEvent>, StoreError> {
    let text = fs::read_to_string(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), err: source })?;
    parse_events(&text, path)
}

/// Appends are written with a single call and flushed before returning.
#[derive(Debug)]
pub struct EventStore {
    path: PathBuf,
    file: File,
}

impl EventStore {
    /// Opens (creating if needed) the store and returns the events already
    /// in it.
    pub fn open(path: &Path) -> Result<(Self, Vec<WireEvent>), StoreError> {
        let io_err = |source| StoreError::Io { path: path.to_path_buf(), err: source };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err)?;
        let existing = load_events(path)?;
        Ok((EventStore { path: path.to_path_buf(), file }, existing))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, e: &WireEvent) -> Result<(), StoreError> {
        let line = event_line(e);
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| StoreError::Io { path: self.path.clone(), err: source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(learner: u32, frame: u32, confidence: u16) -> WireEvent {
        WireEvent { learner, timestamp_ms: frame as u64 * 66, frame, class: 2, confidence }
    }

    #[test]
    fn append_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.jsonl");
        let (mut store, existing) = EventStore::open(&path).unwrap();
        assert!(existing.is_empty());
        let events: Vec<_> = (0..=10_000u16).step_by(7).enumerate().map(|(i, q)| ev(1, i as u32, q)).collect();
        for e in &events {
            store.append(e).unwrap();
        }
        drop(store);
        let (_, reloaded) = EventStore::open(&path).unwrap();
        assert_eq!(reloaded, events);
    }

    #[test]
    fn line_format() {
        assert_eq!(
            event_line(&ev(3, 2, 9_500)),
            "{\"learner\":3,\"timestamp_ms\":132,\"frame\":2,\"class\":2,\"confidence\":0.95}\n"
        );
    }

    #[test]
    fn partial_tail_is_ignored_and_bad_lines_reported() {
        let p = Path::new("s.jsonl");
        let good = event_line(&ev(1, 1, 1));
        assert_eq!(parse_events(&format!("{good}{{\"learner\":"), p).unwrap().len(), 1);
        let err = parse_events(&format!("{good}{{\"learner\":1}}\n"), p).unwrap_err();
        assert!(matches!(err, StoreError::Record { line: 2, .. }), "{err}");
        let bad_conf = good.replace("0.0001", "1.5");
        assert!(matches!(parse_events(&bad_conf, p), Err(StoreError::Record { line: 1, .. })));
    }

    #[test]
    fn unwritable_store_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(EventStore::open(&dir.path().join("no/such/dir.jsonl")), Err(StoreError::Io { .. })));
    }
}
