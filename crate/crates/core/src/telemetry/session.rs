//! Per-learner session bookkeeping on the supervisor side.

use super::protocol::WireEvent;
use std::collections::{BTreeMap, HashSet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LearnerSession {
    pub id: u32,
    pub name: String,
    pub connected: bool,
    /// Timestamp carried by the last HEARTBEAT, 0 before the first.
    pub last_heartbeat_ms: u64,
    events: Vec<WireEvent>,
    frames: HashSet<u32>,
}

impl LearnerSession {
    fn new(id: u32, name: &str) -> Self {
        LearnerSession {
            id,
            name: name.to_string(),
            connected: false,
            last_heartbeat_ms: 0,
            events: Vec::new(),
            frames: HashSet::new(),
        }
    }

    /// Accepted events in arrival order.
    pub fn events(&self) -> &[WireEvent] {
        &self.events
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ingest {
    Accepted,
    /// Same `(learner, frame)` was already accepted; nothing changed.
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("learner {0} has not said HELLO")]
    UnknownLearner(u32),
    #[error("learner {learner}: timestamp {got} ms is before the last accepted {last} ms")]
    Stale { learner: u32, last: u64, got: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionState {
    learners: BTreeMap<u32, LearnerSession>,
}

impl SessionState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds the state from stored events; every learner starts
    /// disconnected.
    pub fn replay(events: &[WireEvent]) -> Result<Self, IngestError> {
        let mut s = SessionState::new();
        for e in events {
            s.learners.entry(e.learner).or_insert_with(|| LearnerSession::new(e.learner, ""));
            s.ingest(e)?;
        }
        Ok(s)
    }

    /// Marks `id` connected, creating it if needed. A reconnecting learner
    /// keeps its log; a non-empty name replaces the stored one.
    pub fn register(&mut self, id: u32, name: &str) -> &LearnerSession {
        let l = self.learners.entry(id).or_insert_with(|| LearnerSession::new(id, name));
        if !name.is_empty() {
            l.name = name.to_string();
        }
        l.connected = true;
        l
    }

    pub fn disconnect(&mut self, id: u32) {
        if let Some(l) = self.learners.get_mut(&id) {
            l.connected = false;
        }
    }

    pub fn heartbeat(&mut self, id: u32, timestamp_ms: u64) -> Result<(), IngestError> {
        let l = self.learners.get_mut(&id).ok_or(IngestError::UnknownLearner(id))?;
        l.last_heartbeat_ms = timestamp_ms;
        Ok(())
    }

    pub fn ingest(&mut self, e: &WireEvent) -> Result<Ingest, IngestError> {
        let l = self.learners.get_mut(&e.learner).ok_or(IngestError::UnknownLearner(e.learner))?;
        if l.frames.contains(&e.frame) {
            return Ok(Ingest::Duplicate);
        }
        if let Some(last) = l.events.last() {
            if e.timestamp_ms < last.timestamp_ms {
                return Err(IngestError::Stale { learner: e.learner, last: last.timestamp_ms, got: e.timestamp_ms });
            }
        }
        l.frames.insert(e.frame);
        l.events.push(*e);
        Ok(Ingest::Accepted)
    }

    /// Undoes the ingestion of `e` if it is the learner's latest event.
    pub(crate) fn retract(&mut self, e: &WireEvent) {
        if let Some(l) = self.learners.get_mut(&e.learner) {
            if l.events.last() == Some(e) {
                l.events.pop();
                l.frames.remove(&e.frame);
            }
        }
    }

    pub fn learner(&self, id: u32) -> Option<&LearnerSession> {
        self.learners.get(&id)
    }

    /// Learners in id order.
    pub fn learners(&self) -> impl Iterator<Item = &LearnerSession> {
        self.learners.values()
    }

    /// Latest event timestamp over all learners.
    pub fn span_ms(&self) -> u64 {
        self.learners.values().filter_map(|l| l.events.last()).map(|e| e.timestamp_ms).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(learner: u32, ts: u64, frame: u32) -> WireEvent {
        WireEvent { learner, timestamp_ms: ts, frame, class: 1, confidence: 10_000 }
    }

    #[test]
    fn ingest_rules() {
        let mut s = SessionState::new();
        assert_eq!(s.ingest(&ev(1, 1000, 1)), Err(IngestError::UnknownLearner(1)));
        s.register(1, "ana");
        assert_eq!(s.ingest(&ev(1, 1000, 1)), Ok(Ingest::Accepted));
        let snapshot = s.clone();
        assert_eq!(s.ingest(&ev(1, 1000, 1)), Ok(Ingest::Duplicate));
        assert_eq!(s.ingest(&ev(1, 5, 1)), Ok(Ingest::Duplicate));
        assert_eq!(s, snapshot);
        assert_eq!(s.ingest(&ev(1, 999, 2)), Err(IngestError::Stale { learner: 1, last: 1000, got: 999 }));
        assert_eq!(s, snapshot);
        assert_eq!(s.ingest(&ev(1, 1000, 2)), Ok(Ingest::Accepted));
        assert_eq!(s.learner(1).unwrap().events().len(), 2);
    }

    #[test]
    fn reconnect_keeps_log() {
        let mut s = SessionState::new();
        s.register(3, "bo");
        s.ingest(&ev(3, 10, 0)).unwrap();
        s.disconnect(3);
        assert!(!s.learner(3).unwrap().connected);
        s.register(3, "");
        let l = s.learner(3).unwrap();
        assert!(l.connected);
        assert_eq!(l.name, "bo");
        assert_eq!(l.events().len(), 1);
    }

    #[test]
    fn replay_matches_live() {
        let mut live = SessionState::new();
        live.register(1, "");
        live.register(2, "");
        let events = [ev(2, 5, 0), ev(1, 7, 0), ev(2, 9, 1)];
        for e in &events {
            live.ingest(e).unwrap();
        }
        let mut replayed = SessionState::replay(&events).unwrap();
        assert_eq!(replayed.span_ms(), 9);
        replayed.register(1, "");
        replayed.register(2, "");
        assert_eq!(replayed, live);
    }
}
