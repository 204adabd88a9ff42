//! Participation telemetry: the wire protocol, the supervisor that collects
//! learners' gesture events, the indicator computed from them, and the
//! simulated clients and exporters built on top.

pub mod client;
pub mod export;
pub mod indicator;
pub mod protocol;
pub mod session;
pub mod simulate;
pub mod store;
pub mod supervisor;

pub use client::Client;
pub use export::{export, ExportFormat};
pub use indicator::{indicator, series, IndicatorParams, ParticipationSeries};
pub use protocol::{decode, encode, ErrorCode, Message, MessageType, ProtocolError, WireEvent};
pub use session::{Ingest, IngestError, LearnerSession, SessionState};
pub use simulate::{rate_schedule, simulate, LearnerSchedule, SimOptions, SimReport};
pub use store::{load_events, EventStore, StoreError};
pub use supervisor::{Supervisor, SupervisorConfig, SupervisorHandle};

use crate::pipeline::GestureEvent;

#[derive(Debug, thiserror::Error)]
pub enum TelemetryError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("{context}: {err}")]
    Io { context: String, err: std::io::Error },
    #[error("peer sent ERROR {code}: {message}")]
    Rejected { code: u8, message: String },
    #[error("unexpected {0:?} message")]
    Unexpected(MessageType),
    #[error("connection closed by peer")]
    Closed,
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
}

impl TelemetryError {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        TelemetryError::Io { context: context.into(), err: source }
    }
}

impl From<&GestureEvent> for WireEvent {
    fn from(e: &GestureEvent) -> Self {
        WireEvent {
            learner: e.learner,
            timestamp_ms: e.timestamp_ms,
            frame: e.frame,
            class: e.class,
            confidence: WireEvent::quantize_confidence(e.confidence),
        }
    }
}
