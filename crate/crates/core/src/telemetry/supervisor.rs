//! TCP supervisor: one thread per connection, a single lock serializing
//! ingestion and store appends.

use super::indicator::{series, IndicatorParams, ParticipationSeries};
use super::protocol::{decode_header, decode_payload, encode, ErrorCode, Message, ProtocolError, ReadError, HEADER_LEN};
use super::session::{Ingest, IngestError, SessionState};
use super::store::EventStore;
use super::TelemetryError;
use std::collections::HashSet;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorConfig {
    pub heartbeat_interval: Duration,
    /// Silent intervals after which a learner is marked disconnected.
    pub missed_heartbeats: u32,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        SupervisorConfig { heartbeat_interval: Duration::from_secs(5), missed_heartbeats: 3 }
    }
}

impl SupervisorConfig {
    fn liveness(&self) -> Duration {
        self.heartbeat_interval * self.missed_heartbeats
    }

    fn tick(&self) -> Duration {
        self.heartbeat_interval.min(Duration::from_millis(100)).max(Duration::from_millis(1))
    }
}

struct Inner {
    state: SessionState,
    store: EventStore,
    /// Learners that currently hold a connection.
    live: HashSet<u32>,
}

struct Shared {
    inner: Mutex<Inner>,
    shutdown: AtomicBool,
    cfg: SupervisorConfig,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        // a panicking connection thread must not take the service down
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }
}

pub struct Supervisor {
    listener: TcpListener,
    shared: Arc<Shared>,
}

/// Cloneable control handle for a running supervisor.
#[derive(Clone)]
pub struct SupervisorHandle {
    shared: Arc<Shared>,
    addr: SocketAddr,
}

impl SupervisorHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Consistent copy of the session state.
    pub fn snapshot(&self) -> SessionState {
        self.shared.lock().state.clone()
    }

    /// Series for every known learner over `[0, span]`, span defaulting to
    /// the latest event.
    pub fn series(
        &self,
        bin_width_s: f64,
        span_ms: Option<u64>,
        p: &IndicatorParams,
    ) -> Result<Vec<ParticipationSeries>, TelemetryError> {
        let s = self.snapshot();
        let span = span_ms.unwrap_or_else(|| s.span_ms());
        s.learners().map(|l| series(l.id, l.events(), span, bin_width_s, p)).collect()
    }

    /// Stops accepting connections; open ones close within one tick.
    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
    }
}

impl Supervisor {
    /// Binds the listener and opens the store, replaying any events already
    /// in it. Both failures are fatal here so nothing is lost later.
    pub fn bind(addr: impl ToSocketAddrs, store: &Path, cfg: SupervisorConfig) -> Result<Self, TelemetryError> {
        if cfg.heartbeat_interval.is_zero() || cfg.missed_heartbeats == 0 {
            return Err(TelemetryError::Params("heartbeat interval and missed count must be positive".into()));
        }
        let (store, existing) = EventStore::open(store)?;
        let state = SessionState::replay(&existing)?;
        let listener = TcpListener::bind(addr).map_err(|e| TelemetryError::io("bind", e))?;
        let shared = Arc::new(Shared {
            inner: Mutex::new(Inner { state, store, live: HashSet::new() }),
            shutdown: AtomicBool::new(false),
            cfg,
        });
        Ok(Supervisor { listener, shared })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn handle(&self) -> SupervisorHandle {
        SupervisorHandle { shared: Arc::clone(&self.shared), addr: self.local_addr() }
    }

    /// Accepts connections until [`SupervisorHandle::shutdown`], then waits
    /// for the connection threads to finish.
    pub fn serve(self) -> Result<(), TelemetryError> {
        let mut workers = Vec::new();
        for conn in self.listener.incoming() {
            if self.shared.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                // a failed accept only affects that client
                Err(_) => continue,
            };
            let shared = Arc::clone(&self.shared);
            workers.push(thread::spawn(move || Connection::new(stream, shared).run()));
            workers.retain(|w| !w.is_finished());
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }

    /// Runs [`serve`](Self::serve) on a background thread.
    pub fn spawn(self) -> (SupervisorHandle, thread::JoinHandle<Result<(), TelemetryError>>) {
        let handle = self.handle();
        (handle, thread::spawn(move || self.serve()))
    }
}

/// Incremental message reader that survives read timeouts mid-message.
#[derive(Default)]
pub(crate) struct FrameReader {
    buf: Vec<u8>,
}

impl FrameReader {
    fn try_take(&mut self) -> Result<Option<Message>, ProtocolError> {
        if self.buf.len() < HEADER_LEN {
            return Ok(None);
        }
        let (kind, len) = decode_header(&self.buf)?;
        if self.buf.len() < HEADER_LEN + len {
            return Ok(None);
        }
        let msg = decode_payload(kind, &self.buf[HEADER_LEN..HEADER_LEN + len])?;
        self.buf.drain(..HEADER_LEN + len);
        Ok(Some(msg))
    }

    /// Next message, or `None` when the read timed out first.
    pub(crate) fn poll(&mut self, r: &mut impl Read) -> Result<Option<Message>, ReadError> {
        loop {
            if let Some(m) = self.try_take()? {
                return Ok(Some(m));
            }
            let mut chunk = [0u8; 1024];
            match r.read(&mut chunk) {
                Ok(0) if self.buf.is_empty() => return Err(ReadError::Closed),
                Ok(0) => {
                    let available = self.buf.len();
                    let err = if available < HEADER_LEN {
                        ProtocolError::Truncated { field: "header", needed: HEADER_LEN, available }
                    } else {
                        let needed = HEADER_LEN + decode_header(&self.buf)?.1;
                        ProtocolError::Truncated { field: "payload", needed, available }
                    };
                    return Err(err.into());
                }
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => return Ok(None),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

struct Connection {
    stream: TcpStream,
    shared: Arc<Shared>,
    reader: FrameReader,
    learner: Option<u32>,
}

enum Flow {
    Continue,
    Close,
}

impl Connection {
    fn new(stream: TcpStream, shared: Arc<Shared>) -> Self {
        Connection { stream, shared, reader: FrameReader::default(), learner: None }
    }

    fn send(&mut self, msg: &Message) -> bool {
        let bytes = encode(msg).expect("server messages are well-formed");
        self.stream.write_all(&bytes).and_then(|_| self.stream.flush()).is_ok()
    }

    fn run(mut self) {
        let tick = self.shared.cfg.tick();
        if self.stream.set_read_timeout(Some(tick)).is_err() {
            return;
        }
        let _ = self.stream.set_nodelay(true);
        let mut last_seen = Instant::now();
        loop {
            let mut stream = &self.stream;
            match self.reader.poll(&mut stream) {
                Ok(Some(msg)) => {
                    last_seen = Instant::now();
                    if let Flow::Close = self.handle(msg) {
                        break;
                    }
                }
                Ok(None) => {
                    if self.shared.shutdown.load(Ordering::SeqCst) {
                        break;
                    }
                    if last_seen.elapsed() >= self.shared.cfg.liveness() {
                        self.send(&Message::error(ErrorCode::Timeout, "no heartbeat"));
                        break;
                    }
                }
                Err(ReadError::Protocol(ProtocolError::BadVersion(v))) => {
                    self.send(&Message::error(ErrorCode::Version, format!("unsupported version {v}")));
                    break;
                }
                Err(ReadError::Protocol(e)) => {
                    self.send(&Message::error(ErrorCode::Malformed, e.to_string()));
                    break;
                }
                Err(ReadError::Closed | ReadError::Io(_)) => break,
            }
        }
        if let Some(id) = self.learner {
            let mut inner = self.shared.lock();
            inner.state.disconnect(id);
            inner.live.remove(&id);
        }
    }

    fn handle(&mut self, msg: Message) -> Flow {
        match (msg, self.learner) {
            (Message::Hello { learner, name, .. }, None) => {
                let taken = {
                    let mut inner = self.shared.lock();
                    if inner.live.contains(&learner) {
                        true
                    } else {
                        inner.live.insert(learner);
                        inner.state.register(learner, &name);
                        false
                    }
                };
                if taken {
                    self.send(&Message::error(ErrorCode::LearnerConflict, format!("learner {learner} already connected")));
                    return Flow::Close;
                }
                self.learner = Some(learner);
                if self.send(&Message::HelloAck) { Flow::Continue } else { Flow::Close }
            }
            (Message::Hello { .. }, Some(_)) => {
                self.send(&Message::error(ErrorCode::LearnerConflict, "HELLO already completed"));
                Flow::Continue
            }
            (Message::Event(e), None) => {
                self.send(&Message::error(ErrorCode::NotRegistered, format!("learner {} has not said HELLO", e.learner)));
                Flow::Continue
            }
            (Message::Event(e), Some(id)) if e.learner != id => {
                self.send(&Message::error(ErrorCode::LearnerConflict, format!("connection belongs to learner {id}")));
                Flow::Continue
            }
            (Message::Event(e), Some(_)) => {
                let reply = {
                    let mut inner = self.shared.lock();
                    match inner.state.ingest(&e) {
                        Ok(Ingest::Accepted) => match inner.store.append(&e) {
                            Ok(()) => Message::EventAck { learner: e.learner, frame: e.frame },
                            Err(err) => {
                                inner.state.retract(&e);
                                Message::error(ErrorCode::Storage, err.to_string())
                            }
                        },
                        Ok(Ingest::Duplicate) => Message::EventAck { learner: e.learner, frame: e.frame },
                        Err(err @ IngestError::Stale { .. }) => Message::error(ErrorCode::StaleTimestamp, err.to_string()),
                        Err(err @ IngestError::UnknownLearner(_)) => {
                            Message::error(ErrorCode::NotRegistered, err.to_string())
                        }
                    }
                };
                if self.send(&reply) { Flow::Continue } else { Flow::Close }
            }
            (Message::Heartbeat { timestamp_ms }, learner) => {
                if let Some(id) = learner {
                    let _ = self.shared.lock().state.heartbeat(id, timestamp_ms);
                }
                Flow::Continue
            }
            (Message::Bye, _) => Flow::Close,
            (other, _) => {
                self.send(&Message::error(ErrorCode::Malformed, format!("unexpected {:?} from client", other.kind())));
                Flow::Continue
            }
        }
    }
}
