//! Blocking protocol client used by learners and the simulator.

use super::protocol::{encode, Message, ReadError, WireEvent};
use super::supervisor::FrameReader;
use super::TelemetryError;
use std::io::Write;
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

pub struct Client {
    stream: TcpStream,
    reader: FrameReader,
    learner: u32,
    timeout: Duration,
}

impl Client {
    /// Connects and completes the HELLO handshake.
    pub fn connect(
        addr: impl ToSocketAddrs,
        session: u32,
        learner: u32,
        name: &str,
        timeout: Duration,
    ) -> Result<Self, TelemetryError> {
        let addrs: Vec<SocketAddr> =
            addr.to_socket_addrs().map_err(|e| TelemetryError::io("resolve address", e))?.collect();
        let mut last = None;
        let mut stream = None;
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        let stream = match (stream, last) {
            (Some(s), _) => s,
            (None, Some(e)) => return Err(TelemetryError::io("connect", e)),
            (None, None) => return Err(TelemetryError::Params("address resolved to nothing".into())),
        };
        stream.set_read_timeout(Some(timeout.min(Duration::from_millis(100)))).map_err(|e| TelemetryError::io("configure socket", e))?;
        let _ = stream.set_nodelay(true);
        let mut c = Client { stream, reader: FrameReader::default(), learner, timeout };
        c.send(&Message::Hello { session, learner, name: name.to_string() })?;
        match c.recv("HELLO_ACK")? {
            Message::HelloAck => Ok(c),
            other => Err(unexpected(other)),
        }
    }

    pub fn learner(&self) -> u32 {
        self.learner
    }

    fn send(&mut self, msg: &Message) -> Result<(), TelemetryError> {
        let bytes = encode(msg)?;
        self.stream.write_all(&bytes).and_then(|_| self.stream.flush()).map_err(|e| TelemetryError::io("send", e))
    }

    fn recv(&mut self, waiting_for: &'static str) -> Result<Message, TelemetryError> {
        let deadline = Instant::now() + self.timeout;
        loop {
            let mut s = &self.stream;
            match self.reader.poll(&mut s) {
                Ok(Some(m)) => return Ok(m),
                Ok(None) if Instant::now() >= deadline => return Err(TelemetryError::Timeout(waiting_for)),
                Ok(None) => {}
                Err(ReadError::Closed) => return Err(TelemetryError::Closed),
                Err(ReadError::Protocol(e)) => return Err(e.into()),
                Err(ReadError::Io(e)) => return Err(TelemetryError::io("receive", e)),
            }
        }
    }

    /// Sends one event and waits for its acknowledgement.
    pub fn send_event(&mut self, e: &WireEvent) -> Result<(), TelemetryError> {
        self.send(&Message::Event(*e))?;
        match self.recv("EVENT_ACK")? {
            Message::EventAck { learner, frame } if learner == e.learner && frame == e.frame => Ok(()),
            other => Err(unexpected(other)),
        }
    }

    pub fn heartbeat(&mut self, timestamp_ms: u64) -> Result<(), TelemetryError> {
        self.send(&Message::Heartbeat { timestamp_ms })
    }

    pub fn bye(mut self) -> Result<(), TelemetryError> {
        self.send(&Message::Bye)
    }
}

fn unexpected(m: Message) -> TelemetryError {
    match m {
        Message::Error { code, message } => TelemetryError::Rejected { code, message },
        other => TelemetryError::Unexpected(other.kind()),
    }
}
