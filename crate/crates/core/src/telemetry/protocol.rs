//! Length-prefixed binary wire format.
//!
//! Every message is an 8-byte header followed by its payload. All integers
//! are big-endian.
//!
//! | offset | size | field          |
//! |--------|------|----------------|
//! | 0      | 4    | magic `GPRP`   |
//! | 4      | 1    | version (1)    |
//! | 5      | 1    | message type   |
//! | 6      | 2    | payload length |

use std::io::{self, Read, Write};

pub const MAGIC: u32 = 0x4750_5250;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 8;
pub const MAX_PAYLOAD: usize = 4096;
/// Wire confidences are fixed point with this many steps per unit.
pub const CONFIDENCE_SCALE: u16 = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 1,
    HelloAck = 2,
    Event = 3,
    EventAck = 4,
    Heartbeat = 5,
    Bye = 6,
    Error = 7,
}

impl MessageType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MessageType::Hello,
            2 => MessageType::HelloAck,
            3 => MessageType::Event,
            4 => MessageType::EventAck,
            5 => MessageType::Heartbeat,
            6 => MessageType::Bye,
            7 => MessageType::Error,
            _ => return None,
        })
    }
}

/// A gesture event as carried on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WireEvent {
    pub learner: u32,
    pub timestamp_ms: u64,
    pub frame: u32,
    pub class: u8,
    /// Confidence in units of 1/10000, at most [`CONFIDENCE_SCALE`].
    pub confidence: u16,
}

impl WireEvent {
    pub fn confidence(&self) -> f64 {
        self.confidence as f64 / CONFIDENCE_SCALE as f64
    }

    /// Fixed-point confidence for `c`, clamped to `[0, 1]`.
    pub fn quantize_confidence(c: f64) -> u16 {
        if c.is_nan() {
            return 0;
        }
        (c.clamp(0.0, 1.0) * CONFIDENCE_SCALE as f64).round() as u16
    }
}

/// Error codes carried by ERROR messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    Malformed = 1,
    Version = 2,
    NotRegistered = 3,
    StaleTimestamp = 4,
    LearnerConflict = 5,
    Storage = 6,
    Timeout = 7,
}

impl ErrorCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => ErrorCode::Malformed,
            2 => ErrorCode::Version,
            3 => ErrorCode::NotRegistered,
            4 => ErrorCode::StaleTimestamp,
            5 => ErrorCode::LearnerConflict,
            6 => ErrorCode::Storage,
            7 => ErrorCode::Timeout,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Message {
    Hello { session: u32, learner: u32, name: String },
    HelloAck,
    Event(WireEvent),
    EventAck { learner: u32, frame: u32 },
    Heartbeat { timestamp_ms: u64 },
    Bye,
    /// `code` is kept raw so unknown codes from newer peers still decode.
    Error { code: u8, message: String },
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Message::Hello { .. } => MessageType::Hello,
            Message::HelloAck => MessageType::HelloAck,
            Message::Event(_) => MessageType::Event,
            Message::EventAck { .. } => MessageType::EventAck,
            Message::Heartbeat { .. } => MessageType::Heartbeat,
            Message::Bye => MessageType::Bye,
            Message::Error { .. } => MessageType::Error,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        let mut message = message.into();
        if message.len() > u8::MAX as usize {
            let mut cut = u8::MAX as usize;
            while !message.is_char_boundary(cut) {
                cut -= 1;
            }
            message.truncate(cut);
        }
        Message::Error { code: code as u8, message }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("bad magic 0x{0:08x}")]
    BadMagic(u32),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type {0}")]
    BadType(u8),
    #[error("payload length {0} exceeds {MAX_PAYLOAD}")]
    Oversize(usize),
    #[error("truncated {field}: need {needed} bytes, have {available}")]
    Truncated { field: &'static str, needed: usize, available: usize },
    #[error("{kind:?} payload has {extra} trailing bytes")]
    Trailing { kind: MessageType, extra: usize },
    #[error("{field} is not valid UTF-8")]
    BadUtf8 { field: &'static str },
    #[error("{field} is {len} bytes, limit is 255")]
    StringTooLong { field: &'static str, len: usize },
    #[error("{field} value {value} out of range")]
    OutOfRange { field: &'static str, value: u64 },
}

#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("connection closed")]
    Closed,
}

fn put_str(out: &mut Vec<u8>, field: &'static str, s: &str) -> Result<(), ProtocolError> {
    let len = s.len();
    if len > u8::MAX as usize {
        return Err(ProtocolError::StringTooLong { field, len });
    }
    out.push(len as u8);
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

/// Serializes `msg`, header included.
pub fn encode(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let mut p = Vec::new();
    match msg {
        Message::Hello { session, learner, name } => {
            p.extend_from_slice(&session.to_be_bytes());
            p.extend_from_slice(&learner.to_be_bytes());
            put_str(&mut p, "name", name)?;
        }
        Message::HelloAck | Message::Bye => {}
        Message::Event(e) => {
            if e.confidence > CONFIDENCE_SCALE {
                return Err(ProtocolError::OutOfRange { field: "confidence", value: e.confidence as u64 });
            }
            p.extend_from_slice(&e.learner.to_be_bytes());
            p.extend_from_slice(&e.timestamp_ms.to_be_bytes());
            p.extend_from_slice(&e.frame.to_be_bytes());
            p.push(e.class);
            p.extend_from_slice(&e.confidence.to_be_bytes());
        }
        Message::EventAck { learner, frame } => {
            p.extend_from_slice(&learner.to_be_bytes());
            p.extend_from_slice(&frame.to_be_bytes());
        }
        Message::Heartbeat { timestamp_ms } => p.extend_from_slice(&timestamp_ms.to_be_bytes()),
        Message::Error { code, message } => {
            p.push(*code);
            put_str(&mut p, "message", message)?;
        }
    }
    debug_assert!(p.len() <= MAX_PAYLOAD, "payloads are bounded by construction");
    let mut out = Vec::with_capacity(HEADER_LEN + p.len());
    out.extend_from_slice(&MAGIC.to_be_bytes());
    out.push(VERSION);
    out.push(msg.kind() as u8);
    out.extend_from_slice(&(p.len() as u16).to_be_bytes());
    out.extend_from_slice(&p);
    Ok(out)
}

/// Validated header: message type and payload length.
pub fn decode_header(bytes: &[u8]) -> Result<(MessageType, usize), ProtocolError> {
    if bytes.len() < HEADER_LEN {
        return Err(ProtocolError::Truncated { field: "header", needed: HEADER_LEN, available: bytes.len() });
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().expect("4 bytes"));
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    if bytes[4] != VERSION {
        return Err(ProtocolError::BadVersion(bytes[4]));
    }
    let kind = MessageType::from_u8(bytes[5]).ok_or(ProtocolError::BadType(bytes[5]))?;
    let len = u16::from_be_bytes([bytes[6], bytes[7]]) as usize;
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::Oversize(len));
    }
    Ok((kind, len))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, field: &'static str, n: usize) -> Result<&'a [u8], ProtocolError> {
        let available = self.buf.len() - self.pos;
        if available < n {
            return Err(ProtocolError::Truncated { field, needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, field: &'static str) -> Result<u8, ProtocolError> {
        Ok(self.take(field, 1)?[0])
    }

    fn u16(&mut self, field: &'static str) -> Result<u16, ProtocolError> {
        Ok(u16::from_be_bytes(self.take(field, 2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, field: &'static str) -> Result<u32, ProtocolError> {
        Ok(u32::from_be_bytes(self.take(field, 4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64, ProtocolError> {
        Ok(u64::from_be_bytes(self.take(field, 8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self, field: &'static str) -> Result<String, ProtocolError> {
        let n = self.u8(field)? as usize;
        let bytes = self.take(field, n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| ProtocolError::BadUtf8 { field })
    }
}

/// Decodes a payload of a known type; the slice must be exactly the payload.
pub fn decode_payload(kind: MessageType, payload: &[u8]) -> Result<Message, ProtocolError> {
    let mut c = Cursor { buf: payload, pos: 0 };
    let msg = match kind {
        MessageType::Hello => {
            Message::Hello { session: c.u32("session")?, learner: c.u32("learner")?, name: c.str("name")? }
        }
        MessageType::HelloAck => Message::HelloAck,
        MessageType::Event => {
            let e = WireEvent {
                learner: c.u32("learner")?,
                timestamp_ms: c.u64("timestamp_ms")?,
                frame: c.u32("frame")?,
                class: c.u8("class")?,
                confidence: c.u16("confidence")?,
            };
            if e.confidence > CONFIDENCE_SCALE {
                return Err(ProtocolError::OutOfRange { field: "confidence", value: e.confidence as u64 });
            }
            Message::Event(e)
        }
        MessageType::EventAck => Message::EventAck { learner: c.u32("learner")?, frame: c.u32("frame")? },
        MessageType::Heartbeat => Message::Heartbeat { timestamp_ms: c.u64("timestamp_ms")? },
        MessageType::Bye => Message::Bye,
        MessageType::Error => Message::Error { code: c.u8("code")?, message: c.str("message")? },
    };
    if c.pos != payload.len() {
        return Err(ProtocolError::Trailing { kind, extra: payload.len() - c.pos });
    }
    Ok(msg)
}

/// Decodes one message from the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(Message, usize), ProtocolError> {
    let (kind, len) = decode_header(bytes)?;
    let available = bytes.len() - HEADER_LEN;
    if available < len {
        return Err(ProtocolError::Truncated { field: "payload", needed: len, available });
    }
    let msg = decode_payload(kind, &bytes[HEADER_LEN..HEADER_LEN + len])?;
    Ok((msg, HEADER_LEN + len))
}

/// Decodes a buffer holding exactly one message.
pub fn decode(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(ProtocolError::Trailing { kind: msg.kind(), extra: bytes.len() - used });
    }
    Ok(msg)
}

/// Reads one message from a stream. A clean end of stream before the first
/// header byte is [`ReadError::Closed`].
pub fn read_message(r: &mut impl Read) -> Result<Message, ReadError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(ReadError::Closed),
            Ok(0) => {
                return Err(ProtocolError::Truncated { field: "header", needed: HEADER_LEN, available: got }.into())
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (kind, len) = decode_header(&header)?;
    let mut payload = vec![0u8; len];
    let mut got = 0;
    while got < len {
        match r.read(&mut payload[got..]) {
            Ok(0) => return Err(ProtocolError::Truncated { field: "payload", needed: len, available: got }.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(decode_payload(kind, &payload)?)
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<(), ReadError> {
    let bytes = encode(msg)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_string() -> impl Strategy<Value = String> {
        proptest::collection::vec(any::<char>(), 0..40)
            .prop_map(|cs| cs.into_iter().collect::<String>())
            .prop_filter("fits a u8 length", |s| s.len() <= 255)
    }

    pub(crate) fn arb_message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (any::<u32>(), any::<u32>(), arb_string()).prop_map(|(session, learner, name)| Message::Hello {
                session,
                learner,
                name
            }),
            Just(Message::HelloAck),
            (any::<u32>(), any::<u64>(), any::<u32>(), any::<u8>(), 0..=CONFIDENCE_SCALE).prop_map(
                |(learner, timestamp_ms, frame, class, confidence)| Message::Event(WireEvent {
                    learner,
                    timestamp_ms,
                    frame,
                    class,
                    confidence
                })
            ),
            (any::<u32>(), any::<u32>()).prop_map(|(learner, frame)| Message::EventAck { learner, frame }),
            any::<u64>().prop_map(|timestamp_ms| Message::Heartbeat { timestamp_ms }),
            Just(Message::Bye),
            (any::<u8>(), arb_string()).prop_map(|(code, message)| Message::Error { code, message }),
        ]
    }

    #[test]
    fn heartbeat_layout() {
        let b = encode(&Message::Heartbeat { timestamp_ms: 0 }).unwrap();
        assert_eq!(b, [0x47, 0x50, 0x52, 0x50, 1, 5, 0, 8, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(decode(&b).unwrap(), Message::Heartbeat { timestamp_ms: 0 });
    }

    #[test]
    fn event_layout() {
        let e = WireEvent { learner: 2, timestamp_ms: 1000, frame: 7, class: 1, confidence: 9500 };
        let b = encode(&Message::Event(e)).unwrap();
        assert_eq!(b.len(), HEADER_LEN + 19);
        assert_eq!(&b[6..8], &[0, 19]);
        assert_eq!(&b[8..12], &[0, 0, 0, 2]);
        assert_eq!(&b[12..20], &1000u64.to_be_bytes());
        assert_eq!(&b[25..27], &9500u16.to_be_bytes());
        assert_eq!(e.confidence(), 0.95);
    }

    #[test]
    fn header_errors() {
        let good = encode(&Message::Bye).unwrap();
        let mut b = good.clone();
        b[0] = 0;
        assert_eq!(decode(&b), Err(ProtocolError::BadMagic(0x0050_5250)));
        let mut b = good.clone();
        b[4] = 2;
        assert_eq!(decode(&b), Err(ProtocolError::BadVersion(2)));
        let mut b = good.clone();
        b[5] = 8;
        assert_eq!(decode(&b), Err(ProtocolError::BadType(8)));
        let mut b = good.clone();
        b[6..8].copy_from_slice(&4097u16.to_be_bytes());
        assert_eq!(decode(&b), Err(ProtocolError::Oversize(4097)));
        assert!(matches!(decode(&good[..3]), Err(ProtocolError::Truncated { field: "header", .. })));
    }

    #[test]
    fn payload_errors() {
        let mut b = encode(&Message::Hello { session: 1, learner: 1, name: "ab".into() }).unwrap();
        let n = b.len();
        b[n - 2] = 0xff;
        assert_eq!(decode(&b), Err(ProtocolError::BadUtf8 { field: "name" }));

        let mut b = encode(&Message::Heartbeat { timestamp_ms: 1 }).unwrap();
        b[7] = 9;
        b.push(0);
        assert_eq!(decode(&b), Err(ProtocolError::Trailing { kind: MessageType::Heartbeat, extra: 1 }));

        let e = WireEvent { learner: 1, timestamp_ms: 0, frame: 0, class: 0, confidence: 10_001 };
        assert!(matches!(encode(&Message::Event(e)), Err(ProtocolError::OutOfRange { field: "confidence", .. })));
        let mut b = encode(&Message::Event(WireEvent { confidence: 0, ..e })).unwrap();
        let n = b.len();
        b[n - 2..].copy_from_slice(&10_001u16.to_be_bytes());
        assert!(matches!(decode(&b), Err(ProtocolError::OutOfRange { field: "confidence", .. })));

        let long = "x".repeat(256);
        assert_eq!(
            encode(&Message::Hello { session: 0, learner: 0, name: long }),
            Err(ProtocolError::StringTooLong { field: "name", len: 256 })
        );
    }

    #[test]
    fn error_message_is_truncated_on_char_boundary() {
        let m = Message::error(ErrorCode::Malformed, "é".repeat(200));
        let Message::Error { message, .. } = &m else { unreachable!() };
        assert_eq!(message.len(), 254);
        assert!(encode(&m).is_ok());
    }

    #[test]
    fn stream_reading() {
        let mut buf = Vec::new();
        write_message(&mut buf, &Message::HelloAck).unwrap();
        write_message(&mut buf, &Message::Heartbeat { timestamp_ms: 9 }).unwrap();
        let mut r = &buf[..];
        assert_eq!(read_message(&mut r).unwrap(), Message::HelloAck);
        assert_eq!(read_message(&mut r).unwrap(), Message::Heartbeat { timestamp_ms: 9 });
        assert!(matches!(read_message(&mut r), Err(ReadError::Closed)));
        let mut short = &buf[..10];
        read_message(&mut short).unwrap();
        assert!(matches!(read_message(&mut short), Err(ReadError::Protocol(ProtocolError::Truncated { .. }))));
    }

    #[test]
    fn confidence_quantization() {
        assert_eq!(WireEvent::quantize_confidence(1.5), 10_000);
        assert_eq!(WireEvent::quantize_confidence(-1.0), 0);
        assert_eq!(WireEvent::quantize_confidence(f64::NAN), 0);
        assert_eq!(WireEvent::quantize_confidence(0.12345), 1235);
    }

    proptest! {
        #[test]
        fn round_trip(m in arb_message()) {
            let b = encode(&m).unwrap();
            prop_assert_eq!(b.len(), HEADER_LEN + u16::from_be_bytes([b[6], b[7]]) as usize);
            prop_assert_eq!(decode(&b).unwrap(), m);
        }

        #[test]
        fn truncation_is_reported(m in arb_message(), cut in 1usize..64) {
            let b = encode(&m).unwrap();
            let cut = cut.min(b.len());
            let err = decode(&b[..b.len() - cut]).unwrap_err();
            prop_assert!(matches!(err, ProtocolError::Truncated { .. }), "{:?}", err);
        }

        #[test]
        fn random_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode(&bytes);
        }
    }
}
