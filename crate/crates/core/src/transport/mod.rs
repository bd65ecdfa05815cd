//! Message framing between the two parties.
//!
//! Every frame is `[1B type][4B big-endian length][payload]`. Bulk lists of
//! fixed-length elements travel as batches: the first frame of a batch starts
//! with an 8-byte element count, and the elements follow across as many
//! frames of the same type as the frame size limit requires. Order within a
//! batch is preserved exactly.

mod loopback;
pub mod tls;

use std::collections::BTreeMap;
use std::io::{ErrorKind, Read, Write};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

pub use loopback::{loopback_pair, LoopbackStream};

/// Frames larger than this are split; receivers reject anything bigger.
pub const DEFAULT_MAX_FRAME: usize = 16 * 1024 * 1024;
pub const HEADER_LEN: usize = 5;
const BATCH_COUNT_LEN: usize = 8;

/// Registered message types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageCode {
    Handshake = 0x01,
    /// Sender's once-encrypted band signatures.
    SigBatch = 0x02,
    /// Sender's signatures after the receiver's re-encryption.
    ReencBatch = 0x03,
    /// Receiver's once-encrypted band signatures.
    ReceiverSigs = 0x04,
    /// Receiver's signatures after the sender's re-encryption (mutual).
    MutualReturn = 0x05,
    RevealRequest = 0x06,
    RevealResponse = 0x07,
    PsiCaRequest = 0x08,
    PsiCaResponse = 0x09,
    Finish = 0x0a,
    Abort = 0xff,
}

impl MessageCode {
    pub const ALL: [MessageCode; 11] = [
        MessageCode::Handshake,
        MessageCode::SigBatch,
        MessageCode::ReencBatch,
        MessageCode::ReceiverSigs,
        MessageCode::MutualReturn,
        MessageCode::RevealRequest,
        MessageCode::RevealResponse,
        MessageCode::PsiCaRequest,
        MessageCode::PsiCaResponse,
        MessageCode::Finish,
        MessageCode::Abort,
    ];

    pub fn from_u8(code: u8) -> Option<Self> {
        MessageCode::ALL.iter().copied().find(|c| *c as u8 == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageCode::Handshake => "HANDSHAKE",
            MessageCode::SigBatch => "SIG_BATCH",
            MessageCode::ReencBatch => "REENC_BATCH",
            MessageCode::ReceiverSigs => "RECEIVER_SIGS",
            MessageCode::MutualReturn => "MUTUAL_RETURN",
            MessageCode::RevealRequest => "REVEAL_REQUEST",
            MessageCode::RevealResponse => "REVEAL_RESPONSE",
            MessageCode::PsiCaRequest => "PSI_CA_REQUEST",
            MessageCode::PsiCaResponse => "PSI_CA_RESPONSE",
            MessageCode::Finish => "FINISH",
            MessageCode::Abort => "ABORT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub code: MessageCode,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(code: MessageCode, payload: Vec<u8>) -> Self {
        Frame { code, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.push(self.code as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decode one frame from the front of `buf`, returning it and the number
    /// of bytes consumed.
    pub fn decode(buf: &[u8], max_frame: usize) -> Result<(Frame, usize)> {
        if buf.len() < HEADER_LEN {
            return Err(Error::MalformedMessage("truncated frame header".into()));
        }
        let (code, len) = parse_header(buf[..HEADER_LEN].try_into().unwrap(), max_frame)?;
        let end = HEADER_LEN + len;
        if buf.len() < end {
            return Err(Error::MalformedMessage("truncated frame payload".into()));
        }
        Ok((Frame::new(code, buf[HEADER_LEN..end].to_vec()), end))
    }
}

fn parse_header(h: &[u8; HEADER_LEN], max_frame: usize) -> Result<(MessageCode, usize)> {
    let code = MessageCode::from_u8(h[0])
        .ok_or_else(|| Error::MalformedMessage(format!("unknown message type 0x{:02x}", h[0])))?;
    let len = u32::from_be_bytes([h[1], h[2], h[3], h[4]]) as usize;
    if len > max_frame {
        return Err(Error::MalformedMessage(format!("frame of {len} bytes exceeds limit {max_frame}")));
    }
    Ok((code, len))
}

/// Byte and time accounting for one channel.
#[derive(Debug, Clone, Default)]
pub struct TransportStats {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    /// Wall time spent inside channel reads and writes, including waits.
    pub io_time: Duration,
    pub sent_codes: BTreeMap<MessageCode, u64>,
    pub received_codes: BTreeMap<MessageCode, u64>,
}

impl TransportStats {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_sent + self.bytes_received
    }
}

/// A frame-oriented, ordered, reliable channel to the peer.
pub trait Channel {
    fn send_frame(&mut self, code: MessageCode, payload: &[u8]) -> Result<()>;
    fn recv_frame(&mut self) -> Result<Frame>;
    fn stats(&self) -> &TransportStats;
    fn max_frame(&self) -> usize;

    /// Receive a frame and require its type.
    fn expect_frame(&mut self, code: MessageCode) -> Result<Vec<u8>> {
        let frame = self.recv_frame()?;
        check_code(&frame, code)?;
        Ok(frame.payload)
    }

    /// Send an ordered list of fixed-length elements, chunked across frames.
    fn send_batch<E: AsRef<[u8]>>(&mut self, code: MessageCode, elem_len: usize, elements: &[E]) -> Result<()>
    where
        Self: Sized,
    {
        assert!(elem_len > 0);
        let max = self.max_frame();
        let first_cap = (max - BATCH_COUNT_LEN) / elem_len;
        let rest_cap = max / elem_len;
        assert!(first_cap > 0, "frame limit smaller than one element");
        let mut payload = Vec::with_capacity((elements.len().min(first_cap)) * elem_len + BATCH_COUNT_LEN);
        payload.extend_from_slice(&(elements.len() as u64).to_be_bytes());
        let mut iter = elements.iter();
        let mut cap = first_cap;
        loop {
            for e in iter.by_ref().take(cap) {
                let e = e.as_ref();
                if e.len() != elem_len {
                    return Err(Error::Input(format!("batch element of {} bytes, expected {elem_len}", e.len())));
                }
                payload.extend_from_slice(e);
            }
            self.send_frame(code, &payload)?;
            if iter.len() == 0 {
                return Ok(());
            }
            payload.clear();
            cap = rest_cap;
        }
    }

    /// Receive a batch sent with [`Channel::send_batch`].
    fn recv_batch(&mut self, code: MessageCode, elem_len: usize) -> Result<Batch>
    where
        Self: Sized,
    {
        let first = self.expect_frame(code)?;
        self.recv_batch_rest(code, elem_len, first)
    }

    /// Finish receiving a batch whose first frame payload was already read.
    fn recv_batch_rest(&mut self, code: MessageCode, elem_len: usize, first: Vec<u8>) -> Result<Batch>
    where
        Self: Sized,
    {
        if first.len() < BATCH_COUNT_LEN {
            return Err(Error::MalformedMessage("batch header truncated".into()));
        }
        let count = u64::from_be_bytes(first[..BATCH_COUNT_LEN].try_into().unwrap()) as usize;
        let total = count
            .checked_mul(elem_len)
            .ok_or_else(|| Error::MalformedMessage("batch size overflow".into()))?;
        let mut data = Vec::with_capacity(total.min(64 * self.max_frame()));
        let mut chunk = &first[BATCH_COUNT_LEN..];
        let mut owned;
        loop {
            if !chunk.len().is_multiple_of(elem_len) {
                return Err(Error::MalformedMessage(format!(
                    "batch chunk of {} bytes is not a multiple of {elem_len}",
                    chunk.len()
                )));
            }
            if data.len() + chunk.len() > total {
                return Err(Error::MalformedMessage("batch longer than announced".into()));
            }
            data.extend_from_slice(chunk);
            if data.len() == total {
                return Ok(Batch { elem_len, data });
            }
            owned = self.expect_frame(code)?;
            if owned.is_empty() {
                return Err(Error::MalformedMessage("empty batch continuation".into()));
            }
            chunk = &owned;
        }
    }
}

fn check_code(frame: &Frame, code: MessageCode) -> Result<()> {
    if frame.code == code {
        return Ok(());
    }
    if frame.code == MessageCode::Abort {
        return Err(abort_error(&frame.payload));
    }
    Err(Error::UnexpectedMessage { expected: code.name(), got: frame.code as u8 })
}

/// Decode an ABORT payload: one code byte followed by a UTF-8 reason.
pub fn abort_error(payload: &[u8]) -> Error {
    let code = payload.first().copied().unwrap_or(0);
    let reason = String::from_utf8_lossy(payload.get(1..).unwrap_or_default()).into_owned();
    Error::PeerAborted { code, reason }
}

pub fn abort_payload(err: &Error) -> Vec<u8> {
    let mut p = vec![err.code() as u8];
    p.extend_from_slice(err.to_string().as_bytes());
    p
}

/// A received list of fixed-length elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    elem_len: usize,
    data: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.data.len() / self.elem_len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, u8> {
        self.data.chunks_exact(self.elem_len)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }
}

/// Framing over any ordered byte stream (TLS, TCP, in-memory pipe).
pub struct FramedStream<S> {
    stream: S,
    max_frame: usize,
    stats: TransportStats,
}

impl<S: Read + Write> FramedStream<S> {
    pub fn new(stream: S) -> Self {
        Self::with_max_frame(stream, DEFAULT_MAX_FRAME)
    }

    pub fn with_max_frame(stream: S, max_frame: usize) -> Self {
        assert!(max_frame > BATCH_COUNT_LEN && max_frame <= u32::MAX as usize);
        FramedStream { stream, max_frame, stats: TransportStats::default() }
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }

    pub fn get_mut(&mut self) -> &mut S {
        &mut self.stream
    }

    pub fn into_inner(self) -> S {
        self.stream
    }

    fn read_exact_mapped(&mut self, buf: &mut [u8]) -> Result<()> {
        self.stream.read_exact(buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::ConnectionLost("peer closed the connection".into()),
            _ => Error::from_stream(e),
        })
    }
}

impl<S: Read + Write> Channel for FramedStream<S> {
    fn send_frame(&mut self, code: MessageCode, payload: &[u8]) -> Result<()> {
        if payload.len() > self.max_frame {
            return Err(Error::Input(format!("payload of {} bytes exceeds frame limit", payload.len())));
        }
        let start = Instant::now();
        let mut header = [0u8; HEADER_LEN];
        header[0] = code as u8;
        header[1..].copy_from_slice(&(payload.len() as u32).to_be_bytes());
        let res = self
            .stream
            .write_all(&header)
            .and_then(|_| self.stream.write_all(payload))
            .and_then(|_| self.stream.flush());
        self.stats.io_time += start.elapsed();
        res.map_err(Error::from_stream)?;
        self.stats.bytes_sent += (HEADER_LEN + payload.len()) as u64;
        self.stats.frames_sent += 1;
        *self.stats.sent_codes.entry(code).or_default() += 1;
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Frame> {
        let start = Instant::now();
        let res = (|| -> Result<Frame> {
            let mut header = [0u8; HEADER_LEN];
            self.read_exact_mapped(&mut header)?;
            let (code, len) = parse_header(&header, self.max_frame)?;
            let mut payload = vec![0u8; len];
            self.read_exact_mapped(&mut payload)?;
            Ok(Frame::new(code, payload))
        })();
        self.stats.io_time += start.elapsed();
        let frame = res?;
        self.stats.bytes_received += (HEADER_LEN + frame.payload.len()) as u64;
        self.stats.frames_received += 1;
        *self.stats.received_codes.entry(frame.code).or_default() += 1;
        Ok(frame)
    }

    fn stats(&self) -> &TransportStats {
        &self.stats
    }

    fn max_frame(&self) -> usize {
        self.max_frame
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::thread;

    #[test]
    fn empty_batch_round_trip() {
        let (a, b) = loopback_pair();
        let (mut a, mut b) = (FramedStream::new(a), FramedStream::new(b));
        a.send_batch::<[u8; 33]>(MessageCode::SigBatch, 33, &[]).unwrap();
        let batch = b.recv_batch(MessageCode::SigBatch, 33).unwrap();
        assert!(batch.is_empty());
        assert_eq!(a.stats().bytes_sent, (HEADER_LEN + 8) as u64);
    }

    #[test]
    fn batch_round_trip_preserves_order() {
        let elems: Vec<[u8; 33]> = (0..100_000u32)
            .map(|i| {
                let mut e = [0u8; 33];
                e[..4].copy_from_slice(&i.to_be_bytes());
                e[32] = (i * 7) as u8;
                e
            })
            .collect();
        let (a, b) = loopback_pair();
        let (mut a, mut b) = (FramedStream::new(a), FramedStream::new(b));
        let sent = elems.clone();
        let t = thread::spawn(move || a.send_batch(MessageCode::ReencBatch, 33, &sent).unwrap());
        let got = b.recv_batch(MessageCode::ReencBatch, 33).unwrap();
        t.join().unwrap();
        assert_eq!(got.len(), elems.len());
        assert!(got.iter().zip(&elems).all(|(g, e)| g == e));
    }

    #[test]
    fn chunked_batch_matches_single_frame_transfer() {
        // 20 MiB of 33-byte elements with the default 16 MiB frame limit.
        let n = 20 * 1024 * 1024 / 33 + 1;
        let elems: Vec<[u8; 33]> = (0..n as u64)
            .map(|i| {
                let mut e = [0u8; 33];
                e[..8].copy_from_slice(&i.wrapping_mul(0x9e37_79b9_7f4a_7c15).to_be_bytes());
                e
            })
            .collect();
        let (a, b) = loopback_pair();
        let (mut a, mut b) = (FramedStream::new(a), FramedStream::new(b));
        let sent = elems.clone();
        let t = thread::spawn(move || {
            a.send_batch(MessageCode::SigBatch, 33, &sent).unwrap();
            a
        });
        let chunked = b.recv_batch(MessageCode::SigBatch, 33).unwrap();
        let a = t.join().unwrap();
        assert_eq!(a.stats().frames_sent, 2);

        let (c, d) = loopback_pair();
        let (mut c, mut d) = (FramedStream::with_max_frame(c, 64 * 1024 * 1024), FramedStream::with_max_frame(d, 64 * 1024 * 1024));
        let sent = elems.clone();
        let t = thread::spawn(move || c.send_batch(MessageCode::SigBatch, 33, &sent).unwrap());
        let whole = d.recv_batch(MessageCode::SigBatch, 33).unwrap();
        t.join().unwrap();
        assert_eq!(chunked, whole);
        assert_eq!(chunked.len(), n);
    }

    #[test]
    fn misaligned_batch_is_malformed() {
        let (a, b) = loopback_pair();
        let (mut a, mut b) = (FramedStream::new(a), FramedStream::new(b));
        let mut payload = 2u64.to_be_bytes().to_vec();
        payload.extend_from_slice(&[1u8; 40]);
        a.send_frame(MessageCode::SigBatch, &payload).unwrap();
        assert!(matches!(b.recv_batch(MessageCode::SigBatch, 33), Err(Error::MalformedMessage(_))));
    }

    #[test]
    fn unknown_code_and_oversize_rejected() {
        assert!(Frame::decode(&[0x42, 0, 0, 0, 0], 16).is_err());
        assert!(Frame::decode(&[0x01, 0, 0, 0, 17], 16).is_err());
        assert!(Frame::decode(&[0x01, 0, 0, 0, 2, 9], 16).is_err());
    }

    #[test]
    fn abort_frame_surfaces_as_peer_abort() {
        let (a, b) = loopback_pair();
        let (mut a, mut b) = (FramedStream::new(a), FramedStream::new(b));
        a.send_frame(MessageCode::Abort, &abort_payload(&Error::DigestMismatch("spec digest"))).unwrap();
        match b.expect_frame(MessageCode::SigBatch) {
            Err(Error::PeerAborted { code, reason }) => {
                assert_eq!(code, crate::error::ErrorCode::DigestMismatch as u8);
                assert!(reason.contains("spec digest"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn closed_peer_is_connection_loss() {
        let (a, b) = loopback_pair();
        let mut b = FramedStream::new(b);
        drop(a);
        assert!(matches!(b.recv_frame(), Err(Error::ConnectionLost(_))));
    }

    proptest! {
        #[test]
        fn frame_round_trip(code_idx in 0usize..MessageCode::ALL.len(), payload in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let frame = Frame::new(MessageCode::ALL[code_idx], payload);
            let bytes = frame.encode();
            let (back, used) = Frame::decode(&bytes, DEFAULT_MAX_FRAME).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, frame);
        }
    }
}
