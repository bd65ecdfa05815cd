use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Numeric codes carried in ABORT frames and used as CLI exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    Internal = 1,
    Config = 2,
    Input = 3,
    EmptyRecord = 4,
    MalformedElement = 5,
    MalformedMessage = 6,
    UnexpectedMessage = 7,
    VersionMismatch = 8,
    DigestMismatch = 9,
    Authentication = 10,
    Timeout = 11,
    ConnectionLost = 12,
    PeerAborted = 13,
    Infeasible = 14,
    Entropy = 15,
}

impl ErrorCode {
    pub fn from_u8(code: u8) -> Option<Self> {
        use ErrorCode::*;
        Some(match code {
            1 => Internal,
            2 => Config,
            3 => Input,
            4 => EmptyRecord,
            5 => MalformedElement,
            6 => MalformedMessage,
            7 => UnexpectedMessage,
            8 => VersionMismatch,
            9 => DigestMismatch,
            10 => Authentication,
            11 => Timeout,
            12 => ConnectionLost,
            13 => PeerAborted,
            14 => Infeasible,
            15 => Entropy,
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("record {0:?} produces no shingles")]
    EmptyRecord(String),
    #[error("malformed group element")]
    MalformedElement,
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("unexpected message: expected {expected}, got 0x{got:02x}")]
    UnexpectedMessage { expected: &'static str, got: u8 },
    #[error("protocol version mismatch: local {local}, peer {peer}")]
    VersionMismatch { local: u16, peer: u16 },
    #[error("handshake mismatch: {0}")]
    DigestMismatch(&'static str),
    #[error("authentication failed: {0}")]
    Authentication(String),
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("connection lost: {0}")]
    ConnectionLost(String),
    #[error("peer aborted the session (code {code}): {reason}")]
    PeerAborted { code: u8, reason: String },
    #[error("no feasible parameters: {0}")]
    Infeasible(String),
    #[error("entropy source failure: {0}")]
    Entropy(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Tls(#[from] rustls::Error),
}

impl Error {
    pub fn code(&self) -> ErrorCode {
        match self {
            Error::Config(_) => ErrorCode::Config,
            Error::Input(_) | Error::Csv(_) | Error::LengthMismatch(..) => ErrorCode::Input,
            Error::EmptyRecord(_) => ErrorCode::EmptyRecord,
            Error::MalformedElement => ErrorCode::MalformedElement,
            Error::MalformedMessage(_) => ErrorCode::MalformedMessage,
            Error::UnexpectedMessage { .. } => ErrorCode::UnexpectedMessage,
            Error::VersionMismatch { .. } => ErrorCode::VersionMismatch,
            Error::DigestMismatch(_) => ErrorCode::DigestMismatch,
            Error::Authentication(_) | Error::Tls(_) => ErrorCode::Authentication,
            Error::Timeout => ErrorCode::Timeout,
            Error::ConnectionLost(_) => ErrorCode::ConnectionLost,
            Error::PeerAborted { .. } => ErrorCode::PeerAborted,
            Error::Infeasible(_) => ErrorCode::Infeasible,
            Error::Entropy(_) => ErrorCode::Entropy,
            Error::Io(e) => match e.kind() {
                io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => ErrorCode::Timeout,
                _ => ErrorCode::ConnectionLost,
            },
        }
    }

    /// Map a stream error onto the transport error classes.
    pub(crate) fn from_stream(e: io::Error) -> Self {
        match e.kind() {
            io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock => Error::Timeout,
            io::ErrorKind::InvalidData => match e.get_ref().and_then(|inner| inner.downcast_ref::<rustls::Error>()) {
                Some(tls) => Error::Authentication(tls.to_string()),
                None => Error::MalformedMessage(e.to_string()),
            },
            _ => Error::ConnectionLost(e.to_string()),
        }
    }
}
