//! WebSocket gateway frames: one JSON object per text frame, tagged by `op`.
//!
//! Parsing accepts keys in any order. Emitted frames have sorted keys and no
//! whitespace.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::{SessionId, SignalKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientFrame {
    Register {
        name: String,
    },
    Connect {
        to: String,
    },
    Signal {
        session: SessionId,
        kind: SignalKind,
        seq: u64,
        blob: String,
    },
    Leave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    PeerNotFound,
    RelayFailed,
    RegisterFailed,
    BadRequest,
}

impl ErrorCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ErrorCode::PeerNotFound => "PEER_NOT_FOUND",
            ErrorCode::RelayFailed => "RELAY_FAILED",
            ErrorCode::RegisterFailed => "REGISTER_FAILED",
            ErrorCode::BadRequest => "BAD_REQUEST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum ServerFrame {
    Registered {
        replicas: usize,
    },
    /// `from` names the peer that opened the session.
    Session {
        session: SessionId,
        from: String,
    },
    Signal {
        session: SessionId,
        kind: SignalKind,
        seq: u64,
        blob: String,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad frame: {0}")]
pub struct FrameError(pub String);

// serde_json's Value keeps object keys in a BTreeMap, so going through it
// sorts them.
fn to_canonical<T: Serialize>(frame: &T) -> String {
    let value = serde_json::to_value(frame).expect("frames always serialize");
    serde_json::to_string(&value).expect("values always serialize")
}

impl ClientFrame {
    pub fn parse(text: &str) -> Result<Self, FrameError> {
        serde_json::from_str(text).map_err(|e| FrameError(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        to_canonical(self)
    }
}

impl ServerFrame {
    pub fn parse(text: &str) -> Result<Self, FrameError> {
        serde_json::from_str(text).map_err(|e| FrameError(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        to_canonical(self)
    }

    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerFrame::Error {
            code,
            detail: detail.into(),
        }
    }
}
