//! WebRTC signaling over the DHT.
//!
//! A browser attaches to any node over a WebSocket and registers a name. The
//! node (its gateway) publishes a presence record under SHA-1 of the name.
//! To reach a peer, a gateway resolves that record and relays envelopes
//! straight to the peer's gateway with SIGNAL_RELAY.

mod frames;
mod gateway;
mod reorder;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::id::{Key, NodeId};
use crate::protocol::ValueRecord;
use crate::routing::Contact;

pub use frames::{ClientFrame, ErrorCode, FrameError, ServerFrame};
pub use gateway::{ClientId, Gateway, GatewayConfig, GatewayStats};
pub use reorder::{Gap, Reorder};

/// Longest accepted peer name, in bytes.
pub const MAX_NAME: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerIdentity {
    pub name: String,
    pub key: Key,
}

impl PeerIdentity {
    pub fn new(name: &str) -> Self {
        PeerIdentity {
            name: name.to_owned(),
            key: NodeId::from_name(name),
        }
    }
}

/// Maps a peer to the gateway currently holding its WebSocket. Stored as the
/// DHT value under the peer's key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresenceRecord {
    pub gateway: Contact,
    pub peer_key: Key,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PresenceError {
    #[error("malformed presence record: {0}")]
    Malformed(String),
    #[error("presence record is not in canonical form")]
    NotCanonical,
}

impl PresenceRecord {
    pub fn encode(&self) -> Vec<u8> {
        let value = serde_json::to_value(self).expect("presence always serializes");
        serde_json::to_vec(&value).expect("values always serialize")
    }

    pub fn decode(raw: &[u8]) -> Result<Self, PresenceError> {
        let rec: PresenceRecord = serde_json::from_slice(raw).map_err(|e| PresenceError::Malformed(e.to_string()))?;
        if rec.encode() != raw {
            return Err(PresenceError::NotCanonical);
        }
        Ok(rec)
    }
}

/// A presence record chosen from a FIND_VALUE answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Resolved {
    pub record: PresenceRecord,
    /// Absolute expiry on the resolver's clock.
    pub expires_at: u64,
}

/// Picks the winning presence for `key` among stored versions: highest
/// `seq`, ties going to the larger gateway id. Undecodable or mismatched
/// versions are ignored.
pub fn pick_presence(key: &Key, records: &[ValueRecord], now: u64) -> Option<Resolved> {
    records
        .iter()
        .filter(|r| r.ttl > 0)
        .filter_map(|r| {
            let record = PresenceRecord::decode(&r.value).ok()?;
            (record.peer_key == *key).then_some(Resolved {
                record,
                expires_at: now + r.ttl * 1000,
            })
        })
        .max_by_key(|r| (r.record.seq, r.record.gateway.id))
}
