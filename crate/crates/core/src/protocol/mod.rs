//! RPC messages exchanged between DHT nodes.
//!
//! Four Kademlia requests (PING, STORE, FIND_NODE, FIND_VALUE) and their
//! responses, plus SIGNAL_RELAY which carries an opaque signaling envelope to
//! the gateway serving its destination peer. One message per datagram.

mod pending;
mod wire;

use std::fmt;
use std::net::SocketAddr;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use pending::{Match, PendingEntry, PendingTable};
pub use wire::{decode, encode, DecodeError, EncodeError};

use crate::id::{hex_decode, hex_encode, IdParseError, Key, NodeId};
use crate::routing::Contact;

/// Largest datagram accepted or produced.
pub const MAX_DATAGRAM: usize = 64 * 1024;
/// Largest STORE value in bytes.
pub const MAX_VALUE: usize = 8 * 1024;
/// Largest signaling blob in bytes.
pub const MAX_BLOB: usize = 64 * 1024;
/// Decoder ceiling on contacts in one NODES response.
pub const MAX_CONTACTS: usize = 256;
/// Decoder ceiling on records in one VALUE response.
pub const MAX_RECORDS: usize = 64;

/// 160-bit request nonce echoed by the matching response.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RpcId(NodeId);

impl RpcId {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        RpcId(NodeId::random(rng))
    }

    pub fn from_u128(v: u128) -> Self {
        RpcId(NodeId::from_u128(v))
    }
}

impl fmt::Display for RpcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for RpcId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RpcId({})", &self.0.to_hex()[..8])
    }
}

/// 128-bit signaling session identifier.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SessionId([u8; 16]);

impl SessionId {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut b = [0u8; 16];
        rng.fill(&mut b[..]);
        SessionId(b)
    }

    pub const fn from_bytes(b: [u8; 16]) -> Self {
        SessionId(b)
    }

    pub fn to_hex(&self) -> String {
        hex_encode(&self.0)
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionId({})", self.to_hex())
    }
}

impl FromStr for SessionId {
    type Err = IdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        hex_decode::<16>(s).map(SessionId)
    }
}

impl Serialize for SessionId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for SessionId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Kind {
    Ping,
    Pong,
    Store,
    StoreOk,
    FindNode,
    FindValue,
    Nodes,
    Value,
    SignalRelay,
    RelayOk,
    RelayFail,
}

impl Kind {
    pub const ALL: [Kind; 11] = [
        Kind::Ping,
        Kind::Pong,
        Kind::Store,
        Kind::StoreOk,
        Kind::FindNode,
        Kind::FindValue,
        Kind::Nodes,
        Kind::Value,
        Kind::SignalRelay,
        Kind::RelayOk,
        Kind::RelayFail,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Kind::Ping => "PING",
            Kind::Pong => "PONG",
            Kind::Store => "STORE",
            Kind::StoreOk => "STORE_OK",
            Kind::FindNode => "FIND_NODE",
            Kind::FindValue => "FIND_VALUE",
            Kind::Nodes => "NODES",
            Kind::Value => "VALUE",
            Kind::SignalRelay => "SIGNAL_RELAY",
            Kind::RelayOk => "RELAY_OK",
            Kind::RelayFail => "RELAY_FAIL",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn is_response(&self) -> bool {
        matches!(
            self,
            Kind::Pong | Kind::StoreOk | Kind::Nodes | Kind::Value | Kind::RelayOk | Kind::RelayFail
        )
    }

    /// Whether `self` is an acceptable reply to a `request` message.
    pub fn answers(&self, request: Kind) -> bool {
        matches!(
            (request, self),
            (Kind::Ping, Kind::Pong)
                | (Kind::Store, Kind::StoreOk)
                | (Kind::FindNode, Kind::Nodes)
                | (Kind::FindValue, Kind::Nodes)
                | (Kind::FindValue, Kind::Value)
                | (Kind::SignalRelay, Kind::RelayOk)
                | (Kind::SignalRelay, Kind::RelayFail)
        )
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreBody {
    pub key: Key,
    pub value: Vec<u8>,
    /// Seconds; always positive.
    pub ttl: u64,
}

/// One stored version of a key, as returned by FIND_VALUE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueRecord {
    pub publisher: NodeId,
    pub value: Vec<u8>,
    /// Whole seconds of lifetime left at the responder.
    pub ttl: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SignalKind {
    Offer,
    Answer,
    Candidate,
    Bye,
}

impl SignalKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SignalKind::Offer => "offer",
            SignalKind::Answer => "answer",
            SignalKind::Candidate => "candidate",
            SignalKind::Bye => "bye",
        }
    }

    pub fn parse(s: &str) -> Option<SignalKind> {
        [
            SignalKind::Offer,
            SignalKind::Answer,
            SignalKind::Candidate,
            SignalKind::Bye,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

impl Serialize for SignalKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for SignalKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        SignalKind::parse(&s).ok_or_else(|| serde::de::Error::custom("unknown signal kind"))
    }
}

/// An opaque offer/answer/candidate blob addressed from one peer to another.
/// Field order is alphabetical so the derived serializer is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalEnvelope {
    pub blob: String,
    pub from_peer: String,
    pub kind: SignalKind,
    pub seq: u64,
    pub session_id: SessionId,
    pub to_peer: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalRelayBody {
    pub dest_peer_key: Key,
    pub envelope: SignalEnvelope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelayFailReason {
    /// The destination peer has no live socket at this gateway.
    NoSuchPeer,
    /// The envelope was not addressed consistently.
    Rejected,
}

impl RelayFailReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RelayFailReason::NoSuchPeer => "NO_SUCH_PEER",
            RelayFailReason::Rejected => "REJECTED",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "NO_SUCH_PEER" => Some(RelayFailReason::NoSuchPeer),
            "REJECTED" => Some(RelayFailReason::Rejected),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    Ping,
    Pong,
    Store(StoreBody),
    StoreOk { key: Key },
    FindNode { target: NodeId },
    FindValue { target: Key },
    Nodes { contacts: Vec<Contact> },
    Value { key: Key, records: Vec<ValueRecord> },
    SignalRelay(SignalRelayBody),
    RelayOk,
    RelayFail { reason: RelayFailReason },
}

impl Body {
    pub fn kind(&self) -> Kind {
        match self {
            Body::Ping => Kind::Ping,
            Body::Pong => Kind::Pong,
            Body::Store(_) => Kind::Store,
            Body::StoreOk { .. } => Kind::StoreOk,
            Body::FindNode { .. } => Kind::FindNode,
            Body::FindValue { .. } => Kind::FindValue,
            Body::Nodes { .. } => Kind::Nodes,
            Body::Value { .. } => Kind::Value,
            Body::SignalRelay(_) => Kind::SignalRelay,
            Body::RelayOk => Kind::RelayOk,
            Body::RelayFail { .. } => Kind::RelayFail,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RpcMessage {
    pub rpc_id: RpcId,
    pub sender: Contact,
    pub body: Body,
}

impl RpcMessage {
    pub fn new(rpc_id: RpcId, sender: Contact, body: Body) -> Self {
        RpcMessage { rpc_id, sender, body }
    }

    pub fn kind(&self) -> Kind {
        self.body.kind()
    }

    pub fn sender_addr(&self) -> SocketAddr {
        self.sender.addr
    }
}
