//! 160-bit identifiers and the XOR metric.
//!
//! Identifiers are interpreted as big-endian unsigned integers: byte 0 holds
//! bits 159..152, so bit 159 is the most significant. Distances use the same
//! representation, which makes lexicographic byte order equal to integer order.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha1::{Digest, Sha1};
use thiserror::Error;

/// Width of identifiers in bytes.
pub const ID_BYTES: usize = 20;
/// Width of identifiers in bits.
pub const ID_BITS: usize = ID_BYTES * 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdParseError {
    #[error("expected 40 hex characters, got {0}")]
    BadLength(usize),
    #[error("identifiers use lowercase hex digits only")]
    BadDigit,
}

/// A 160-bit node identifier. Keys and RPC nonces share the same space.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId([u8; ID_BYTES]);

/// Storage keys live in the same metric space as node identifiers.
pub type Key = NodeId;

impl NodeId {
    pub const ZERO: NodeId = NodeId([0; ID_BYTES]);

    pub const fn from_bytes(bytes: [u8; ID_BYTES]) -> Self {
        NodeId(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; ID_BYTES] {
        &self.0
    }

    /// SHA-1 of the UTF-8 bytes of `name`.
    pub fn from_name(name: &str) -> Self {
        let digest = Sha1::digest(name.as_bytes());
        let mut bytes = [0u8; ID_BYTES];
        bytes.copy_from_slice(&digest);
        NodeId(bytes)
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; ID_BYTES];
        rng.fill(&mut bytes[..]);
        NodeId(bytes)
    }

    /// Builds an identifier whose integer value is `value` (high 32 bytes zero).
    pub fn from_u128(value: u128) -> Self {
        let mut bytes = [0u8; ID_BYTES];
        bytes[4..].copy_from_slice(&value.to_be_bytes());
        NodeId(bytes)
    }

    pub fn distance(&self, other: &NodeId) -> Distance {
        let mut out = [0u8; ID_BYTES];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = self.0[i] ^ other.0[i];
        }
        Distance(out)
    }

    /// The identifier at distance `d` from `self`. Because XOR is its own
    /// inverse there is exactly one such identifier.
    pub fn offset(&self, d: &Distance) -> NodeId {
        let mut out = [0u8; ID_BYTES];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = self.0[i] ^ d.0[i];
        }
        NodeId(out)
    }

    /// A uniformly random identifier `x` with `bucket_index(self, x) == bucket`.
    pub fn random_in_bucket<R: Rng + ?Sized>(&self, bucket: usize, rng: &mut R) -> NodeId {
        assert!(bucket < ID_BITS, "bucket index out of range");
        let mut d = [0u8; ID_BYTES];
        rng.fill(&mut d[..]);
        let top_byte = ID_BYTES - 1 - bucket / 8;
        let bit = bucket % 8;
        for byte in d.iter_mut().take(top_byte) {
            *byte = 0;
        }
        d[top_byte] &= ((1u16 << bit) - 1) as u8;
        d[top_byte] |= 1 << bit;
        self.offset(&Distance(d))
    }

    pub fn to_hex(&self) -> String {
        hex_encode(&self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NodeId({})", &self.to_hex()[..8])
    }
}

impl FromStr for NodeId {
    type Err = IdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        hex_decode::<ID_BYTES>(s).map(NodeId)
    }
}

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// XOR distance between two identifiers, ordered as a 160-bit unsigned integer.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Distance([u8; ID_BYTES]);

impl Distance {
    pub const ZERO: Distance = Distance([0; ID_BYTES]);

    pub const fn from_bytes(bytes: [u8; ID_BYTES]) -> Self {
        Distance(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; ID_BYTES] {
        &self.0
    }

    pub fn from_u128(value: u128) -> Self {
        Distance(*NodeId::from_u128(value).as_bytes())
    }

    /// `2^bit` for `bit < 160`.
    pub fn pow2(bit: usize) -> Self {
        assert!(bit < ID_BITS);
        let mut out = [0u8; ID_BYTES];
        out[ID_BYTES - 1 - bit / 8] = 1 << (bit % 8);
        Distance(out)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|b| *b == 0)
    }

    pub fn leading_zeros(&self) -> u32 {
        let mut zeros = 0;
        for byte in self.0 {
            if byte == 0 {
                zeros += 8;
            } else {
                return zeros + byte.leading_zeros();
            }
        }
        zeros
    }

    /// Position of the most significant set bit, i.e. `floor(log2(self))`.
    /// `None` for a zero distance.
    pub fn highest_bit(&self) -> Option<usize> {
        if self.is_zero() {
            None
        } else {
            Some(ID_BITS - 1 - self.leading_zeros() as usize)
        }
    }

    pub fn to_hex(&self) -> String {
        hex_encode(&self.0)
    }
}

impl fmt::Debug for Distance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Distance({})", self.to_hex())
    }
}

pub fn distance(a: &NodeId, b: &NodeId) -> Distance {
    a.distance(b)
}

pub(crate) fn hex_encode(bytes: &[u8]) -> String {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push(DIGITS[(b >> 4) as usize] as char);
        s.push(DIGITS[(b & 0xf) as usize] as char);
    }
    s
}

/// Strict lowercase hex decoding into a fixed-width array.
pub(crate) fn hex_decode<const N: usize>(s: &str) -> Result<[u8; N], IdParseError> {
    let raw = s.as_bytes();
    if raw.len() != N * 2 {
        return Err(IdParseError::BadLength(raw.len()));
    }
    fn nibble(c: u8) -> Result<u8, IdParseError> {
        match c {
            b'0'..=b'9' => Ok(c - b'0'),
            b'a'..=b'f' => Ok(c - b'a' + 10),
            _ => Err(IdParseError::BadDigit),
        }
    }
    let mut out = [0u8; N];
    for (i, pair) in raw.chunks_exact(2).enumerate() {
        out[i] = (nibble(pair[0])? << 4) | nibble(pair[1])?;
    }
    Ok(out)
}
