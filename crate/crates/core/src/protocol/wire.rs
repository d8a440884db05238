//! Canonical JSON datagram codec.
//!
//! A datagram is one JSON object with keys `body`, `kind`, `rpc_id`,
//! `sender_addr`, `sender_id`, written with sorted keys and no whitespace.
//! Binary values travel as padded standard base64. The decoder only accepts
//! the canonical form: anything whose re-encoding differs from the input
//! bytes is rejected, so `encode(decode(x)) == x` for every accepted `x`.

use std::collections::HashSet;
use std::net::SocketAddr;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use thiserror::Error;

use super::{
    Body, Kind, RelayFailReason, RpcId, RpcMessage, SignalEnvelope, SignalRelayBody, StoreBody, ValueRecord, MAX_BLOB,
    MAX_CONTACTS, MAX_DATAGRAM, MAX_RECORDS, MAX_VALUE,
};
use crate::id::{Key, NodeId};
use crate::routing::Contact;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("malformed datagram: {0}")]
    Malformed(String),
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("{0} exceeds its size limit")]
    Oversize(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("{0} exceeds its size limit")]
    Oversize(&'static str),
    #[error("invalid message: {0}")]
    Invalid(&'static str),
}

// Wire structs declare fields alphabetically; serde_json emits them in
// declaration order, which is what makes the output canonical.

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    body: Json,
    kind: String,
    rpc_id: RpcId,
    sender_addr: SocketAddr,
    sender_id: NodeId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Empty {}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StoreWire {
    key: Key,
    ttl: u64,
    value: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyWire {
    key: Key,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetWire {
    target: NodeId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContactWire {
    addr: SocketAddr,
    id: NodeId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodesWire {
    contacts: Vec<ContactWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordWire {
    publisher: NodeId,
    ttl: u64,
    value: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ValueWire {
    key: Key,
    records: Vec<RecordWire>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelayWire {
    dest_peer_key: Key,
    envelope: SignalEnvelope,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelayFailWire {
    reason: String,
}

fn to_json<T: Serialize>(v: &T) -> Json {
    serde_json::to_value(v).expect("wire structs always serialize")
}

fn check_value(value: &[u8]) -> Result<(), EncodeError> {
    if value.is_empty() {
        return Err(EncodeError::Invalid("empty value"));
    }
    if value.len() > MAX_VALUE {
        return Err(EncodeError::Oversize("value"));
    }
    Ok(())
}

fn body_json(body: &Body) -> Result<Json, EncodeError> {
    Ok(match body {
        Body::Ping | Body::Pong | Body::RelayOk => to_json(&Empty {}),
        Body::Store(s) => {
            check_value(&s.value)?;
            if s.ttl == 0 {
                return Err(EncodeError::Invalid("zero ttl"));
            }
            to_json(&StoreWire {
                key: s.key,
                ttl: s.ttl,
                value: STANDARD.encode(&s.value),
            })
        }
        Body::StoreOk { key } => to_json(&KeyWire { key: *key }),
        Body::FindNode { target } | Body::FindValue { target } => to_json(&TargetWire { target: *target }),
        Body::Nodes { contacts } => {
            if contacts.len() > MAX_CONTACTS {
                return Err(EncodeError::Oversize("contact list"));
            }
            let mut seen = HashSet::with_capacity(contacts.len());
            if !contacts.iter().all(|c| seen.insert(c.id)) {
                return Err(EncodeError::Invalid("duplicate contact"));
            }
            to_json(&NodesWire {
                contacts: contacts
                    .iter()
                    .map(|c| ContactWire { addr: c.addr, id: c.id })
                    .collect(),
            })
        }
        Body::Value { key, records } => {
            if records.is_empty() {
                return Err(EncodeError::Invalid("VALUE without records"));
            }
            if records.len() > MAX_RECORDS {
                return Err(EncodeError::Oversize("record list"));
            }
            let mut wire = Vec::with_capacity(records.len());
            for r in records {
                check_value(&r.value)?;
                if r.ttl == 0 {
                    return Err(EncodeError::Invalid("zero ttl"));
                }
                wire.push(RecordWire {
                    publisher: r.publisher,
                    ttl: r.ttl,
                    value: STANDARD.encode(&r.value),
                });
            }
            to_json(&ValueWire {
                key: *key,
                records: wire,
            })
        }
        Body::SignalRelay(r) => {
            if r.envelope.blob.len() > MAX_BLOB {
                return Err(EncodeError::Oversize("signal blob"));
            }
            to_json(&RelayWire {
                dest_peer_key: r.dest_peer_key,
                envelope: r.envelope.clone(),
            })
        }
        Body::RelayFail { reason } => to_json(&RelayFailWire {
            reason: reason.as_str().to_string(),
        }),
    })
}

/// Serializes `msg` into its canonical datagram form.
pub fn encode(msg: &RpcMessage) -> Result<Vec<u8>, EncodeError> {
    let env = Envelope {
        body: body_json(&msg.body)?,
        kind: msg.kind().as_str().to_string(),
        rpc_id: msg.rpc_id,
        sender_addr: msg.sender.addr,
        sender_id: msg.sender.id,
    };
    let bytes = serde_json::to_vec(&env).expect("envelope always serializes");
    if bytes.len() > MAX_DATAGRAM {
        return Err(EncodeError::Oversize("datagram"));
    }
    Ok(bytes)
}

fn malformed(e: impl std::fmt::Display) -> DecodeError {
    DecodeError::Malformed(e.to_string())
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: Json) -> Result<T, DecodeError> {
    serde_json::from_value(body).map_err(malformed)
}

fn decode_value(s: &str) -> Result<Vec<u8>, DecodeError> {
    // Base64 expands by 4/3; reject early before allocating.
    if s.len() > (MAX_VALUE / 3 + 1) * 4 {
        return Err(DecodeError::Oversize("value"));
    }
    let v = STANDARD.decode(s).map_err(malformed)?;
    if v.is_empty() {
        return Err(malformed("empty value"));
    }
    if v.len() > MAX_VALUE {
        return Err(DecodeError::Oversize("value"));
    }
    Ok(v)
}

fn decode_body(kind: Kind, body: Json) -> Result<Body, DecodeError> {
    Ok(match kind {
        Kind::Ping | Kind::Pong | Kind::RelayOk => {
            let Empty {} = parse_body(body)?;
            match kind {
                Kind::Ping => Body::Ping,
                Kind::Pong => Body::Pong,
                _ => Body::RelayOk,
            }
        }
        Kind::Store => {
            let w: StoreWire = parse_body(body)?;
            if w.ttl == 0 {
                return Err(malformed("zero ttl"));
            }
            Body::Store(StoreBody {
                key: w.key,
                value: decode_value(&w.value)?,
                ttl: w.ttl,
            })
        }
        Kind::StoreOk => {
            let w: KeyWire = parse_body(body)?;
            Body::StoreOk { key: w.key }
        }
        Kind::FindNode => {
            let w: TargetWire = parse_body(body)?;
            Body::FindNode { target: w.target }
        }
        Kind::FindValue => {
            let w: TargetWire = parse_body(body)?;
            Body::FindValue { target: w.target }
        }
        Kind::Nodes => {
            let w: NodesWire = parse_body(body)?;
            if w.contacts.len() > MAX_CONTACTS {
                return Err(DecodeError::Oversize("contact list"));
            }
            let mut seen = HashSet::with_capacity(w.contacts.len());
            let mut contacts = Vec::with_capacity(w.contacts.len());
            for c in w.contacts {
                if !seen.insert(c.id) {
                    return Err(malformed("duplicate contact"));
                }
                contacts.push(Contact::new(c.id, c.addr));
            }
            Body::Nodes { contacts }
        }
        Kind::Value => {
            let w: ValueWire = parse_body(body)?;
            if w.records.is_empty() {
                return Err(malformed("VALUE without records"));
            }
            if w.records.len() > MAX_RECORDS {
                return Err(DecodeError::Oversize("record list"));
            }
            let mut records = Vec::with_capacity(w.records.len());
            for r in w.records {
                if r.ttl == 0 {
                    return Err(malformed("zero ttl"));
                }
                records.push(ValueRecord {
                    publisher: r.publisher,
                    value: decode_value(&r.value)?,
                    ttl: r.ttl,
                });
            }
            Body::Value { key: w.key, records }
        }
        Kind::SignalRelay => {
            let w: RelayWire = parse_body(body)?;
            if w.envelope.blob.len() > MAX_BLOB {
                return Err(DecodeError::Oversize("signal blob"));
            }
            Body::SignalRelay(SignalRelayBody {
                dest_peer_key: w.dest_peer_key,
                envelope: w.envelope,
            })
        }
        Kind::RelayFail => {
            let w: RelayFailWire = parse_body(body)?;
            let reason = RelayFailReason::parse(&w.reason).ok_or_else(|| malformed("unknown relay failure reason"))?;
            Body::RelayFail { reason }
        }
    })
}

/// Parses a datagram. Never panics; every failure maps to a [`DecodeError`].
pub fn decode(raw: &[u8]) -> Result<RpcMessage, DecodeError> {
    if raw.len() > MAX_DATAGRAM {
        return Err(DecodeError::Oversize("datagram"));
    }
    if raw.is_empty() {
        return Err(malformed("empty datagram"));
    }
    let env: Envelope = serde_json::from_slice(raw).map_err(malformed)?;
    let kind = Kind::parse(&env.kind).ok_or_else(|| DecodeError::UnknownKind(env.kind.clone()))?;
    let body = decode_body(kind, env.body)?;
    let msg = RpcMessage {
        rpc_id: env.rpc_id,
        sender: Contact::new(env.sender_id, env.sender_addr),
        body,
    };
    match encode(&msg) {
        Ok(canonical) if canonical == raw => Ok(msg),
        Ok(_) => Err(malformed("not in canonical form")),
        Err(EncodeError::Oversize(what)) => Err(DecodeError::Oversize(what)),
        Err(EncodeError::Invalid(what)) => Err(malformed(what)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{SessionId, SignalKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sender() -> Contact {
        Contact::new(NodeId::from_name("sender"), "10.0.0.1:4000".parse().unwrap())
    }

    fn random_contact(rng: &mut ChaCha8Rng) -> Contact {
        let ip: [u8; 4] = rng.gen();
        Contact::new(NodeId::random(rng), SocketAddr::from((ip, rng.gen::<u16>())))
    }

    fn random_bytes(rng: &mut ChaCha8Rng, max: usize) -> Vec<u8> {
        let len = rng.gen_range(1..=max);
        (0..len).map(|_| rng.gen()).collect()
    }

    fn random_text(rng: &mut ChaCha8Rng, max: usize) -> String {
        let len = rng.gen_range(0..=max);
        (0..len)
            .map(|_| match rng.gen_range(0..4) {
                0 => '"',
                1 => '\n',
                2 => 'é',
                _ => rng.gen_range('a'..='z'),
            })
            .collect()
    }

    pub(crate) fn random_message(rng: &mut ChaCha8Rng, kind: Kind) -> RpcMessage {
        let body = match kind {
            Kind::Ping => Body::Ping,
            Kind::Pong => Body::Pong,
            Kind::RelayOk => Body::RelayOk,
            Kind::Store => Body::Store(StoreBody {
                key: NodeId::random(rng),
                value: random_bytes(rng, 300),
                ttl: rng.gen_range(1..100_000),
            }),
            Kind::StoreOk => Body::StoreOk {
                key: NodeId::random(rng),
            },
            Kind::FindNode => Body::FindNode {
                target: NodeId::random(rng),
            },
            Kind::FindValue => Body::FindValue {
                target: NodeId::random(rng),
            },
            Kind::Nodes => Body::Nodes {
                contacts: (0..rng.gen_range(0..=20)).map(|_| random_contact(rng)).collect(),
            },
            Kind::Value => Body::Value {
                key: NodeId::random(rng),
                records: (0..rng.gen_range(1..4))
                    .map(|_| ValueRecord {
                        publisher: NodeId::random(rng),
                        value: random_bytes(rng, 200),
                        ttl: rng.gen_range(1..4000),
                    })
                    .collect(),
            },
            Kind::SignalRelay => Body::SignalRelay(SignalRelayBody {
                dest_peer_key: NodeId::random(rng),
                envelope: SignalEnvelope {
                    blob: random_text(rng, 500),
                    from_peer: random_text(rng, 10),
                    kind: [
                        SignalKind::Offer,
                        SignalKind::Answer,
                        SignalKind::Candidate,
                        SignalKind::Bye,
                    ][rng.gen_range(0..4)],
                    seq: rng.gen(),
                    session_id: SessionId::random(rng),
                    to_peer: random_text(rng, 10),
                },
            }),
            Kind::RelayFail => Body::RelayFail {
                reason: if rng.gen() {
                    RelayFailReason::NoSuchPeer
                } else {
                    RelayFailReason::Rejected
                },
            },
        };
        RpcMessage::new(RpcId::random(rng), random_contact(rng), body)
    }

    #[test]
    fn round_trip_every_kind() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..1000 {
            let kind = Kind::ALL[i % Kind::ALL.len()];
            let msg = random_message(&mut rng, kind);
            let bytes = encode(&msg).unwrap();
            let back = decode(&bytes).unwrap();
            assert_eq!(back, msg);
            assert_eq!(encode(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn ping_layout_is_canonical() {
        let msg = RpcMessage::new(RpcId::from_u128(1), sender(), Body::Ping);
        let bytes = encode(&msg).unwrap();
        let text = std::str::from_utf8(&bytes).unwrap();
        assert_eq!(
            text,
            format!(
                "{{\"body\":{{}},\"kind\":\"PING\",\"rpc_id\":\"{}1\",\"sender_addr\":\"10.0.0.1:4000\",\"sender_id\":\"{}\"}}",
                "0".repeat(39),
                NodeId::from_name("sender")
            )
        );
        let back = decode(&bytes).unwrap();
        assert_eq!(back.kind(), Kind::Ping);
        assert_eq!(back.rpc_id, RpcId::from_u128(1));
    }

    #[test]
    fn value_size_boundary() {
        let mut store = StoreBody {
            key: NodeId::from_name("k"),
            value: vec![7; MAX_VALUE],
            ttl: 60,
        };
        let ok = RpcMessage::new(RpcId::from_u128(2), sender(), Body::Store(store.clone()));
        assert!(encode(&ok).is_ok());
        store.value.push(0);
        let big = RpcMessage::new(RpcId::from_u128(2), sender(), Body::Store(store));
        assert_eq!(encode(&big), Err(EncodeError::Oversize("value")));
    }

    #[test]
    fn empty_input_is_malformed() {
        assert!(matches!(decode(b""), Err(DecodeError::Malformed(_))));
    }

    #[test]
    fn nodes_with_twenty_contacts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let contacts: Vec<_> = (0..20).map(|_| random_contact(&mut rng)).collect();
        let msg = RpcMessage::new(RpcId::from_u128(3), sender(), Body::Nodes { contacts });
        match decode(&encode(&msg).unwrap()).unwrap().body {
            Body::Nodes { contacts } => assert_eq!(contacts.len(), 20),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_kind_rejected() {
        let msg = RpcMessage::new(RpcId::from_u128(4), sender(), Body::Ping);
        let text = String::from_utf8(encode(&msg).unwrap()).unwrap();
        let bad = text.replace("\"PING\"", "\"GOSSIP\"");
        assert_eq!(decode(bad.as_bytes()), Err(DecodeError::UnknownKind("GOSSIP".into())));
    }

    #[test]
    fn non_canonical_forms_rejected() {
        let msg = RpcMessage::new(RpcId::from_u128(4), sender(), Body::Ping);
        let text = String::from_utf8(encode(&msg).unwrap()).unwrap();
        // Trailing garbage.
        assert!(decode(format!("{text}x").as_bytes()).is_err());
        // Trailing whitespace.
        assert!(decode(format!("{text} ").as_bytes()).is_err());
        // Reordered keys.
        let reordered = text.replacen("{\"body\":{},", "{", 1).replacen('}', ",\"body\":{}}", 1);
        assert!(decode(reordered.as_bytes()).is_err());
        // Short identifier.
        let short = text.replacen(&"0".repeat(39), &"0".repeat(38), 1);
        assert!(matches!(decode(short.as_bytes()), Err(DecodeError::Malformed(_))));
        // Extra field in the body.
        let extra = text.replacen("\"body\":{}", "\"body\":{\"x\":1}", 1);
        assert!(matches!(decode(extra.as_bytes()), Err(DecodeError::Malformed(_))));
    }

    #[test]
    fn oversize_datagram_rejected_before_parsing() {
        let raw = vec![b' '; MAX_DATAGRAM + 1];
        assert_eq!(decode(&raw), Err(DecodeError::Oversize("datagram")));
    }

    #[test]
    fn duplicate_contacts_rejected() {
        let c = sender();
        let msg = RpcMessage::new(RpcId::from_u128(5), c, Body::Nodes { contacts: vec![c] });
        let text = String::from_utf8(encode(&msg).unwrap()).unwrap();
        let one = format!("{{\"addr\":\"{}\",\"id\":\"{}\"}}", c.addr, c.id);
        let dup = text.replace(&one, &format!("{one},{one}"));
        assert!(matches!(decode(dup.as_bytes()), Err(DecodeError::Malformed(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn decode_never_panics(raw in proptest::collection::vec(any::<u8>(), 0..2048)) {
            let _ = decode(&raw);
        }

        #[test]
        fn mutated_valid_messages_never_panic(seed in any::<u64>(), flips in proptest::collection::vec((any::<usize>(), any::<u8>()), 1..8)) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kind = Kind::ALL[(seed % 11) as usize];
            let mut bytes = encode(&random_message(&mut rng, kind)).unwrap();
            for (pos, b) in flips {
                let i = pos % bytes.len();
                bytes[i] = b;
            }
            if let Ok(m) = decode(&bytes) {
                prop_assert_eq!(encode(&m).unwrap(), bytes);
            }
        }
    }
}
