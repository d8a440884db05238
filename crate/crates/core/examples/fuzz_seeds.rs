//! Writes starting corpora for the fuzz targets.
//!
//! ```text
//! cargo run -p kadrtc --example fuzz_seeds -- fuzz/corpus
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kadrtc::id::NodeId;
use kadrtc::protocol::{
    self, Body, RelayFailReason, RpcId, RpcMessage, SessionId, SignalEnvelope, SignalKind, SignalRelayBody, StoreBody,
    ValueRecord,
};
use kadrtc::routing::Contact;
use kadrtc::signaling::{ClientFrame, ErrorCode, PresenceRecord, ServerFrame};

fn write(dir: &Path, name: &str, bytes: &[u8]) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join(name), bytes).unwrap();
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fuzz/corpus".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let me = Contact::new(NodeId::from_name("seed"), "10.0.0.1:7000".parse().unwrap());
    let v6 = Contact::new(NodeId::from_name("v6"), "[2001:db8::1]:7001".parse().unwrap());
    let key = NodeId::from_name("alice");
    let session = SessionId::random(&mut rng);
    let envelope = SignalEnvelope {
        blob: "v=0\r\no=- 1 1 IN IP4 0.0.0.0".into(),
        from_peer: "alice".into(),
        kind: SignalKind::Offer,
        seq: 0,
        session_id: session,
        to_peer: "bob".into(),
    };
    let bodies = [
        ("ping", Body::Ping),
        ("pong", Body::Pong),
        (
            "store",
            Body::Store(StoreBody {
                key,
                value: b"value".to_vec(),
                ttl: 60,
            }),
        ),
        ("store_ok", Body::StoreOk { key }),
        ("find_node", Body::FindNode { target: key }),
        ("find_value", Body::FindValue { target: key }),
        ("nodes", Body::Nodes { contacts: vec![me, v6] }),
        ("nodes_empty", Body::Nodes { contacts: vec![] }),
        (
            "value",
            Body::Value {
                key,
                records: vec![ValueRecord {
                    publisher: me.id,
                    value: b"v".to_vec(),
                    ttl: 9,
                }],
            },
        ),
        (
            "signal_relay",
            Body::SignalRelay(SignalRelayBody {
                dest_peer_key: NodeId::from_name("bob"),
                envelope,
            }),
        ),
        ("relay_ok", Body::RelayOk),
        (
            "relay_fail",
            Body::RelayFail {
                reason: RelayFailReason::NoSuchPeer,
            },
        ),
    ];
    for (name, body) in bodies {
        let raw = protocol::encode(&RpcMessage::new(RpcId::random(&mut rng), me, body)).unwrap();
        write(&root.join("decode_rpc"), name, &raw);
    }

    let client = [
        ("register", ClientFrame::Register { name: "alice".into() }),
        ("connect", ClientFrame::Connect { to: "bob".into() }),
        (
            "signal",
            ClientFrame::Signal {
                session,
                kind: SignalKind::Candidate,
                seq: 3,
                blob: "candidate:1 1 UDP".into(),
            },
        ),
        ("leave", ClientFrame::Leave),
    ];
    for (name, f) in client {
        write(&root.join("parse_client_frame"), name, f.to_json().as_bytes());
    }
    let server = [
        ("registered", ServerFrame::Registered { replicas: 20 }),
        (
            "session",
            ServerFrame::Session {
                session,
                from: "alice".into(),
            },
        ),
        (
            "signal",
            ServerFrame::Signal {
                session,
                kind: SignalKind::Answer,
                seq: 0,
                blob: "v=0".into(),
            },
        ),
        ("error", ServerFrame::error(ErrorCode::PeerNotFound, "bob")),
    ];
    for (name, f) in server {
        write(&root.join("parse_server_frame"), name, f.to_json().as_bytes());
    }
    for (name, gw) in [("v4", me), ("v6", v6)] {
        let rec = PresenceRecord {
            gateway: gw,
            peer_key: key,
            seq: 7,
        };
        write(&root.join("decode_presence"), name, &rec.encode());
    }

    let control = [
        ("put", r#"{"cmd":"put","key":"greeting","value":"hello","ttl":3600}"#),
        ("get", r#"{"cmd":"get","key":"greeting"}"#),
        ("ping", r#"{"cmd":"ping","addr":"127.0.0.1:4000"}"#),
        ("status", r#"{"cmd":"status"}"#),
    ];
    for (name, text) in control {
        write(&root.join("control_request"), name, text.as_bytes());
    }
    let config = format!(
        "listen = \"0.0.0.0:4000\"\nbootstrap = \"10.0.0.2:4000\"\nid = \"{}\"\nk = 20\nalpha = 3\nws_listen = \"0.0.0.0:8080\"\ncontrol = \"127.0.0.1:7401\"\n",
        me.id.to_hex()
    );
    write(&root.join("node_config"), "full", config.as_bytes());
    write(&root.join("node_config"), "minimal", b"listen = \"127.0.0.1:4000\"\n");
}
