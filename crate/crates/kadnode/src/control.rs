//! Local control socket: one JSON request per line, one JSON reply per line.
//!
//! ```text
//! {"cmd":"put","key":"greeting","value":"hello","ttl":3600}
//! {"cmd":"get","key":"greeting"}
//! {"cmd":"ping","addr":"127.0.0.1:4000"}
//! {"cmd":"status"}
//! ```
//!
//! Replies carry `"ok":true` plus results, or `"ok":false` and an `error`.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use kadrtc::id::NodeId;
use kadrtc::runtime::NodeHandle;

/// Longest accepted request line.
pub const MAX_LINE: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase", deny_unknown_fields)]
pub enum Request {
    Put {
        key: String,
        value: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ttl: Option<u64>,
    },
    Get {
        key: String,
    },
    Ping {
        addr: SocketAddr,
    },
    Status,
}

impl Request {
    pub fn parse(line: &str) -> Result<Request, String> {
        serde_json::from_str(line).map_err(|e| e.to_string())
    }
}

fn fail(error: impl ToString) -> Value {
    json!({"ok": false, "error": error.to_string()})
}

/// Runs one request against the node.
pub fn execute(node: &NodeHandle, req: Request) -> Value {
    match req {
        Request::Put { key, value, ttl } => {
            let ttl = ttl.unwrap_or(3600);
            match node.store(NodeId::from_name(&key), value.into_bytes(), ttl) {
                Ok(Ok(replicas)) => json!({"ok": true, "key": NodeId::from_name(&key).to_hex(), "replicas": replicas}),
                Ok(Err(e)) => fail(e),
                Err(e) => fail(e),
            }
        }
        Request::Get { key } => match node.find_value(NodeId::from_name(&key)) {
            Ok(Ok(found)) => {
                let values: Vec<Value> = found
                    .records
                    .iter()
                    .map(|r| {
                        json!({
                            "publisher": r.publisher.to_hex(),
                            "ttl": r.ttl,
                            "value": String::from_utf8_lossy(&r.value),
                        })
                    })
                    .collect();
                json!({"ok": true, "from": found.from.addr.to_string(), "rounds": found.rounds, "values": values})
            }
            Ok(Err(e)) => fail(e),
            Err(e) => fail(e),
        },
        Request::Ping { addr } => match node.ping(addr) {
            Ok(Ok(c)) => json!({"ok": true, "id": c.id.to_hex(), "addr": c.addr.to_string()}),
            Ok(Err(e)) => fail(format!("{e:?}").to_lowercase()),
            Err(e) => fail(e),
        },
        Request::Status => match node.status() {
            Ok(s) => json!({
                "ok": true,
                "id": s.contact.id.to_hex(),
                "addr": s.contact.addr.to_string(),
                "contacts": s.contacts,
                "occupied_buckets": s.occupied_buckets,
                "stored_records": s.stored_records,
                "clients": s.clients,
            }),
            Err(e) => fail(e),
        },
    }
}

/// Accepts control connections until the listener fails.
pub fn serve(listener: TcpListener, node: NodeHandle) {
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let node = node.clone();
        thread::spawn(move || {
            if let Err(e) = session(stream, &node) {
                tracing::debug!(error = %e, "control connection ended");
            }
        });
    }
}

fn session(stream: TcpStream, node: &NodeHandle) -> io::Result<()> {
    let mut out = stream.try_clone()?;
    let mut reader = BufReader::new(stream).take(MAX_LINE as u64);
    let mut line = String::new();
    loop {
        line.clear();
        reader.set_limit(MAX_LINE as u64);
        if reader.read_line(&mut line)? == 0 {
            return Ok(());
        }
        let reply = if !line.ends_with('\n') && line.len() >= MAX_LINE {
            let r = fail("request line too long");
            writeln!(out, "{r}")?;
            return Ok(());
        } else {
            match Request::parse(line.trim_end()) {
                Ok(req) => execute(node, req),
                Err(e) => fail(format!("bad request: {e}")),
            }
        };
        writeln!(out, "{reply}")?;
    }
}

/// Sends one request to a control socket and returns the reply.
pub fn call(addr: SocketAddr, req: &Request) -> anyhow::Result<Value> {
    let mut stream = TcpStream::connect(addr)?;
    writeln!(stream, "{}", serde_json::to_string(req)?)?;
    let mut line = String::new();
    BufReader::new(stream).read_line(&mut line)?;
    Ok(serde_json::from_str(&line)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_forms() {
        assert_eq!(
            Request::parse(r#"{"cmd":"put","key":"a","value":"b"}"#),
            Ok(Request::Put {
                key: "a".into(),
                value: "b".into(),
                ttl: None
            })
        );
        assert_eq!(
            Request::parse(r#"{"key":"a","cmd":"get"}"#),
            Ok(Request::Get { key: "a".into() })
        );
        assert_eq!(Request::parse(r#"{"cmd":"status"}"#), Ok(Request::Status));
        for bad in [
            "",
            "{}",
            r#"{"cmd":"get"}"#,
            r#"{"cmd":"ping","addr":"nowhere"}"#,
            r#"{"cmd":"get","key":"a","x":1}"#,
        ] {
            assert!(Request::parse(bad).is_err(), "{bad}");
        }
        let r = Request::Put {
            key: "k".into(),
            value: "v".into(),
            ttl: Some(5),
        };
        assert_eq!(Request::parse(&serde_json::to_string(&r).unwrap()), Ok(r));
    }

    #[test]
    fn serves_requests_over_tcp() {
        let start = |name: &str| {
            kadrtc::runtime::NodeRuntime::start(
                "127.0.0.1:0".parse().unwrap(),
                NodeId::from_name(name),
                kadrtc::node::NodeConfig::real(),
                kadrtc::signaling::GatewayConfig::default(),
            )
            .unwrap()
        };
        let rt = start("control-a");
        let peer = start("control-b");
        peer.handle().join(rt.handle().addr()).unwrap().unwrap();
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let node = rt.handle();
        thread::spawn(move || serve(listener, node));

        let put = call(
            addr,
            &Request::Put {
                key: "greeting".into(),
                value: "hello".into(),
                ttl: None,
            },
        )
        .unwrap();
        assert_eq!(put["ok"], true);
        assert_eq!(put["replicas"], 2);
        let got = call(addr, &Request::Get { key: "greeting".into() }).unwrap();
        assert_eq!(got["values"][0]["value"], "hello");
        let status = call(addr, &Request::Status).unwrap();
        assert_eq!(status["contacts"], 1);
        let ping = call(
            addr,
            &Request::Ping {
                addr: peer.handle().addr(),
            },
        )
        .unwrap();
        assert_eq!(ping["id"], NodeId::from_name("control-b").to_hex());

        let mut raw = TcpStream::connect(addr).unwrap();
        raw.write_all(b"not json\n").unwrap();
        raw.shutdown(std::net::Shutdown::Write).unwrap();
        let mut reply = String::new();
        raw.read_to_string(&mut reply).unwrap();
        assert!(reply.contains("\"ok\":false"), "{reply}");
    }
}
