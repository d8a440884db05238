//! Browser-side view of the gateway: real WebSocket clients against two
//! nodes talking over loopback UDP.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use kadnode::ws;
use kadrtc::id::NodeId;
use kadrtc::node::NodeConfig;
use kadrtc::protocol::{SessionId, SignalKind};
use kadrtc::runtime::NodeRuntime;
use kadrtc::signaling::{ClientFrame, ErrorCode, GatewayConfig, ServerFrame};

struct Gateway {
    rt: NodeRuntime,
    ws: SocketAddr,
}

fn gateway(name: &str) -> Gateway {
    let rt = NodeRuntime::start(
        "127.0.0.1:0".parse().unwrap(),
        NodeId::from_name(name),
        NodeConfig::real(),
        GatewayConfig::default(),
    )
    .unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let ws = listener.local_addr().unwrap();
    let node = rt.handle();
    thread::spawn(move || ws::serve(listener, node));
    Gateway { rt, ws }
}

#[allow(clippy::result_large_err)]
fn open(addr: SocketAddr, path: &str) -> Result<WebSocket<TcpStream>, tungstenite::Error> {
    let stream = TcpStream::connect(addr).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    tungstenite::client(format!("ws://{addr}{path}"), stream)
        .map(|(ws, _)| ws)
        .map_err(|e| match e {
            tungstenite::HandshakeError::Failure(e) => e,
            tungstenite::HandshakeError::Interrupted(_) => panic!("blocking handshake interrupted"),
        })
}

fn send(ws: &mut WebSocket<TcpStream>, frame: ClientFrame) {
    ws.send(Message::text(frame.to_json())).unwrap();
}

fn recv(ws: &mut WebSocket<TcpStream>) -> ServerFrame {
    loop {
        match ws.read().unwrap() {
            Message::Text(t) => return ServerFrame::parse(&t).unwrap(),
            Message::Ping(_) | Message::Pong(_) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn offer_and_answer_cross_two_gateways() {
    let a = gateway("ws-a");
    let b = gateway("ws-b");
    b.rt.handle().join(a.rt.handle().addr()).unwrap().unwrap();

    let mut alice = open(a.ws, ws::PATH).unwrap();
    let mut bob = open(b.ws, ws::PATH).unwrap();
    send(&mut alice, ClientFrame::Register { name: "alice".into() });
    assert_eq!(recv(&mut alice), ServerFrame::Registered { replicas: 2 });
    send(&mut bob, ClientFrame::Register { name: "bob".into() });
    assert_eq!(recv(&mut bob), ServerFrame::Registered { replicas: 2 });

    send(&mut alice, ClientFrame::Connect { to: "nobody".into() });
    assert!(matches!(
        recv(&mut alice),
        ServerFrame::Error {
            code: ErrorCode::PeerNotFound,
            ..
        }
    ));
    send(&mut alice, ClientFrame::Connect { to: "bob".into() });
    let ServerFrame::Session { session, from } = recv(&mut alice) else {
        panic!("no session")
    };
    assert_eq!(from, "alice");

    let signal = |kind, seq, blob: &str| ClientFrame::Signal {
        session,
        kind,
        seq,
        blob: blob.into(),
    };
    // Bob learns of the session with the first envelope.
    send(&mut alice, signal(SignalKind::Offer, 0, "v=0 offer"));
    assert_eq!(
        recv(&mut bob),
        ServerFrame::Session {
            session,
            from: "alice".into()
        }
    );
    assert_eq!(
        recv(&mut bob),
        ServerFrame::Signal {
            session,
            kind: SignalKind::Offer,
            seq: 0,
            blob: "v=0 offer".into()
        }
    );
    send(&mut bob, signal(SignalKind::Answer, 0, "v=0 answer"));
    assert_eq!(
        recv(&mut alice),
        ServerFrame::Signal {
            session,
            kind: SignalKind::Answer,
            seq: 0,
            blob: "v=0 answer".into()
        }
    );
    assert_eq!(a.rt.handle().status().unwrap().clients, 1);
}

#[test]
fn bad_frames_before_registration() {
    let a = gateway("ws-lonely");
    let mut c = open(a.ws, ws::PATH).unwrap();

    c.send(Message::binary(vec![1, 2, 3])).unwrap();
    assert!(matches!(
        recv(&mut c),
        ServerFrame::Error {
            code: ErrorCode::BadRequest,
            ..
        }
    ));
    c.send(Message::text("{\"op\":\"dance\"}")).unwrap();
    assert!(matches!(
        recv(&mut c),
        ServerFrame::Error {
            code: ErrorCode::BadRequest,
            ..
        }
    ));
    send(
        &mut c,
        ClientFrame::Signal {
            session: SessionId::from_bytes([7; 16]),
            kind: SignalKind::Bye,
            seq: 0,
            blob: String::new(),
        },
    );
    assert!(matches!(recv(&mut c), ServerFrame::Error { .. }));
    send(&mut c, ClientFrame::Connect { to: "nobody".into() });
    assert!(matches!(
        recv(&mut c),
        ServerFrame::Error {
            code: ErrorCode::BadRequest,
            ..
        }
    ));
}

#[test]
fn other_paths_are_refused() {
    let a = gateway("ws-paths");
    match open(a.ws, "/elsewhere") {
        Err(tungstenite::Error::Http(resp)) => assert_eq!(resp.status(), 404),
        other => panic!("expected 404, got {other:?}"),
    }
}

#[test]
fn closing_the_socket_detaches_the_client() {
    let a = gateway("ws-close");
    let mut c = open(a.ws, ws::PATH).unwrap();
    // A node with no peers cannot publish presence.
    send(&mut c, ClientFrame::Register { name: "dave".into() });
    assert!(matches!(
        recv(&mut c),
        ServerFrame::Error {
            code: ErrorCode::RegisterFailed,
            ..
        }
    ));
    assert_eq!(a.rt.handle().status().unwrap().clients, 1);
    c.close(None).unwrap();
    let _ = c.read();
    for _ in 0..100 {
        if a.rt.handle().status().unwrap().clients == 0 {
            return;
        }
        thread::sleep(Duration::from_millis(20));
    }
    panic!("client still attached");
}
