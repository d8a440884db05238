//! A DHT node serving WebSocket clients.
//!
//! Like [`Node`], a `Gateway` performs no I/O. Client frames come in through
//! [`Gateway::client_frame`] and frames for clients are drained with
//! [`Gateway::take_frames`]. Node events that belong to no gateway operation
//! (joins, lookups started by the driver) are passed through
//! [`Gateway::take_node_events`].

use std::collections::BTreeMap;
use std::net::SocketAddr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::frames::{ClientFrame, ErrorCode, ServerFrame};
use super::reorder::Reorder;
use super::{pick_presence, PeerIdentity, PresenceRecord, MAX_NAME};
use crate::id::Key;
use crate::node::{FindValueError, FoundValue, InboundRequest, Node, NodeEvent, OpId, Outgoing, RpcFailure};
use crate::protocol::{
    self, Body, RelayFailReason, RpcId, RpcMessage, SessionId, SignalEnvelope, SignalKind, SignalRelayBody, MAX_BLOB,
};
use crate::routing::Contact;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayConfig {
    pub presence_ttl_secs: u64,
    pub presence_refresh_secs: u64,
    /// Total SIGNAL_RELAY sends per envelope before giving up.
    pub relay_attempts: u32,
    /// How long an out-of-order envelope waits for the ones before it.
    pub gap_timeout_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            presence_ttl_secs: 60,
            presence_refresh_secs: 30,
            relay_attempts: 3,
            gap_timeout_ms: 3000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClientId(pub u64);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GatewayStats {
    pub relays_sent: u64,
    pub relays_received: u64,
    pub relay_failures: u64,
    pub reroutes: u64,
    pub gaps: u64,
    /// Lookup rounds spent resolving peers for `connect`.
    pub resolve_rounds: u64,
}

#[derive(Debug, Clone)]
enum ClientState {
    Fresh,
    Registering(PeerIdentity),
    Registered(PeerIdentity),
}

impl ClientState {
    fn identity(&self) -> Option<&PeerIdentity> {
        match self {
            ClientState::Fresh => None,
            ClientState::Registering(p) | ClientState::Registered(p) => Some(p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    Local,
    Remote(Contact),
}

#[derive(Debug, Clone)]
struct Session {
    remote: PeerIdentity,
    route: Route,
    next_out: u64,
    inbound: Reorder,
}

#[derive(Debug, Clone)]
enum GwOp {
    RegisterResolve {
        client: ClientId,
        peer: PeerIdentity,
    },
    RegisterStore {
        client: ClientId,
        peer: PeerIdentity,
    },
    ConnectResolve {
        client: ClientId,
        to: PeerIdentity,
    },
    Relay {
        client: ClientId,
        envelope: SignalEnvelope,
        rerouted: bool,
    },
    Reroute {
        client: ClientId,
        envelope: SignalEnvelope,
        failed: Contact,
    },
}

#[derive(Debug, Clone)]
pub struct Gateway {
    node: Node,
    config: GatewayConfig,
    rng: ChaCha8Rng,
    next_client: u64,
    clients: BTreeMap<ClientId, ClientState>,
    /// Peers registered (or registering) here, by key.
    names: BTreeMap<Key, ClientId>,
    sessions: BTreeMap<(ClientId, SessionId), Session>,
    ops: BTreeMap<OpId, GwOp>,
    frames: Vec<(ClientId, ServerFrame)>,
    node_events: Vec<NodeEvent>,
    stats: GatewayStats,
}

impl Gateway {
    pub fn new(node: Node, config: GatewayConfig, seed: u64) -> Self {
        Gateway {
            node,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_client: 0,
            clients: BTreeMap::new(),
            names: BTreeMap::new(),
            sessions: BTreeMap::new(),
            ops: BTreeMap::new(),
            frames: Vec::new(),
            node_events: Vec::new(),
            stats: GatewayStats::default(),
        }
    }

    pub fn node(&self) -> &Node {
        &self.node
    }

    /// Direct access for DHT operations. Call [`Gateway::process`] afterwards
    /// so that events are routed.
    pub fn node_mut(&mut self) -> &mut Node {
        &mut self.node
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn stats(&self) -> &GatewayStats {
        &self.stats
    }

    pub fn clients(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.clients.keys().copied()
    }

    /// Name registered by `client`, once registration has completed.
    /// Open sessions of `client`.
    pub fn sessions_of(&self, client: ClientId) -> Vec<SessionId> {
        self.sessions
            .keys()
            .filter(|(c, _)| *c == client)
            .map(|(_, s)| *s)
            .collect()
    }

    pub fn registered_name(&self, client: ClientId) -> Option<&str> {
        match self.clients.get(&client)? {
            ClientState::Registered(p) => Some(&p.name),
            _ => None,
        }
    }

    pub fn take_outbox(&mut self) -> Vec<Outgoing> {
        self.node.take_outbox()
    }

    pub fn take_frames(&mut self) -> Vec<(ClientId, ServerFrame)> {
        std::mem::take(&mut self.frames)
    }

    pub fn take_node_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.node_events)
    }

    pub fn next_deadline(&self) -> Option<u64> {
        let gap = self
            .sessions
            .values()
            .filter_map(|s| s.inbound.deadline(self.config.gap_timeout_ms))
            .min();
        [self.node.next_deadline(), gap].into_iter().flatten().min()
    }

    pub fn handle_datagram(&mut self, now: u64, from: SocketAddr, datagram: &[u8]) {
        self.node.handle_datagram(now, from, datagram);
        self.process(now);
    }

    pub fn poll(&mut self, now: u64) {
        self.node.poll(now);
        let gap_timeout = self.config.gap_timeout_ms;
        let keys: Vec<_> = self.sessions.keys().copied().collect();
        for key in keys {
            let session = self.sessions.get_mut(&key).expect("key just listed");
            if let Some((gap, released)) = session.inbound.expire(now, gap_timeout) {
                self.stats.gaps += 1;
                let (client, sid) = key;
                let detail = format!(
                    "gap in session {}: seq {}..{} missing",
                    sid.to_hex(),
                    gap.start,
                    gap.end
                );
                self.emit(client, ServerFrame::error(ErrorCode::RelayFailed, detail));
                for env in released {
                    self.emit_signal(client, env);
                }
            }
        }
        self.process(now);
    }

    // ---- clients ------------------------------------------------------

    pub fn attach_client(&mut self) -> ClientId {
        self.next_client += 1;
        let id = ClientId(self.next_client);
        self.clients.insert(id, ClientState::Fresh);
        id
    }

    /// The client's socket closed. Its presence stops being refreshed and
    /// expires on its own.
    pub fn detach_client(&mut self, client: ClientId) {
        self.unregister(client);
        self.clients.remove(&client);
        self.frames.retain(|(c, _)| *c != client);
    }

    pub fn is_attached(&self, client: ClientId) -> bool {
        self.clients.contains_key(&client)
    }

    fn unregister(&mut self, client: ClientId) {
        let Some(state) = self.clients.get_mut(&client) else {
            return;
        };
        if let Some(peer) = std::mem::replace(state, ClientState::Fresh).identity() {
            self.node.unpublish(&peer.key);
            if self.names.get(&peer.key) == Some(&client) {
                self.names.remove(&peer.key);
            }
        }
        self.sessions.retain(|(c, _), _| *c != client);
    }

    fn emit(&mut self, client: ClientId, frame: ServerFrame) {
        if self.clients.contains_key(&client) {
            self.frames.push((client, frame));
        }
    }

    fn emit_signal(&mut self, client: ClientId, env: SignalEnvelope) {
        self.emit(
            client,
            ServerFrame::Signal {
                session: env.session_id,
                kind: env.kind,
                seq: env.seq,
                blob: env.blob,
            },
        );
    }

    fn bad_request(&mut self, client: ClientId, detail: impl Into<String>) {
        self.emit(client, ServerFrame::error(ErrorCode::BadRequest, detail));
    }

    /// Handles one text frame from `client`.
    pub fn client_frame(&mut self, now: u64, client: ClientId, text: &str) {
        match ClientFrame::parse(text) {
            Ok(frame) => self.handle_frame(now, client, frame),
            Err(e) => self.bad_request(client, e.0),
        }
    }

    pub fn handle_frame(&mut self, now: u64, client: ClientId, frame: ClientFrame) {
        let Some(state) = self.clients.get(&client) else {
            return;
        };
        match frame {
            ClientFrame::Register { name } => {
                if !matches!(state, ClientState::Fresh) {
                    return self.bad_request(client, "already registered");
                }
                if name.is_empty() || name.len() > MAX_NAME {
                    return self.bad_request(client, format!("name must be 1..={MAX_NAME} bytes"));
                }
                let peer = PeerIdentity::new(&name);
                if self.names.contains_key(&peer.key) {
                    let detail = format!("{name} is already registered at this gateway");
                    return self.emit(client, ServerFrame::error(ErrorCode::RegisterFailed, detail));
                }
                self.names.insert(peer.key, client);
                self.clients.insert(client, ClientState::Registering(peer.clone()));
                let op = self.node.find_value(now, peer.key);
                self.ops.insert(op, GwOp::RegisterResolve { client, peer });
            }
            ClientFrame::Connect { to } => {
                let ClientState::Registered(me) = state else {
                    return self.bad_request(client, "register first");
                };
                if to == me.name || to.is_empty() || to.len() > MAX_NAME {
                    return self.bad_request(client, "invalid peer name");
                }
                let to = PeerIdentity::new(&to);
                let op = self.node.find_value(now, to.key);
                self.ops.insert(op, GwOp::ConnectResolve { client, to });
            }
            ClientFrame::Signal {
                session,
                kind,
                seq,
                blob,
            } => self.outbound_signal(now, client, session, kind, seq, blob),
            ClientFrame::Leave => self.unregister(client),
        }
        self.process(now);
    }

    fn outbound_signal(
        &mut self,
        now: u64,
        client: ClientId,
        sid: SessionId,
        kind: SignalKind,
        seq: u64,
        blob: String,
    ) {
        let Some(ClientState::Registered(me)) = self.clients.get(&client) else {
            return self.bad_request(client, "register first");
        };
        let from_peer = me.name.clone();
        let Some(session) = self.sessions.get(&(client, sid)) else {
            return self.bad_request(client, format!("unknown session {}", sid.to_hex()));
        };
        if seq != session.next_out {
            let detail = format!("expected seq {} in session {}", session.next_out, sid.to_hex());
            return self.bad_request(client, detail);
        }
        let envelope = SignalEnvelope {
            blob,
            from_peer,
            kind,
            seq,
            session_id: sid,
            to_peer: session.remote.name.clone(),
        };
        let route = session.route;
        let dest_peer_key = session.remote.key;
        if envelope.blob.len() > MAX_BLOB || !self.relay_fits(dest_peer_key, &envelope) {
            return self.bad_request(client, "envelope too large");
        }
        self.sessions.get_mut(&(client, sid)).expect("checked above").next_out += 1;
        match route {
            Route::Local => {
                if self.deliver(now, envelope, Route::Local).is_err() {
                    self.emit(client, ServerFrame::error(ErrorCode::PeerNotFound, "peer left"));
                }
            }
            Route::Remote(gw) => self.relay(now, client, gw, envelope, false),
        }
    }

    fn relay_fits(&self, dest_peer_key: Key, envelope: &SignalEnvelope) -> bool {
        let probe = RpcMessage::new(
            RpcId::default(),
            self.node.contact(),
            Body::SignalRelay(SignalRelayBody {
                dest_peer_key,
                envelope: envelope.clone(),
            }),
        );
        protocol::encode(&probe).is_ok()
    }

    fn relay(&mut self, now: u64, client: ClientId, gw: Contact, envelope: SignalEnvelope, rerouted: bool) {
        self.stats.relays_sent += 1;
        let body = Body::SignalRelay(SignalRelayBody {
            dest_peer_key: PeerIdentity::new(&envelope.to_peer).key,
            envelope: envelope.clone(),
        });
        let op = self.node.request(now, gw, body, self.config.relay_attempts);
        self.ops.insert(
            op,
            GwOp::Relay {
                client,
                envelope,
                rerouted,
            },
        );
    }

    /// Hands an envelope to the local client it is addressed to.
    fn deliver(&mut self, now: u64, env: SignalEnvelope, from: Route) -> Result<(), RelayFailReason> {
        let to = PeerIdentity::new(&env.to_peer);
        let Some(&client) = self.names.get(&to.key) else {
            return Err(RelayFailReason::NoSuchPeer);
        };
        match self.clients.get(&client) {
            Some(ClientState::Registered(p)) if p.name == to.name => {}
            _ => return Err(RelayFailReason::NoSuchPeer),
        }
        let key = (client, env.session_id);
        if let Some(s) = self.sessions.get_mut(&key) {
            if s.remote.name != env.from_peer {
                return Err(RelayFailReason::Rejected);
            }
            s.route = from;
        } else {
            self.sessions.insert(
                key,
                Session {
                    remote: PeerIdentity::new(&env.from_peer),
                    route: from,
                    next_out: 0,
                    inbound: Reorder::new(),
                },
            );
            let frame = ServerFrame::Session {
                session: env.session_id,
                from: env.from_peer.clone(),
            };
            self.emit(client, frame);
        }
        let session = self.sessions.get_mut(&key).expect("present");
        let released = session.inbound.push(now, env);
        for env in released {
            self.emit_signal(client, env);
        }
        Ok(())
    }

    // ---- node events ----------------------------------------------------

    /// Routes pending node events to their gateway operations.
    pub fn process(&mut self, now: u64) {
        loop {
            let events = self.node.take_events();
            if events.is_empty() {
                break;
            }
            for ev in events {
                self.on_event(now, ev);
            }
        }
    }

    fn on_event(&mut self, now: u64, ev: NodeEvent) {
        match ev {
            NodeEvent::Request(req) => self.on_relay_request(now, req),
            NodeEvent::FindValue { op, result } if self.ops.contains_key(&op) => {
                let gop = self.ops.remove(&op).expect("checked");
                self.on_resolved(now, gop, result);
            }
            NodeEvent::Store { op, result } if self.ops.contains_key(&op) => {
                let Some(GwOp::RegisterStore { client, peer }) = self.ops.remove(&op) else {
                    return;
                };
                let still_registering =
                    matches!(self.clients.get(&client), Some(ClientState::Registering(p)) if *p == peer);
                if !still_registering {
                    return;
                }
                match result {
                    Ok(replicas) => {
                        self.clients.insert(client, ClientState::Registered(peer));
                        self.emit(client, ServerFrame::Registered { replicas });
                    }
                    Err(e) => {
                        self.unregister(client);
                        self.emit(client, ServerFrame::error(ErrorCode::RegisterFailed, e.to_string()));
                    }
                }
            }
            NodeEvent::Response { op, result } if self.ops.contains_key(&op) => {
                let Some(GwOp::Relay {
                    client,
                    envelope,
                    rerouted,
                }) = self.ops.remove(&op)
                else {
                    return;
                };
                self.on_relay_result(now, client, envelope, rerouted, result);
            }
            other => self.node_events.push(other),
        }
    }

    fn on_relay_request(&mut self, now: u64, req: InboundRequest) {
        let Body::SignalRelay(body) = &req.body else {
            return;
        };
        self.stats.relays_received += 1;
        let reply = if body.dest_peer_key != PeerIdentity::new(&body.envelope.to_peer).key {
            Body::RelayFail {
                reason: RelayFailReason::Rejected,
            }
        } else {
            match self.deliver(now, body.envelope.clone(), Route::Remote(req.from)) {
                Ok(()) => Body::RelayOk,
                Err(reason) => Body::RelayFail { reason },
            }
        };
        self.node.respond(&req, reply);
    }

    fn on_relay_result(
        &mut self,
        now: u64,
        client: ClientId,
        envelope: SignalEnvelope,
        rerouted: bool,
        result: Result<RpcMessage, RpcFailure>,
    ) {
        let session = envelope.session_id.to_hex();
        match result.map(|m| m.body) {
            Ok(Body::RelayOk) => {}
            Ok(Body::RelayFail {
                reason: RelayFailReason::NoSuchPeer,
            }) if !rerouted => {
                // The peer moved or left; look it up again.
                let failed = match self.sessions.get(&(client, envelope.session_id)).map(|s| s.route) {
                    Some(Route::Remote(gw)) => gw,
                    _ => return,
                };
                self.stats.reroutes += 1;
                let op = self.node.find_value(now, PeerIdentity::new(&envelope.to_peer).key);
                self.ops.insert(
                    op,
                    GwOp::Reroute {
                        client,
                        envelope,
                        failed,
                    },
                );
                self.process(now);
            }
            Ok(Body::RelayFail {
                reason: RelayFailReason::NoSuchPeer,
            }) => {
                self.stats.relay_failures += 1;
                let detail = format!("{} is gone (session {session})", envelope.to_peer);
                self.emit(client, ServerFrame::error(ErrorCode::PeerNotFound, detail));
            }
            Ok(_) => {
                self.stats.relay_failures += 1;
                let detail = format!("relay rejected (session {session})");
                self.emit(client, ServerFrame::error(ErrorCode::RelayFailed, detail));
            }
            Err(RpcFailure::Timeout) => {
                self.stats.relay_failures += 1;
                let detail = format!("gateway of {} unreachable (session {session})", envelope.to_peer);
                self.emit(client, ServerFrame::error(ErrorCode::RelayFailed, detail));
            }
        }
    }

    fn on_resolved(&mut self, now: u64, op: GwOp, result: Result<FoundValue, FindValueError>) {
        match op {
            GwOp::RegisterResolve { client, peer } => {
                let still_registering =
                    matches!(self.clients.get(&client), Some(ClientState::Registering(p)) if *p == peer);
                if !still_registering {
                    return;
                }
                let seq = result
                    .ok()
                    .and_then(|f| pick_presence(&peer.key, &f.records, now))
                    .map_or(0, |r| r.record.seq + 1);
                let record = PresenceRecord {
                    gateway: self.node.contact(),
                    peer_key: peer.key,
                    seq,
                };
                let stored = self.node.store_every(
                    now,
                    peer.key,
                    record.encode(),
                    self.config.presence_ttl_secs,
                    self.config.presence_refresh_secs,
                );
                match stored {
                    Ok(op) => {
                        self.ops.insert(op, GwOp::RegisterStore { client, peer });
                    }
                    Err(e) => {
                        self.unregister(client);
                        self.emit(client, ServerFrame::error(ErrorCode::RegisterFailed, e.to_string()));
                    }
                }
            }
            GwOp::ConnectResolve { client, to } => {
                let Some(ClientState::Registered(me)) = self.clients.get(&client) else {
                    return;
                };
                let me = me.name.clone();
                if let Ok(found) = &result {
                    self.stats.resolve_rounds += found.rounds as u64;
                }
                let route = match self.route_from(&to, result) {
                    Ok(route) => route,
                    Err((code, detail)) => return self.emit(client, ServerFrame::error(code, detail)),
                };
                let sid = loop {
                    let sid = SessionId::random(&mut self.rng);
                    if !self.sessions.contains_key(&(client, sid)) {
                        break sid;
                    }
                };
                self.sessions.insert(
                    (client, sid),
                    Session {
                        remote: to,
                        route,
                        next_out: 0,
                        inbound: Reorder::new(),
                    },
                );
                self.emit(client, ServerFrame::Session { session: sid, from: me });
            }
            GwOp::Reroute {
                client,
                envelope,
                failed,
            } => {
                let to = PeerIdentity::new(&envelope.to_peer);
                let key = (client, envelope.session_id);
                if !self.sessions.contains_key(&key) {
                    return;
                }
                let route = match self.route_from(&to, result) {
                    Ok(Route::Remote(gw)) if gw == failed => Err((
                        ErrorCode::PeerNotFound,
                        format!("{} is gone (session {})", to.name, envelope.session_id.to_hex()),
                    )),
                    other => other,
                };
                match route {
                    Ok(route) => {
                        self.sessions.get_mut(&key).expect("checked").route = route;
                        match route {
                            Route::Local => {
                                if self.deliver(now, envelope, Route::Local).is_err() {
                                    self.emit(client, ServerFrame::error(ErrorCode::PeerNotFound, "peer left"));
                                }
                            }
                            Route::Remote(gw) => self.relay(now, client, gw, envelope, true),
                        }
                    }
                    Err((code, detail)) => {
                        self.stats.relay_failures += 1;
                        self.emit(client, ServerFrame::error(code, detail));
                    }
                }
            }
            GwOp::RegisterStore { .. } | GwOp::Relay { .. } => {}
        }
    }

    fn route_from(
        &self,
        to: &PeerIdentity,
        result: Result<FoundValue, FindValueError>,
    ) -> Result<Route, (ErrorCode, String)> {
        let not_found = || (ErrorCode::PeerNotFound, to.name.clone());
        let found = match result {
            Ok(f) => f,
            Err(FindValueError::NotFound) => return Err(not_found()),
            Err(e) => return Err((ErrorCode::RelayFailed, format!("lookup of {} failed: {e}", to.name))),
        };
        let record = pick_presence(&to.key, &found.records, 0).ok_or_else(not_found)?.record;
        if record.gateway.id == self.node.id() {
            // Our own record: only valid while the peer is still attached.
            match self.names.get(&to.key).and_then(|c| self.clients.get(c)) {
                Some(ClientState::Registered(p)) if p.name == to.name => Ok(Route::Local),
                _ => Err(not_found()),
            }
        } else {
            Ok(Route::Remote(record.gateway))
        }
    }
}
