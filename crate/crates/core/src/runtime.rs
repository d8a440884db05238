//! Runs a gateway over a real UDP socket.
//!
//! One thread owns the [`Gateway`] and is the only one that touches it. A
//! second thread blocks on the socket and forwards datagrams into the same
//! command queue the [`NodeHandle`] methods use, so inbound traffic, timers
//! and local commands are handled strictly one at a time.

use std::collections::BTreeMap;
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::id::{Key, NodeId};
use crate::node::{
    FindValueError, FoundValue, JoinError, JoinReport, LookupError, LookupOutcome, Node, NodeConfig, NodeEvent,
    NodeStats, OpId, RpcFailure, StoreError,
};
use crate::protocol::MAX_DATAGRAM;
use crate::routing::Contact;
use crate::signaling::{ClientId, Gateway, GatewayConfig, GatewayStats, ServerFrame};
use crate::transport::{Transport, UdpTransport};

const RECV_POLL: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("node has shut down")]
    Stopped,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Config(#[from] crate::node::ConfigError),
}

/// Point-in-time view of a running node.
#[derive(Debug, Clone)]
pub struct Status {
    pub contact: Contact,
    pub contacts: usize,
    pub occupied_buckets: usize,
    pub stored_records: usize,
    pub clients: usize,
    pub node: NodeStats,
    pub gateway: GatewayStats,
}

type Reply<T> = Sender<T>;

enum Pending {
    Join(Reply<Result<JoinReport, JoinError>>),
    FindNode(Reply<Result<LookupOutcome, LookupError>>),
    FindValue(Reply<Result<FoundValue, FindValueError>>),
    Store(Reply<Result<usize, StoreError>>),
    Ping(Reply<Result<Contact, RpcFailure>>),
}

enum Command {
    Datagram(SocketAddr, Vec<u8>),
    Join(SocketAddr, Reply<Result<JoinReport, JoinError>>),
    FindNode(NodeId, Reply<Result<LookupOutcome, LookupError>>),
    FindValue(Key, Reply<Result<FoundValue, FindValueError>>),
    Store {
        key: Key,
        value: Vec<u8>,
        ttl_secs: u64,
        reply: Reply<Result<usize, StoreError>>,
    },
    Ping(SocketAddr, Reply<Result<Contact, RpcFailure>>),
    Attach(Sender<ServerFrame>, Reply<ClientId>),
    ClientText(ClientId, String),
    Detach(ClientId),
    Status(Reply<Status>),
    Shutdown,
}

/// Cheap, cloneable, thread-safe handle to a running node.
#[derive(Clone)]
pub struct NodeHandle {
    tx: Sender<Command>,
    contact: Contact,
}

/// Owns the node's threads; dropping it shuts the node down.
pub struct NodeRuntime {
    handle: NodeHandle,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl NodeRuntime {
    /// Binds `listen` and starts the node. A port of 0 picks a free one.
    pub fn start(
        listen: SocketAddr,
        id: NodeId,
        config: NodeConfig,
        gateway_config: GatewayConfig,
    ) -> Result<NodeRuntime, RuntimeError> {
        let transport = UdpTransport::bind(listen)?;
        let local = transport.local_addr();
        let seed = u64::from_be_bytes(id.as_bytes()[..8].try_into().expect("ids are 20 bytes"));
        let node = Node::new(id, local, config, seed, 0)?;
        let gateway = Gateway::new(node, gateway_config, seed.rotate_left(29));
        let contact = gateway.node().contact();

        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));

        let receiver = transport.try_clone()?;
        let recv_tx = tx.clone();
        let recv_stop = stop.clone();
        let recv = thread::Builder::new()
            .name(format!("kad-recv-{local}"))
            .spawn(move || receive_loop(receiver, recv_tx, recv_stop))?;

        let main = thread::Builder::new()
            .name(format!("kad-node-{local}"))
            .spawn(move || Loop::new(gateway, transport).run(rx))?;

        Ok(NodeRuntime {
            handle: NodeHandle { tx, contact },
            stop,
            threads: vec![main, recv],
        })
    }

    pub fn handle(&self) -> NodeHandle {
        self.handle.clone()
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.handle.tx.send(Command::Shutdown);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for NodeRuntime {
    fn drop(&mut self) {
        self.stop_threads();
    }
}

fn receive_loop(socket: UdpTransport, tx: Sender<Command>, stop: Arc<AtomicBool>) {
    let mut buf = vec![0u8; MAX_DATAGRAM + 1];
    while !stop.load(Ordering::SeqCst) {
        match socket.recv(&mut buf, Some(RECV_POLL)) {
            Ok(Some((n, from))) => {
                if tx.send(Command::Datagram(from, buf[..n].to_vec())).is_err() {
                    return;
                }
            }
            Ok(None) => {}
            Err(e) => {
                // ICMP errors from earlier sends surface here on some
                // platforms; they say nothing about this socket.
                tracing::debug!(error = %e, "udp receive failed");
            }
        }
    }
}

impl NodeHandle {
    pub fn contact(&self) -> Contact {
        self.contact
    }

    pub fn id(&self) -> NodeId {
        self.contact.id
    }

    pub fn addr(&self) -> SocketAddr {
        self.contact.addr
    }

    fn call<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, RuntimeError> {
        let (tx, rx) = mpsc::channel();
        self.tx.send(make(tx)).map_err(|_| RuntimeError::Stopped)?;
        rx.recv().map_err(|_| RuntimeError::Stopped)
    }

    pub fn join(&self, bootstrap: SocketAddr) -> Result<Result<JoinReport, JoinError>, RuntimeError> {
        self.call(|r| Command::Join(bootstrap, r))
    }

    pub fn find_node(&self, target: NodeId) -> Result<Result<LookupOutcome, LookupError>, RuntimeError> {
        self.call(|r| Command::FindNode(target, r))
    }

    pub fn find_value(&self, key: Key) -> Result<Result<FoundValue, FindValueError>, RuntimeError> {
        self.call(|r| Command::FindValue(key, r))
    }

    /// Publishes and keeps republishing `value` under `key`.
    pub fn store(&self, key: Key, value: Vec<u8>, ttl_secs: u64) -> Result<Result<usize, StoreError>, RuntimeError> {
        self.call(|reply| Command::Store {
            key,
            value,
            ttl_secs,
            reply,
        })
    }

    pub fn ping(&self, addr: SocketAddr) -> Result<Result<Contact, RpcFailure>, RuntimeError> {
        self.call(|r| Command::Ping(addr, r))
    }

    pub fn status(&self) -> Result<Status, RuntimeError> {
        self.call(Command::Status)
    }

    /// Attaches a WebSocket client. Frames for it arrive on the returned
    /// receiver, which disconnects when the node stops.
    pub fn attach_client(&self) -> Result<(ClientId, Receiver<ServerFrame>), RuntimeError> {
        let (frames_tx, frames_rx) = mpsc::channel();
        let id = self.call(|r| Command::Attach(frames_tx, r))?;
        Ok((id, frames_rx))
    }

    /// Hands one text frame from the client to the gateway.
    pub fn client_text(&self, client: ClientId, text: String) -> Result<(), RuntimeError> {
        self.tx
            .send(Command::ClientText(client, text))
            .map_err(|_| RuntimeError::Stopped)
    }

    pub fn detach_client(&self, client: ClientId) {
        let _ = self.tx.send(Command::Detach(client));
    }
}

struct Loop {
    gateway: Gateway,
    transport: UdpTransport,
    epoch: Instant,
    pending: BTreeMap<OpId, Pending>,
    clients: BTreeMap<ClientId, Sender<ServerFrame>>,
}

impl Loop {
    fn new(gateway: Gateway, transport: UdpTransport) -> Self {
        Loop {
            gateway,
            transport,
            epoch: Instant::now(),
            pending: BTreeMap::new(),
            clients: BTreeMap::new(),
        }
    }

    fn now(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    fn run(mut self, rx: Receiver<Command>) {
        loop {
            let now = self.now();
            let wait = match self.gateway.next_deadline() {
                Some(t) if t <= now => {
                    self.gateway.poll(now);
                    self.flush();
                    continue;
                }
                Some(t) => Duration::from_millis(t - now),
                None => Duration::from_secs(3600),
            };
            match rx.recv_timeout(wait) {
                Ok(Command::Shutdown) | Err(RecvTimeoutError::Disconnected) => return,
                Ok(cmd) => self.command(cmd),
                Err(RecvTimeoutError::Timeout) => {}
            }
        }
    }

    fn command(&mut self, cmd: Command) {
        let now = self.now();
        match cmd {
            Command::Datagram(from, bytes) => self.gateway.handle_datagram(now, from, &bytes),
            Command::Join(addr, reply) => {
                let op = self.gateway.node_mut().join(now, addr);
                self.pending.insert(op, Pending::Join(reply));
            }
            Command::FindNode(target, reply) => {
                let op = self.gateway.node_mut().find_node(now, target);
                self.pending.insert(op, Pending::FindNode(reply));
            }
            Command::FindValue(key, reply) => {
                let op = self.gateway.node_mut().find_value(now, key);
                self.pending.insert(op, Pending::FindValue(reply));
            }
            Command::Store {
                key,
                value,
                ttl_secs,
                reply,
            } => match self.gateway.node_mut().store(now, key, value, ttl_secs) {
                Ok(op) => {
                    self.pending.insert(op, Pending::Store(reply));
                }
                Err(e) => {
                    let _ = reply.send(Err(e));
                }
            },
            Command::Ping(addr, reply) => {
                let op = self.gateway.node_mut().ping(now, addr);
                self.pending.insert(op, Pending::Ping(reply));
            }
            Command::Attach(frames, reply) => {
                let id = self.gateway.attach_client();
                self.clients.insert(id, frames);
                let _ = reply.send(id);
            }
            Command::ClientText(client, text) => self.gateway.client_frame(now, client, &text),
            Command::Detach(client) => {
                self.gateway.detach_client(client);
                self.clients.remove(&client);
            }
            Command::Status(reply) => {
                let node = self.gateway.node();
                let _ = reply.send(Status {
                    contact: node.contact(),
                    contacts: node.table().len(),
                    occupied_buckets: node.table().occupied_buckets(),
                    stored_records: node.storage().len(),
                    clients: self.clients.len(),
                    node: node.stats().clone(),
                    gateway: self.gateway.stats().clone(),
                });
            }
            Command::Shutdown => {}
        }
        self.gateway.process(now);
        self.flush();
    }

    fn flush(&mut self) {
        let from = self.transport.local_addr();
        for out in self.gateway.take_outbox() {
            if let Err(e) = self.transport.send(from, out.to, &out.datagram) {
                tracing::warn!(to = %out.to, error = %e, "dropping outgoing datagram");
            }
        }
        for (client, frame) in self.gateway.take_frames() {
            let gone = match self.clients.get(&client) {
                Some(tx) => tx.send(frame).is_err(),
                None => false,
            };
            if gone {
                self.gateway.detach_client(client);
                self.clients.remove(&client);
            }
        }
        for ev in self.gateway.take_node_events() {
            self.complete(ev);
        }
    }

    fn complete(&mut self, ev: NodeEvent) {
        let op = match &ev {
            NodeEvent::Join { op, .. }
            | NodeEvent::FindNode { op, .. }
            | NodeEvent::FindValue { op, .. }
            | NodeEvent::Store { op, .. }
            | NodeEvent::Ping { op, .. }
            | NodeEvent::Response { op, .. } => *op,
            NodeEvent::Request(_) => return,
        };
        let Some(pending) = self.pending.remove(&op) else {
            return;
        };
        // A caller that gave up has dropped its receiver; nothing to do.
        let _ = match (pending, ev) {
            (Pending::Join(r), NodeEvent::Join { result, .. }) => r.send(result).is_ok(),
            (Pending::FindNode(r), NodeEvent::FindNode { result, .. }) => r.send(result).is_ok(),
            (Pending::FindValue(r), NodeEvent::FindValue { result, .. }) => r.send(result).is_ok(),
            (Pending::Store(r), NodeEvent::Store { result, .. }) => r.send(result).is_ok(),
            (Pending::Ping(r), NodeEvent::Ping { result, .. }) => r.send(result).is_ok(),
            _ => false,
        };
    }
}
