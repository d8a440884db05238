//! A whole overlay in one process: gateways on a [`SimNetwork`], stepped in
//! virtual time.
//!
//! Everything is single-threaded and ordered, so a world is a pure function
//! of its seeds. Worlds are `Clone`; experiments bootstrap once and run each
//! trial on a copy.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::net::SocketAddr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::id::{Key, NodeId};
use crate::node::{
    ConfigError, FindValueError, FoundValue, JoinError, JoinReport, LookupError, LookupOutcome, Node, NodeConfig,
    NodeEvent, OpId, RpcFailure, StoreError,
};
use crate::routing::Contact;
use crate::signaling::{ClientFrame, ClientId, Gateway, GatewayConfig, ServerFrame};
use crate::transport::{SimConfigError, SimNetwork, SimNetworkConfig};

/// Upper bound on how long a single DHT operation may take to settle.
const OP_LIMIT_MS: u64 = 600_000;

#[derive(Debug, Error)]
pub enum WorldError {
    #[error(transparent)]
    Node(#[from] ConfigError),
    #[error(transparent)]
    Net(#[from] SimConfigError),
    #[error("node {0} failed to join: {1}")]
    Join(usize, JoinError),
    #[error("operation {0} on node {1} did not finish")]
    Stuck(OpId, usize),
}

/// A browser session attached to a gateway.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClientRef {
    pub node: usize,
    pub client: ClientId,
}

#[derive(Debug, Clone, Default)]
struct Inbox {
    frames: Vec<(u64, ServerFrame)>,
    closed_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct SimWorld {
    net: SimNetwork,
    gateways: Vec<Gateway>,
    alive: Vec<bool>,
    by_addr: BTreeMap<SocketAddr, usize>,
    timers: BinaryHeap<Reverse<(u64, usize)>>,
    scheduled: Vec<Option<u64>>,
    results: BTreeMap<(usize, OpId), NodeEvent>,
    inboxes: BTreeMap<ClientRef, Inbox>,
    rng: ChaCha8Rng,
    node_config: NodeConfig,
    gateway_config: GatewayConfig,
}

impl SimWorld {
    pub fn new(
        net: SimNetworkConfig,
        node_config: NodeConfig,
        gateway_config: GatewayConfig,
    ) -> Result<Self, WorldError> {
        node_config.validate()?;
        let seed = net.seed;
        Ok(SimWorld {
            net: SimNetwork::new(net)?,
            gateways: Vec::new(),
            alive: Vec::new(),
            by_addr: BTreeMap::new(),
            timers: BinaryHeap::new(),
            scheduled: Vec::new(),
            results: BTreeMap::new(),
            inboxes: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x0005_eed0_fa11),
            node_config,
            gateway_config,
        })
    }

    /// Builds an `n`-node overlay: node 0 starts alone and every other node
    /// joins through it, one at a time. The bootstrap runs loss-free; the
    /// configured loss rate applies afterwards.
    pub fn bootstrap(
        n: usize,
        net: SimNetworkConfig,
        node_config: NodeConfig,
        gateway_config: GatewayConfig,
    ) -> Result<Self, WorldError> {
        let loss = net.loss_rate;
        let mut world = SimWorld::new(SimNetworkConfig { loss_rate: 0.0, ..net }, node_config, gateway_config)?;
        for _ in 0..n {
            world.spawn()?;
        }
        for i in 1..n {
            world.join(i, 0)?;
        }
        world.net.set_loss_rate(loss)?;
        Ok(world)
    }

    pub fn now(&self) -> u64 {
        self.net.now()
    }

    pub fn net(&self) -> &SimNetwork {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut SimNetwork {
        &mut self.net
    }

    pub fn len(&self) -> usize {
        self.gateways.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gateways.is_empty()
    }

    pub fn gateway(&self, i: usize) -> &Gateway {
        &self.gateways[i]
    }

    pub fn node(&self, i: usize) -> &Node {
        self.gateways[i].node()
    }

    pub fn is_alive(&self, i: usize) -> bool {
        self.alive[i]
    }

    pub fn alive(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| self.alive[i])
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Creates a node with a random id. It knows nobody until it joins.
    pub fn spawn(&mut self) -> Result<usize, WorldError> {
        let id = NodeId::random(&mut self.rng);
        self.spawn_with_id(id)
    }

    pub fn spawn_with_id(&mut self, id: NodeId) -> Result<usize, WorldError> {
        let addr = self.net.bind();
        let index = self.gateways.len();
        let seed = self.rng.gen();
        let node = Node::new(id, addr, self.node_config.clone(), seed, self.now())?;
        self.gateways
            .push(Gateway::new(node, self.gateway_config.clone(), seed.rotate_left(17)));
        self.alive.push(true);
        self.by_addr.insert(addr, index);
        self.scheduled.push(None);
        self.flush(index);
        Ok(index)
    }

    /// Stops node `i` for good. Its clients see their socket close.
    pub fn kill(&mut self, i: usize) {
        if !self.alive[i] {
            return;
        }
        self.alive[i] = false;
        self.net.unbind(self.gateways[i].node().addr());
        let now = self.now();
        let clients: Vec<ClientId> = self.gateways[i].clients().collect();
        for client in clients {
            self.gateways[i].detach_client(client);
            self.inboxes.entry(ClientRef { node: i, client }).or_default().closed_at = Some(now);
        }
        self.scheduled[i] = None;
    }

    /// Brute-force oracle: the `count` live nodes closest to `target`,
    /// excluding `exclude`.
    pub fn closest_live(&self, target: &NodeId, count: usize, exclude: Option<usize>) -> Vec<Contact> {
        let mut all: Vec<Contact> = self
            .alive()
            .filter(|&i| Some(i) != exclude)
            .map(|i| self.node(i).contact())
            .collect();
        all.sort_by_key(|c| c.id.distance(target));
        all.truncate(count);
        all
    }

    pub fn index_of(&self, addr: &SocketAddr) -> Option<usize> {
        self.by_addr.get(addr).copied()
    }

    // ---- event loop -----------------------------------------------------

    /// Moves node `i`'s queued datagrams, frames and events out, and re-arms
    /// its timer.
    fn flush(&mut self, i: usize) {
        let now = self.now();
        let from = self.gateways[i].node().addr();
        for out in self.gateways[i].take_outbox() {
            // Oversize datagrams are never produced by the encoder.
            let _ = self.net.send(from, out.to, &out.datagram);
        }
        for (client, frame) in self.gateways[i].take_frames() {
            self.inboxes
                .entry(ClientRef { node: i, client })
                .or_default()
                .frames
                .push((now, frame));
        }
        for ev in self.gateways[i].take_node_events() {
            if let Some(op) = op_of(&ev) {
                self.results.insert((i, op), ev);
            }
        }
        if !self.alive[i] {
            return;
        }
        let next = self.gateways[i].next_deadline().map(|t| t.max(now + 1));
        if next != self.scheduled[i] {
            self.scheduled[i] = next;
            if let Some(t) = next {
                self.timers.push(Reverse((t, i)));
            }
        }
    }

    fn next_timer(&mut self) -> Option<(u64, usize)> {
        while let Some(&Reverse((t, i))) = self.timers.peek() {
            if self.alive[i] && self.scheduled[i] == Some(t) {
                return Some((t, i));
            }
            self.timers.pop();
        }
        None
    }

    /// Processes the next delivery or timer due at or before `until`.
    /// Returns `false`, leaving the clock alone, when there is none.
    pub fn step(&mut self, until: u64) -> bool {
        let delivery = self.net.next_event_time().filter(|&t| t <= until);
        let timer = self.next_timer().filter(|&(t, _)| t <= until);
        match (delivery, timer) {
            (None, None) => false,
            (Some(d), Some((t, _))) if d <= t => self.deliver_one(until),
            (Some(_), None) => self.deliver_one(until),
            (_, Some((t, i))) => {
                self.timers.pop();
                self.scheduled[i] = None;
                self.net.advance_to(t);
                self.gateways[i].poll(t);
                self.flush(i);
                true
            }
        }
    }

    fn deliver_one(&mut self, until: u64) -> bool {
        let Some(d) = self.net.pop_next(until) else {
            return true;
        };
        let Some(&i) = self.by_addr.get(&d.dst) else {
            return true;
        };
        self.gateways[i].handle_datagram(d.time, d.src, &d.datagram);
        self.flush(i);
        true
    }

    /// Runs everything due up to `until`, then sets the clock there.
    pub fn run_until(&mut self, until: u64) {
        while self.step(until) {}
        self.net.advance_to(until);
    }

    pub fn run_for(&mut self, ms: u64) {
        let until = self.now() + ms;
        self.run_until(until);
    }

    /// Steps until `done` holds or the clock would pass `deadline`. Returns
    /// whether `done` was reached.
    pub fn run_while<F: FnMut(&mut SimWorld) -> bool>(&mut self, deadline: u64, mut done: F) -> bool {
        loop {
            if done(self) {
                return true;
            }
            if !self.step(deadline) {
                self.net.advance_to(deadline);
                return done(self);
            }
        }
    }

    /// Runs until node `i` reports the result of `op`.
    pub fn wait(&mut self, i: usize, op: OpId) -> Result<NodeEvent, WorldError> {
        let deadline = self.now() + OP_LIMIT_MS;
        if self.run_while(deadline, |w| w.results.contains_key(&(i, op))) {
            Ok(self.results.remove(&(i, op)).expect("checked"))
        } else {
            Err(WorldError::Stuck(op, i))
        }
    }

    /// Takes the result of `op` if it has already arrived.
    pub fn try_result(&mut self, i: usize, op: OpId) -> Option<NodeEvent> {
        self.results.remove(&(i, op))
    }

    /// Runs `f` against node `i` and routes whatever it queued.
    pub fn with_node<T>(&mut self, i: usize, f: impl FnOnce(&mut Node, u64) -> T) -> T {
        let now = self.now();
        let out = f(self.gateways[i].node_mut(), now);
        self.gateways[i].process(now);
        self.flush(i);
        out
    }

    // ---- DHT operations ---------------------------------------------------

    pub fn join(&mut self, i: usize, via: usize) -> Result<JoinReport, WorldError> {
        let addr = self.node(via).addr();
        let op = self.with_node(i, |n, now| n.join(now, addr));
        match self.wait(i, op)? {
            NodeEvent::Join { result: Ok(r), .. } => Ok(r),
            NodeEvent::Join { result: Err(e), .. } => Err(WorldError::Join(i, e)),
            other => unreachable!("join op answered with {other:?}"),
        }
    }

    pub fn find_node(&mut self, i: usize, target: NodeId) -> Result<Result<LookupOutcome, LookupError>, WorldError> {
        let op = self.with_node(i, |n, now| n.find_node(now, target));
        match self.wait(i, op)? {
            NodeEvent::FindNode { result, .. } => Ok(result),
            other => unreachable!("lookup op answered with {other:?}"),
        }
    }

    pub fn find_value(&mut self, i: usize, key: Key) -> Result<Result<FoundValue, FindValueError>, WorldError> {
        let op = self.with_node(i, |n, now| n.find_value(now, key));
        match self.wait(i, op)? {
            NodeEvent::FindValue { result, .. } => Ok(result),
            other => unreachable!("find_value op answered with {other:?}"),
        }
    }

    /// Pings node `to` from node `i`.
    pub fn ping(&mut self, i: usize, to: usize) -> Result<Result<Contact, RpcFailure>, WorldError> {
        let addr = self.node(to).addr();
        let op = self.with_node(i, |n, now| n.ping(now, addr));
        match self.wait(i, op)? {
            NodeEvent::Ping { result, .. } => Ok(result),
            other => unreachable!("ping op answered with {other:?}"),
        }
    }

    /// Publishes with republishing when `republish` is set.
    pub fn store(
        &mut self,
        i: usize,
        key: Key,
        value: Vec<u8>,
        ttl_secs: u64,
        republish: bool,
    ) -> Result<Result<usize, StoreError>, WorldError> {
        let started = self.with_node(i, |n, now| {
            if republish {
                n.store(now, key, value, ttl_secs)
            } else {
                n.store_once(now, key, value, ttl_secs)
            }
        });
        let op = match started {
            Ok(op) => op,
            Err(e) => return Ok(Err(e)),
        };
        match self.wait(i, op)? {
            NodeEvent::Store { result, .. } => Ok(result),
            other => unreachable!("store op answered with {other:?}"),
        }
    }

    /// Refreshes every eligible bucket on every live node and lets the
    /// lookups settle.
    pub fn refresh_cycle(&mut self) {
        let live: Vec<usize> = self.alive().collect();
        for i in live {
            self.with_node(i, |n, now| {
                n.refresh_all(now);
            });
        }
        self.settle();
    }

    /// Runs until no request is in flight anywhere.
    pub fn settle(&mut self) {
        let deadline = self.now() + OP_LIMIT_MS;
        self.run_while(deadline, |w| w.alive().all(|i| w.node(i).in_flight() == 0));
    }

    // ---- clients -----------------------------------------------------------

    pub fn attach(&mut self, node: usize) -> ClientRef {
        let client = self.gateways[node].attach_client();
        let r = ClientRef { node, client };
        self.inboxes.insert(r, Inbox::default());
        r
    }

    pub fn detach(&mut self, c: ClientRef) {
        self.gateways[c.node].detach_client(c.client);
        let now = self.now();
        self.inboxes.entry(c).or_default().closed_at = Some(now);
        self.flush(c.node);
    }

    pub fn send_frame(&mut self, c: ClientRef, frame: ClientFrame) {
        if !self.alive[c.node] || !self.gateways[c.node].is_attached(c.client) {
            return;
        }
        let now = self.now();
        self.gateways[c.node].handle_frame(now, c.client, frame);
        self.flush(c.node);
    }

    /// Frames delivered to `c` since the last call, with arrival times.
    pub fn take_frames(&mut self, c: ClientRef) -> Vec<(u64, ServerFrame)> {
        self.inboxes
            .get_mut(&c)
            .map(|b| std::mem::take(&mut b.frames))
            .unwrap_or_default()
    }

    pub fn has_frames(&self, c: ClientRef) -> bool {
        self.inboxes.get(&c).is_some_and(|b| !b.frames.is_empty())
    }

    /// When `c`'s socket closed, if it has.
    pub fn closed_at(&self, c: ClientRef) -> Option<u64> {
        self.inboxes.get(&c).and_then(|b| b.closed_at)
    }

    /// Registers `name` for `c` and waits for the gateway's answer.
    pub fn register(&mut self, c: ClientRef, name: &str) -> Result<usize, ServerFrame> {
        self.send_frame(c, ClientFrame::Register { name: name.to_owned() });
        let deadline = self.now() + OP_LIMIT_MS;
        let mut answer = None;
        self.run_while(deadline, |w| {
            for (_, f) in w.take_frames(c) {
                if matches!(f, ServerFrame::Registered { .. } | ServerFrame::Error { .. }) {
                    answer = Some(f);
                }
            }
            answer.is_some() || w.closed_at(c).is_some()
        });
        match answer {
            Some(ServerFrame::Registered { replicas }) => Ok(replicas),
            Some(other) => Err(other),
            None => Err(ServerFrame::error(
                crate::signaling::ErrorCode::RegisterFailed,
                "gateway went away",
            )),
        }
    }
}

fn op_of(ev: &NodeEvent) -> Option<OpId> {
    match ev {
        NodeEvent::FindNode { op, .. }
        | NodeEvent::FindValue { op, .. }
        | NodeEvent::Store { op, .. }
        | NodeEvent::Join { op, .. }
        | NodeEvent::Ping { op, .. }
        | NodeEvent::Response { op, .. } => Some(*op),
        NodeEvent::Request(_) => None,
    }
}
