//! The DHT node state machine.
//!
//! A [`Node`] does no I/O and reads no clock. A driver hands it inbound
//! datagrams through [`Node::handle_datagram`], calls [`Node::poll`] once
//! [`Node::next_deadline`] has passed, and drains [`Node::take_outbox`] and
//! [`Node::take_events`] after each call. Times are milliseconds.

mod lookup;
mod storage;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::SocketAddr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::id::{Key, NodeId, ID_BITS};
use crate::protocol::{
    self, Body, Match, PendingEntry, PendingTable, RpcId, RpcMessage, StoreBody, ValueRecord, MAX_VALUE,
};
use crate::routing::{Contact, RoutingTable, UpdateOutcome, DEFAULT_K};

use lookup::{Lookup, LookupKind, Step};
pub use storage::{Storage, StoredRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeConfig {
    pub k: usize,
    pub alpha: usize,
    pub rpc_timeout_ms: u64,
    /// Resends after the first attempt before a request counts as failed.
    pub rpc_retries: u32,
    pub record_ttl_default_secs: u64,
    pub republish_interval_secs: u64,
    pub refresh_interval_secs: u64,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            k: DEFAULT_K,
            alpha: 3,
            rpc_timeout_ms: 1000,
            rpc_retries: 1,
            record_ttl_default_secs: 3600,
            republish_interval_secs: 1800,
            refresh_interval_secs: 3600,
        }
    }
}

impl NodeConfig {
    /// Defaults for nodes on a real network, where round trips are slower.
    pub fn real() -> Self {
        NodeConfig {
            rpc_timeout_ms: 2000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::ZeroK);
        }
        if self.alpha == 0 || self.alpha > self.k {
            return Err(ConfigError::BadAlpha {
                alpha: self.alpha,
                k: self.k,
            });
        }
        if self.rpc_timeout_ms == 0 {
            return Err(ConfigError::ZeroInterval("rpc_timeout"));
        }
        if self.record_ttl_default_secs == 0 {
            return Err(ConfigError::ZeroInterval("record_ttl_default"));
        }
        if self.republish_interval_secs == 0 {
            return Err(ConfigError::ZeroInterval("republish_interval"));
        }
        if self.refresh_interval_secs == 0 {
            return Err(ConfigError::ZeroInterval("refresh_interval"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("k must be positive")]
    ZeroK,
    #[error("alpha must lie in 1..=k (alpha={alpha}, k={k})")]
    BadAlpha { alpha: usize, k: usize },
    #[error("{0} must be positive")]
    ZeroInterval(&'static str),
}

/// Handle for an operation started on a node; its result arrives as a
/// [`NodeEvent`] carrying the same id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OpId(pub u64);

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "op{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupOutcome {
    pub target: NodeId,
    /// Up to `k` responsive contacts, closest first.
    pub contacts: Vec<Contact>,
    pub rounds: u32,
    pub queried: u32,
    pub failed: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LookupError {
    #[error("routing table is empty")]
    NotJoined,
    #[error("every queried contact timed out")]
    AllQueriesFailed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoundValue {
    pub key: Key,
    pub records: Vec<ValueRecord>,
    /// Node that answered with the value. Equal to the local contact when the
    /// value was already held locally.
    pub from: Contact,
    pub rounds: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FindValueError {
    #[error("value not found")]
    NotFound,
    #[error("routing table is empty")]
    NotJoined,
    #[error("every queried contact timed out")]
    AllQueriesFailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("routing table is empty")]
    NotJoined,
    #[error("no holder acknowledged the store")]
    StoreFailed,
    #[error("value must be 1..={max} bytes, got {0}", max = MAX_VALUE)]
    BadValueSize(usize),
    #[error("ttl must be positive")]
    InvalidTtl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JoinReport {
    pub contacts_learned: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum JoinError {
    #[error("bootstrap node did not answer")]
    BootstrapUnresponsive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RpcFailure {
    #[error("request timed out")]
    Timeout,
}

/// A request the node does not answer itself (SIGNAL_RELAY). The application
/// replies through [`Node::respond`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InboundRequest {
    pub from: Contact,
    pub rpc_id: RpcId,
    pub body: Body,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NodeEvent {
    FindNode {
        op: OpId,
        result: Result<LookupOutcome, LookupError>,
    },
    FindValue {
        op: OpId,
        result: Result<FoundValue, FindValueError>,
    },
    /// Number of holders that acknowledged, the local copy included.
    Store {
        op: OpId,
        result: Result<usize, StoreError>,
    },
    Join {
        op: OpId,
        result: Result<JoinReport, JoinError>,
    },
    Ping {
        op: OpId,
        result: Result<Contact, RpcFailure>,
    },
    Response {
        op: OpId,
        result: Result<RpcMessage, RpcFailure>,
    },
    Request(InboundRequest),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outgoing {
    pub to: SocketAddr,
    pub datagram: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub datagrams_in: u64,
    pub datagrams_out: u64,
    pub malformed: u64,
    pub unsolicited: u64,
    pub retries: u64,
    pub timeouts: u64,
    pub lookups: u64,
    pub refreshes: u64,
    pub republishes: u64,
}

#[derive(Debug, Clone)]
enum Purpose {
    Lookup(OpId),
    Store(OpId),
    JoinPing(OpId),
    Ping(OpId),
    Request(OpId),
    Eviction {
        bucket: usize,
        eldest: Contact,
        candidate: Contact,
    },
    Cache,
}

#[derive(Debug, Clone)]
struct Outstanding {
    purpose: Purpose,
    to: SocketAddr,
    datagram: Vec<u8>,
    attempts_left: u32,
}

#[derive(Debug, Clone)]
enum Then {
    Report,
    Store {
        value: Vec<u8>,
        ttl_secs: u64,
        report: bool,
    },
    JoinSelf(OpId),
    JoinRefresh(OpId),
    Refresh,
}

#[derive(Debug, Clone)]
struct LookupOp {
    lookup: Lookup,
    then: Then,
}

#[derive(Debug, Clone)]
struct StoreOp {
    acks: usize,
    awaiting: usize,
    report: bool,
}

#[derive(Debug, Clone)]
struct Publication {
    value: Vec<u8>,
    ttl_secs: u64,
    interval_ms: u64,
    next_at: u64,
}

#[derive(Debug, Clone)]
pub struct Node {
    config: NodeConfig,
    contact: Contact,
    table: RoutingTable,
    storage: Storage,
    rng: ChaCha8Rng,
    pending: PendingTable<Outstanding>,
    next_op: u64,
    lookups: BTreeMap<OpId, LookupOp>,
    stores: BTreeMap<OpId, StoreOp>,
    /// Join operations in the refresh phase, with lookups still running.
    joins: BTreeMap<OpId, usize>,
    evicting: BTreeSet<usize>,
    publications: BTreeMap<Key, Publication>,
    outbox: Vec<Outgoing>,
    events: Vec<NodeEvent>,
    stats: NodeStats,
}

impl Node {
    pub fn new(id: NodeId, addr: SocketAddr, config: NodeConfig, seed: u64, now: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Node {
            table: RoutingTable::with_clock(id, config.k, now),
            config,
            contact: Contact::new(id, addr),
            storage: Storage::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            pending: PendingTable::new(),
            next_op: 0,
            lookups: BTreeMap::new(),
            stores: BTreeMap::new(),
            joins: BTreeMap::new(),
            evicting: BTreeSet::new(),
            publications: BTreeMap::new(),
            outbox: Vec::new(),
            events: Vec::new(),
            stats: NodeStats::default(),
        })
    }

    pub fn id(&self) -> NodeId {
        self.contact.id
    }

    pub fn addr(&self) -> SocketAddr {
        self.contact.addr
    }

    pub fn contact(&self) -> Contact {
        self.contact
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn table(&self) -> &RoutingTable {
        &self.table
    }

    pub fn storage(&self) -> &Storage {
        &self.storage
    }

    pub fn stats(&self) -> &NodeStats {
        &self.stats
    }

    pub fn is_publishing(&self, key: &Key) -> bool {
        self.publications.contains_key(key)
    }

    /// Requests waiting for an answer.
    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }

    pub fn take_outbox(&mut self) -> Vec<Outgoing> {
        std::mem::take(&mut self.outbox)
    }

    pub fn take_events(&mut self) -> Vec<NodeEvent> {
        std::mem::take(&mut self.events)
    }

    /// Earliest time at which [`Node::poll`] has work to do.
    pub fn next_deadline(&self) -> Option<u64> {
        let refresh = self.table.next_idle_at(self.config.refresh_interval_secs * 1000);
        let republish = self.publications.values().map(|p| p.next_at).min();
        [self.pending.next_deadline(), refresh, republish]
            .into_iter()
            .flatten()
            .min()
    }

    fn fresh_op(&mut self) -> OpId {
        self.next_op += 1;
        OpId(self.next_op)
    }

    // ---- inbound ------------------------------------------------------

    pub fn handle_datagram(&mut self, now: u64, from: SocketAddr, datagram: &[u8]) {
        self.stats.datagrams_in += 1;
        match protocol::decode(datagram) {
            Ok(msg) => self.handle_rpc(now, from, msg),
            Err(e) => {
                self.stats.malformed += 1;
                tracing::debug!(%from, error = %e, "dropping datagram");
            }
        }
    }

    /// Processes one decoded message. `from` is the address it arrived from;
    /// that address, not the one the sender claims, is what gets recorded.
    pub fn handle_rpc(&mut self, now: u64, from: SocketAddr, msg: RpcMessage) {
        if msg.sender.id == self.contact.id {
            self.stats.malformed += 1;
            return;
        }
        let sender = Contact::new(msg.sender.id, from);
        self.learn(now, sender);
        if msg.kind().is_response() {
            match self.pending.match_response(&msg) {
                Match::Matched(entry) => self.on_response(now, sender, entry.ctx, msg),
                Match::Unsolicited => self.stats.unsolicited += 1,
            }
        } else {
            self.on_request(now, sender, msg);
        }
    }

    fn learn(&mut self, now: u64, contact: Contact) {
        let Ok(outcome) = self.table.update(contact, now) else {
            return;
        };
        if let UpdateOutcome::BucketFullPingEldest { bucket, eldest } = outcome {
            if self.evicting.insert(bucket) {
                let purpose = Purpose::Eviction {
                    bucket,
                    eldest,
                    candidate: contact,
                };
                self.send_request(
                    now,
                    eldest.addr,
                    Some(eldest.id),
                    Body::Ping,
                    purpose,
                    self.config.rpc_retries,
                );
            }
        }
    }

    fn on_request(&mut self, now: u64, sender: Contact, msg: RpcMessage) {
        let reply = match msg.body {
            Body::Ping => Body::Pong,
            Body::Store(StoreBody { key, value, ttl }) => {
                self.storage.put(key, sender.id, value, ttl.saturating_mul(1000), now);
                Body::StoreOk { key }
            }
            Body::FindNode { target } => Body::Nodes {
                contacts: self.table.closest(&target, self.config.k),
            },
            Body::FindValue { target } => {
                let mut records = self.storage.get(&target, now);
                if records.is_empty() {
                    Body::Nodes {
                        contacts: self.table.closest(&target, self.config.k),
                    }
                } else {
                    // Newest versions first, dropping old ones until the
                    // reply fits in a datagram.
                    records.sort_by_key(|r| std::cmp::Reverse(r.ttl));
                    records.truncate(protocol::MAX_RECORDS);
                    loop {
                        let body = Body::Value {
                            key: target,
                            records: records.clone(),
                        };
                        let probe = RpcMessage::new(msg.rpc_id, self.contact, body);
                        if protocol::encode(&probe).is_ok() || records.len() <= 1 {
                            break probe.body;
                        }
                        records.pop();
                    }
                }
            }
            body @ Body::SignalRelay(_) => {
                self.events.push(NodeEvent::Request(InboundRequest {
                    from: sender,
                    rpc_id: msg.rpc_id,
                    body,
                }));
                return;
            }
            _ => return,
        };
        self.send_reply(sender.addr, msg.rpc_id, reply);
    }

    /// Answers a request surfaced as [`NodeEvent::Request`].
    pub fn respond(&mut self, request: &InboundRequest, body: Body) {
        self.send_reply(request.from.addr, request.rpc_id, body);
    }

    fn send_reply(&mut self, to: SocketAddr, rpc_id: RpcId, body: Body) {
        let msg = RpcMessage::new(rpc_id, self.contact, body);
        match protocol::encode(&msg) {
            Ok(datagram) => {
                self.stats.datagrams_out += 1;
                self.outbox.push(Outgoing { to, datagram });
            }
            Err(e) => tracing::warn!(error = %e, "cannot encode reply"),
        }
    }

    fn send_request(
        &mut self,
        now: u64,
        to: SocketAddr,
        expect_from: Option<NodeId>,
        body: Body,
        purpose: Purpose,
        retries: u32,
    ) -> bool {
        let rpc_id = self.pending.fresh_id(&mut self.rng);
        let request = body.kind();
        let msg = RpcMessage::new(rpc_id, self.contact, body);
        let datagram = match protocol::encode(&msg) {
            Ok(d) => d,
            Err(e) => {
                tracing::warn!(error = %e, "cannot encode request");
                return false;
            }
        };
        self.stats.datagrams_out += 1;
        self.outbox.push(Outgoing {
            to,
            datagram: datagram.clone(),
        });
        self.pending.insert(
            rpc_id,
            PendingEntry {
                ctx: Outstanding {
                    purpose,
                    to,
                    datagram,
                    attempts_left: retries,
                },
                request,
                expect_from,
                deadline: now + self.config.rpc_timeout_ms,
            },
        );
        true
    }

    fn on_response(&mut self, now: u64, sender: Contact, out: Outstanding, msg: RpcMessage) {
        match out.purpose {
            Purpose::Lookup(op) => {
                let Some(lop) = self.lookups.get_mut(&op) else {
                    return;
                };
                match msg.body {
                    Body::Value { records, .. } if lop.lookup.kind == LookupKind::Value && !records.is_empty() => {
                        lop.lookup.on_value(&sender, records);
                        self.finish_lookup(now, op);
                    }
                    Body::Nodes { contacts } => {
                        lop.lookup.on_nodes(&sender, contacts);
                        self.advance_lookup(now, op);
                    }
                    _ => {
                        lop.lookup.on_nodes(&sender, Vec::new());
                        self.advance_lookup(now, op);
                    }
                }
            }
            Purpose::Store(op) => {
                if let Some(s) = self.stores.get_mut(&op) {
                    s.acks += 1;
                    s.awaiting -= 1;
                    self.maybe_finish_store(op);
                }
            }
            Purpose::JoinPing(op) => {
                let target = self.contact.id;
                self.start_lookup(now, op, target, LookupKind::Node, Then::JoinSelf(op));
            }
            Purpose::Ping(op) => self.events.push(NodeEvent::Ping { op, result: Ok(sender) }),
            Purpose::Request(op) => self.events.push(NodeEvent::Response { op, result: Ok(msg) }),
            Purpose::Eviction {
                bucket,
                eldest,
                candidate,
            } => {
                self.table.resolve_eviction(&eldest, true, candidate, now);
                self.evicting.remove(&bucket);
            }
            Purpose::Cache => {}
        }
    }

    // ---- timers -------------------------------------------------------

    /// Handles retries, timeouts, republishing and bucket refresh due at or
    /// before `now`.
    pub fn poll(&mut self, now: u64) {
        for rpc_id in self.pending.due(now) {
            let entry = self.pending.get_mut(&rpc_id).expect("due entry is pending");
            if entry.ctx.attempts_left > 0 {
                entry.ctx.attempts_left -= 1;
                entry.deadline = now + self.config.rpc_timeout_ms;
                let resend = Outgoing {
                    to: entry.ctx.to,
                    datagram: entry.ctx.datagram.clone(),
                };
                self.stats.retries += 1;
                self.stats.datagrams_out += 1;
                self.outbox.push(resend);
                continue;
            }
            let entry = self.pending.remove(&rpc_id).expect("due entry is pending");
            self.stats.timeouts += 1;
            if let Some(id) = entry.expect_from {
                self.table.mark_stale(&id);
            }
            self.on_failure(now, entry.ctx.purpose, entry.expect_from);
        }

        let due: Vec<Key> = self
            .publications
            .iter()
            .filter(|(_, p)| p.next_at <= now)
            .map(|(k, _)| *k)
            .collect();
        for key in due {
            let p = self.publications.get_mut(&key).expect("due publication exists");
            p.next_at = now + p.interval_ms;
            let then = Then::Store {
                value: p.value.clone(),
                ttl_secs: p.ttl_secs,
                report: false,
            };
            self.stats.republishes += 1;
            let op = self.fresh_op();
            self.start_lookup(now, op, key, LookupKind::Node, then);
        }

        let refresh_ms = self.config.refresh_interval_secs * 1000;
        if self.table.next_idle_at(refresh_ms).is_some_and(|t| t <= now) {
            self.refresh_buckets(now);
            self.storage.purge(now);
        }
    }

    fn on_failure(&mut self, now: u64, purpose: Purpose, who: Option<NodeId>) {
        match purpose {
            Purpose::Lookup(op) => {
                if let (Some(lop), Some(id)) = (self.lookups.get_mut(&op), who) {
                    lop.lookup.on_failure(&id);
                    self.advance_lookup(now, op);
                }
            }
            Purpose::Store(op) => {
                if let Some(s) = self.stores.get_mut(&op) {
                    s.awaiting -= 1;
                    self.maybe_finish_store(op);
                }
            }
            Purpose::JoinPing(op) => self.events.push(NodeEvent::Join {
                op,
                result: Err(JoinError::BootstrapUnresponsive),
            }),
            Purpose::Ping(op) => self.events.push(NodeEvent::Ping {
                op,
                result: Err(RpcFailure::Timeout),
            }),
            Purpose::Request(op) => self.events.push(NodeEvent::Response {
                op,
                result: Err(RpcFailure::Timeout),
            }),
            Purpose::Eviction {
                bucket,
                eldest,
                candidate,
            } => {
                self.table.resolve_eviction(&eldest, false, candidate, now);
                self.evicting.remove(&bucket);
            }
            Purpose::Cache => {}
        }
    }

    // ---- lookups ------------------------------------------------------

    pub fn find_node(&mut self, now: u64, target: NodeId) -> OpId {
        let op = self.fresh_op();
        self.start_lookup(now, op, target, LookupKind::Node, Then::Report);
        op
    }

    /// Looks `key` up, answering from local storage when possible.
    pub fn find_value(&mut self, now: u64, key: Key) -> OpId {
        let op = self.fresh_op();
        let local = self.storage.get(&key, now);
        if !local.is_empty() {
            self.events.push(NodeEvent::FindValue {
                op,
                result: Ok(FoundValue {
                    key,
                    records: local,
                    from: self.contact,
                    rounds: 0,
                }),
            });
            return op;
        }
        self.start_lookup(now, op, key, LookupKind::Value, Then::Report);
        op
    }

    fn start_lookup(&mut self, now: u64, op: OpId, target: NodeId, kind: LookupKind, then: Then) {
        self.stats.lookups += 1;
        self.table.touch_target(&target, now);
        let seeds = self.table.closest(&target, self.config.k);
        let lookup = Lookup::new(target, kind, self.contact.id, seeds, self.config.k, self.config.alpha);
        self.lookups.insert(op, LookupOp { lookup, then });
        if self.lookups[&op].lookup.is_empty() {
            self.finish_lookup(now, op);
        } else {
            self.advance_lookup(now, op);
        }
    }

    fn advance_lookup(&mut self, now: u64, op: OpId) {
        let Some(lop) = self.lookups.get_mut(&op) else {
            return;
        };
        if lop.lookup.in_flight() > 0 {
            return;
        }
        let target = lop.lookup.target;
        let kind = lop.lookup.kind;
        match lop.lookup.next_round() {
            Step::Query(contacts) => {
                for c in contacts {
                    let body = match kind {
                        LookupKind::Node => Body::FindNode { target },
                        LookupKind::Value => Body::FindValue { target },
                    };
                    if !self.send_request(
                        now,
                        c.addr,
                        Some(c.id),
                        body,
                        Purpose::Lookup(op),
                        self.config.rpc_retries,
                    ) {
                        if let Some(lop) = self.lookups.get_mut(&op) {
                            lop.lookup.on_failure(&c.id);
                        }
                    }
                }
                // Only reachable if every send failed to encode.
                if self.lookups.get(&op).is_some_and(|l| l.lookup.in_flight() == 0) {
                    self.finish_lookup(now, op);
                }
            }
            Step::Done => self.finish_lookup(now, op),
        }
    }

    fn finish_lookup(&mut self, now: u64, op: OpId) {
        let Some(LookupOp { lookup, then }) = self.lookups.remove(&op) else {
            return;
        };
        let failure = if lookup.is_empty() {
            Some(LookupError::NotJoined)
        } else if !lookup.any_responded() {
            Some(LookupError::AllQueriesFailed)
        } else {
            None
        };
        match then {
            Then::Report => match lookup.kind {
                LookupKind::Node => {
                    let result = match failure {
                        Some(e) => Err(e),
                        None => Ok(LookupOutcome {
                            target: lookup.target,
                            contacts: lookup.responded(),
                            rounds: lookup.rounds,
                            queried: lookup.queried,
                            failed: lookup.failures,
                        }),
                    };
                    self.events.push(NodeEvent::FindNode { op, result });
                }
                LookupKind::Value => {
                    let result = if let Some((from, records)) = lookup.found.clone() {
                        self.cache_copy(now, &lookup, &records);
                        Ok(FoundValue {
                            key: lookup.target,
                            records,
                            from,
                            rounds: lookup.rounds,
                        })
                    } else {
                        Err(match failure {
                            Some(LookupError::NotJoined) => FindValueError::NotJoined,
                            Some(LookupError::AllQueriesFailed) => FindValueError::AllQueriesFailed,
                            None => FindValueError::NotFound,
                        })
                    };
                    self.events.push(NodeEvent::FindValue { op, result });
                }
            },
            Then::Store {
                value,
                ttl_secs,
                report,
            } => {
                if failure == Some(LookupError::NotJoined) {
                    if report {
                        self.events.push(NodeEvent::Store {
                            op,
                            result: Err(StoreError::NotJoined),
                        });
                    }
                    return;
                }
                self.send_stores(now, op, &lookup, value, ttl_secs, report);
            }
            Then::JoinSelf(join) => {
                let first = self.table.lowest_occupied().map_or(ID_BITS, |b| b + 1);
                if first >= ID_BITS {
                    self.finish_join(join);
                    return;
                }
                self.joins.insert(join, ID_BITS - first);
                for bucket in first..ID_BITS {
                    let target = self.contact.id.random_in_bucket(bucket, &mut self.rng);
                    let sub = self.fresh_op();
                    self.start_lookup(now, sub, target, LookupKind::Node, Then::JoinRefresh(join));
                }
            }
            Then::JoinRefresh(join) => {
                if let Some(left) = self.joins.get_mut(&join) {
                    *left -= 1;
                    if *left == 0 {
                        self.finish_join(join);
                    }
                }
            }
            Then::Refresh => {}
        }
    }

    fn finish_join(&mut self, join: OpId) {
        self.joins.remove(&join);
        self.events.push(NodeEvent::Join {
            op: join,
            result: Ok(JoinReport {
                contacts_learned: self.table.len(),
            }),
        });
    }

    /// Single cache write after a successful FIND_VALUE: the newest record
    /// goes to the closest responder that did not have it.
    fn cache_copy(&mut self, now: u64, lookup: &Lookup, records: &[ValueRecord]) {
        let Some(target) = lookup.closest_without_value() else {
            return;
        };
        let Some(newest) = records.iter().max_by_key(|r| r.ttl) else {
            return;
        };
        if newest.value.is_empty() || newest.value.len() > MAX_VALUE {
            return;
        }
        let body = Body::Store(StoreBody {
            key: lookup.target,
            value: newest.value.clone(),
            ttl: newest.ttl,
        });
        self.send_request(now, target.addr, Some(target.id), body, Purpose::Cache, 0);
    }

    // ---- storage ------------------------------------------------------

    /// Stores `value` under `key` at the `k` closest nodes and keeps
    /// republishing it until [`Node::unpublish`].
    /// The republish interval is the configured one, shortened to half the
    /// ttl for short-lived records.
    pub fn store(&mut self, now: u64, key: Key, value: Vec<u8>, ttl_secs: u64) -> Result<OpId, StoreError> {
        let interval_secs = self.config.republish_interval_secs.min(ttl_secs / 2);
        self.store_every(now, key, value, ttl_secs, interval_secs)
    }

    /// Like [`Node::store`] with an explicit republish interval.
    pub fn store_every(
        &mut self,
        now: u64,
        key: Key,
        value: Vec<u8>,
        ttl_secs: u64,
        interval_secs: u64,
    ) -> Result<OpId, StoreError> {
        Self::check_value(&value, ttl_secs)?;
        let interval_secs = interval_secs.max(1);
        self.publications.insert(
            key,
            Publication {
                value: value.clone(),
                ttl_secs,
                interval_ms: interval_secs * 1000,
                next_at: now + interval_secs * 1000,
            },
        );
        Ok(self.start_store(now, key, value, ttl_secs))
    }

    /// Stores once without republishing.
    pub fn store_once(&mut self, now: u64, key: Key, value: Vec<u8>, ttl_secs: u64) -> Result<OpId, StoreError> {
        Self::check_value(&value, ttl_secs)?;
        Ok(self.start_store(now, key, value, ttl_secs))
    }

    /// Stops republishing `key`. Copies already stored expire on their own.
    pub fn unpublish(&mut self, key: &Key) -> bool {
        self.publications.remove(key).is_some()
    }

    fn check_value(value: &[u8], ttl_secs: u64) -> Result<(), StoreError> {
        if value.is_empty() || value.len() > MAX_VALUE {
            return Err(StoreError::BadValueSize(value.len()));
        }
        if ttl_secs == 0 {
            return Err(StoreError::InvalidTtl);
        }
        Ok(())
    }

    fn start_store(&mut self, now: u64, key: Key, value: Vec<u8>, ttl_secs: u64) -> OpId {
        let op = self.fresh_op();
        let then = Then::Store {
            value,
            ttl_secs,
            report: true,
        };
        self.start_lookup(now, op, key, LookupKind::Node, then);
        op
    }

    fn send_stores(&mut self, now: u64, op: OpId, lookup: &Lookup, value: Vec<u8>, ttl_secs: u64, report: bool) {
        let key = lookup.target;
        let mut holders = lookup.responded();
        holders.push(self.contact);
        holders.sort_by_key(|c| c.id.distance(&key));
        holders.truncate(self.config.k);
        let mut state = StoreOp {
            acks: 0,
            awaiting: 0,
            report,
        };
        for h in holders {
            if h.id == self.contact.id {
                self.storage
                    .put(key, self.contact.id, value.clone(), ttl_secs * 1000, now);
                state.acks += 1;
                continue;
            }
            let body = Body::Store(StoreBody {
                key,
                value: value.clone(),
                ttl: ttl_secs,
            });
            if self.send_request(
                now,
                h.addr,
                Some(h.id),
                body,
                Purpose::Store(op),
                self.config.rpc_retries,
            ) {
                state.awaiting += 1;
            }
        }
        self.stores.insert(op, state);
        self.maybe_finish_store(op);
    }

    fn maybe_finish_store(&mut self, op: OpId) {
        if self.stores.get(&op).is_some_and(|s| s.awaiting == 0) {
            let s = self.stores.remove(&op).expect("checked above");
            if s.report {
                let result = if s.acks == 0 {
                    Err(StoreError::StoreFailed)
                } else {
                    Ok(s.acks)
                };
                self.events.push(NodeEvent::Store { op, result });
            }
        }
    }

    // ---- membership ---------------------------------------------------

    /// Joins through the node listening at `bootstrap`: ping it, look up our
    /// own id, then refresh every bucket farther out than our closest
    /// neighbour.
    pub fn join(&mut self, now: u64, bootstrap: SocketAddr) -> OpId {
        let op = self.fresh_op();
        self.send_request(
            now,
            bootstrap,
            None,
            Body::Ping,
            Purpose::JoinPing(op),
            self.config.rpc_retries,
        );
        op
    }

    pub fn ping(&mut self, now: u64, addr: SocketAddr) -> OpId {
        let op = self.fresh_op();
        self.send_request(now, addr, None, Body::Ping, Purpose::Ping(op), self.config.rpc_retries);
        op
    }

    /// Sends an application request (SIGNAL_RELAY) to `to`, trying up to
    /// `attempts` times in total.
    pub fn request(&mut self, now: u64, to: Contact, body: Body, attempts: u32) -> OpId {
        let op = self.fresh_op();
        let retries = attempts.max(1) - 1;
        if !self.send_request(now, to.addr, Some(to.id), body, Purpose::Request(op), retries) {
            self.events.push(NodeEvent::Response {
                op,
                result: Err(RpcFailure::Timeout),
            });
        }
        op
    }

    /// Refreshes buckets idle for a full refresh interval. Returns their
    /// indices.
    pub fn refresh_buckets(&mut self, now: u64) -> Vec<usize> {
        let idle = self.table.idle_buckets(now, self.config.refresh_interval_secs * 1000);
        self.refresh(now, &idle);
        idle
    }

    /// Refreshes every eligible bucket regardless of recent activity.
    pub fn refresh_all(&mut self, now: u64) -> Vec<usize> {
        let all: Vec<usize> = self.table.refreshable().collect();
        self.refresh(now, &all);
        all
    }

    fn refresh(&mut self, now: u64, buckets: &[usize]) {
        for &b in buckets {
            self.stats.refreshes += 1;
            let target = self.contact.id.random_in_bucket(b, &mut self.rng);
            let op = self.fresh_op();
            self.start_lookup(now, op, target, LookupKind::Node, Then::Refresh);
        }
    }
}
