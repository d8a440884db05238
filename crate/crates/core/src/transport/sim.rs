use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::net::{Ipv4Addr, SocketAddr};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{Transport, TransportError};
use crate::protocol::MAX_DATAGRAM;

/// Port every simulated endpoint listens on.
const SIM_PORT: u16 = 7000;

#[derive(Debug, Clone, PartialEq)]
pub struct SimNetworkConfig {
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    pub loss_rate: f64,
    pub seed: u64,
    /// Endpoints in different sets cannot reach each other. Endpoints not in
    /// any set reach everyone.
    pub partitions: Vec<Vec<SocketAddr>>,
}

impl Default for SimNetworkConfig {
    fn default() -> Self {
        SimNetworkConfig {
            latency_min_ms: 10,
            latency_max_ms: 50,
            loss_rate: 0.0,
            seed: 0,
            partitions: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimConfigError {
    #[error("latency_min ({0}) exceeds latency_max ({1})")]
    LatencyOrder(u64, u64),
    #[error("loss rate {0} outside [0, 1]")]
    LossRate(f64),
}

impl SimNetworkConfig {
    pub fn validate(&self) -> Result<(), SimConfigError> {
        if self.latency_min_ms > self.latency_max_ms {
            return Err(SimConfigError::LatencyOrder(self.latency_min_ms, self.latency_max_ms));
        }
        if !(0.0..=1.0).contains(&self.loss_rate) {
            return Err(SimConfigError::LossRate(self.loss_rate));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub time: u64,
    pub sent_at: u64,
    pub seq: u64,
    pub src: SocketAddr,
    pub dst: SocketAddr,
    pub datagram: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Queued(Delivery);

impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.0.time, self.0.seq).cmp(&(other.0.time, other.0.seq))
    }
}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// One delivered datagram, labelled by whoever enabled tracing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time_ms: u64,
    pub src: SocketAddr,
    pub dst: SocketAddr,
    pub label: String,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        format!("{},{},{},{}", self.time_ms, self.src, self.dst, self.label)
    }
}

type Labeler = fn(&[u8]) -> String;

/// Discrete-event network over virtual milliseconds. Events are ordered by
/// `(time, send sequence)`, so simultaneous deliveries keep send order.
#[derive(Debug, Clone)]
pub struct SimNetwork {
    cfg: SimNetworkConfig,
    now: u64,
    rng: ChaCha8Rng,
    queue: BinaryHeap<Reverse<Queued>>,
    seq: u64,
    bound: BTreeSet<SocketAddr>,
    next_handle: u32,
    trace: Option<(Labeler, Vec<TraceRecord>)>,
    sent: u64,
    dropped: u64,
}

impl SimNetwork {
    pub fn new(cfg: SimNetworkConfig) -> Result<Self, SimConfigError> {
        cfg.validate()?;
        Ok(SimNetwork {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            now: 0,
            queue: BinaryHeap::new(),
            seq: 0,
            bound: BTreeSet::new(),
            next_handle: 0,
            trace: None,
            sent: 0,
            dropped: 0,
        })
    }

    pub fn config(&self) -> &SimNetworkConfig {
        &self.cfg
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    /// The endpoint address for simulation handle `handle`.
    pub fn endpoint(handle: u32) -> SocketAddr {
        let h = handle + 1;
        let ip = Ipv4Addr::new(10, (h >> 16) as u8, (h >> 8) as u8, h as u8);
        SocketAddr::from((ip, SIM_PORT))
    }

    /// Allocates and binds a fresh endpoint.
    pub fn bind(&mut self) -> SocketAddr {
        let addr = Self::endpoint(self.next_handle);
        self.next_handle += 1;
        self.bound.insert(addr);
        addr
    }

    /// Churn: all traffic to and from `addr` is silently dropped from now on.
    pub fn unbind(&mut self, addr: SocketAddr) {
        self.bound.remove(&addr);
    }

    pub fn is_bound(&self, addr: &SocketAddr) -> bool {
        self.bound.contains(addr)
    }

    pub fn set_loss_rate(&mut self, loss_rate: f64) -> Result<(), SimConfigError> {
        if !(0.0..=1.0).contains(&loss_rate) {
            return Err(SimConfigError::LossRate(loss_rate));
        }
        self.cfg.loss_rate = loss_rate;
        Ok(())
    }

    /// Restarts the loss and latency stream. Used to give cloned networks
    /// independent futures.
    pub fn reseed(&mut self, seed: u64) {
        self.cfg.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn set_partitions(&mut self, partitions: Vec<Vec<SocketAddr>>) {
        self.cfg.partitions = partitions;
    }

    pub fn enable_trace(&mut self, labeler: Labeler) {
        self.trace = Some((labeler, Vec::new()));
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_ref().map(|(_, t)| t.as_slice()).unwrap_or(&[])
    }

    pub fn datagrams_sent(&self) -> u64 {
        self.sent
    }

    pub fn datagrams_dropped(&self) -> u64 {
        self.dropped
    }

    fn partitioned(&self, a: &SocketAddr, b: &SocketAddr) -> bool {
        let side = |x: &SocketAddr| self.cfg.partitions.iter().position(|set| set.contains(x));
        matches!((side(a), side(b)), (Some(i), Some(j)) if i != j)
    }

    /// Queues `datagram` for delivery after a uniform latency draw, unless
    /// the loss draw, a partition, or an unbound endpoint drops it.
    pub fn send(&mut self, from: SocketAddr, to: SocketAddr, datagram: &[u8]) -> Result<(), TransportError> {
        if datagram.len() > MAX_DATAGRAM {
            return Err(TransportError::Oversize(datagram.len()));
        }
        self.sent += 1;
        // Both draws happen for every send so the random stream depends only
        // on the send schedule.
        let lost = self.rng.gen_bool(self.cfg.loss_rate);
        let latency = self.rng.gen_range(self.cfg.latency_min_ms..=self.cfg.latency_max_ms);
        if lost || !self.is_bound(&from) || !self.is_bound(&to) || self.partitioned(&from, &to) {
            self.dropped += 1;
            return Ok(());
        }
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Queued(Delivery {
            time: self.now + latency,
            sent_at: self.now,
            seq,
            src: from,
            dst: to,
            datagram: datagram.to_vec(),
        })));
        Ok(())
    }

    pub fn next_event_time(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(q)| q.0.time)
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Pops the next delivery at or before `until`, moving the clock to it.
    /// Deliveries to endpoints unbound while in flight are discarded.
    pub fn pop_next(&mut self, until: u64) -> Option<Delivery> {
        loop {
            let time = self.next_event_time()?;
            if time > until {
                return None;
            }
            let Reverse(Queued(d)) = self.queue.pop().expect("peeked");
            self.now = self.now.max(d.time);
            if !self.is_bound(&d.dst) {
                self.dropped += 1;
                continue;
            }
            if let Some((label, trace)) = self.trace.as_mut() {
                trace.push(TraceRecord {
                    time_ms: d.time,
                    src: d.src,
                    dst: d.dst,
                    label: label(&d.datagram),
                });
            }
            return Some(d);
        }
    }

    /// Moves the clock forward without delivering anything.
    pub fn advance_to(&mut self, t: u64) {
        self.now = self.now.max(t);
    }

    /// Delivers everything due up to `until`, then sets the clock to `until`.
    pub fn advance_clock(&mut self, until: u64) -> Vec<Delivery> {
        let mut out = Vec::new();
        while let Some(d) = self.pop_next(until) {
            out.push(d);
        }
        self.advance_to(until);
        out
    }
}

impl Transport for SimNetwork {
    fn send(&mut self, from: SocketAddr, to: SocketAddr, datagram: &[u8]) -> Result<(), TransportError> {
        SimNetwork::send(self, from, to, datagram)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(min: u64, max: u64, loss: f64, seed: u64) -> SimNetwork {
        SimNetwork::new(SimNetworkConfig {
            latency_min_ms: min,
            latency_max_ms: max,
            loss_rate: loss,
            seed,
            partitions: vec![],
        })
        .unwrap()
    }

    #[test]
    fn fixed_latency_delivers_exactly() {
        let mut n = net(10, 10, 0.0, 1);
        let a = n.bind();
        let b = n.bind();
        n.send(a, b, b"hi").unwrap();
        let out = n.advance_clock(100);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].time, 10);
        assert_eq!(out[0].datagram, b"hi");
        assert_eq!(n.now(), 100);
    }

    #[test]
    fn total_loss_delivers_nothing() {
        let mut n = net(10, 50, 1.0, 1);
        let a = n.bind();
        let b = n.bind();
        for _ in 0..100 {
            n.send(a, b, b"x").unwrap();
        }
        assert!(n.advance_clock(10_000).is_empty());
        assert_eq!(n.datagrams_dropped(), 100);
    }

    #[test]
    fn idle_advance_sets_clock() {
        let mut n = net(10, 50, 0.0, 1);
        assert!(n.advance_clock(1234).is_empty());
        assert_eq!(n.now(), 1234);
    }

    #[test]
    fn same_time_keeps_send_order() {
        let mut n = net(5, 5, 0.0, 1);
        let a = n.bind();
        let b = n.bind();
        for i in 0..10u8 {
            n.send(a, b, &[i]).unwrap();
        }
        let got: Vec<u8> = n.advance_clock(5).iter().map(|d| d.datagram[0]).collect();
        assert_eq!(got, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn latency_bounds_hold_over_ten_thousand_sends() {
        let mut n = net(10, 50, 0.0, 42);
        let eps: Vec<_> = (0..8).map(|_| n.bind()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut delivered = Vec::new();
        for step in 0..10_000u64 {
            let a = eps[rng.gen_range(0..eps.len())];
            let b = eps[rng.gen_range(0..eps.len())];
            n.send(a, b, &step.to_be_bytes()).unwrap();
            if step % 10 == 0 {
                let t = n.now() + rng.gen_range(0..20);
                delivered.extend(n.advance_clock(t));
            }
        }
        delivered.extend(n.advance_clock(u64::MAX / 2));
        assert_eq!(delivered.len(), 10_000);
        let mut last = 0;
        for d in &delivered {
            assert!(d.time >= d.sent_at + 10 && d.time <= d.sent_at + 50);
            assert!(d.time >= last, "clock went backward");
            last = d.time;
        }
    }

    fn run_trace(seed: u64) -> Vec<(u64, SocketAddr, SocketAddr, Vec<u8>)> {
        let mut n = net(1, 40, 0.3, seed);
        let eps: Vec<_> = (0..5).map(|_| n.bind()).collect();
        let mut out = Vec::new();
        for i in 0..500u32 {
            n.send(eps[i as usize % 5], eps[(i as usize * 3 + 1) % 5], &i.to_le_bytes())
                .unwrap();
            if i % 7 == 0 {
                let t = n.now() + 3;
                out.extend(
                    n.advance_clock(t)
                        .into_iter()
                        .map(|d| (d.time, d.src, d.dst, d.datagram)),
                );
            }
        }
        out.extend(
            n.advance_clock(1_000_000)
                .into_iter()
                .map(|d| (d.time, d.src, d.dst, d.datagram)),
        );
        out
    }

    #[test]
    fn same_seed_same_trace() {
        assert_eq!(run_trace(99), run_trace(99));
        assert_ne!(run_trace(99), run_trace(100));
    }

    #[test]
    fn unbound_and_partitioned_endpoints_drop() {
        let mut n = net(1, 1, 0.0, 0);
        let a = n.bind();
        let b = n.bind();
        let c = n.bind();
        n.set_partitions(vec![vec![a], vec![b]]);
        n.send(a, b, b"no").unwrap();
        n.send(a, c, b"yes").unwrap();
        n.send(c, b, b"yes").unwrap();
        n.unbind(c);
        let out = n.advance_clock(10);
        // a->b is partitioned, a->c is in flight to an endpoint that went away.
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].src, out[0].dst), (c, b));
        assert!(n.config().validate().is_ok());
    }

    #[test]
    fn rejects_bad_config_and_oversize() {
        assert!(SimNetwork::new(SimNetworkConfig {
            latency_min_ms: 5,
            latency_max_ms: 1,
            ..Default::default()
        })
        .is_err());
        assert!(SimNetwork::new(SimNetworkConfig {
            loss_rate: 1.5,
            ..Default::default()
        })
        .is_err());
        let mut n = net(1, 1, 0.0, 0);
        let a = n.bind();
        assert!(matches!(
            n.send(a, a, &vec![0; MAX_DATAGRAM + 1]),
            Err(TransportError::Oversize(_))
        ));
    }
}
