//! The experiments: lookup scaling, connection setup, session survival and
//! recovery from churn.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use super::metrics::{MetricsReport, TrialRecord};
use super::world::{ClientRef, SimWorld, WorldError};
use crate::id::NodeId;
use crate::node::{ConfigError, NodeConfig};
use crate::protocol::{SessionId, SignalKind};
use crate::signaling::{ClientFrame, GatewayConfig, ServerFrame};
use crate::transport::{SimConfigError, SimNetworkConfig};

/// Give up on a connection attempt after this long.
pub const CONNECT_TIMEOUT_MS: u64 = 10_000;
/// Keepalive period, which is also the window a keepalive must arrive in.
pub const KEEPALIVE_MS: u64 = 5_000;
/// Size of each synthetic offer, answer and candidate.
pub const BLOB_LEN: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    LookupScaling,
    ConnectionTime,
    FailureRate,
    SessionSurvival,
    ChurnRecovery,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::LookupScaling,
        Scenario::ConnectionTime,
        Scenario::FailureRate,
        Scenario::SessionSurvival,
        Scenario::ChurnRecovery,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scenario::LookupScaling => "lookup_scaling",
            Scenario::ConnectionTime => "connection_time",
            Scenario::FailureRate => "failure_rate",
            Scenario::SessionSurvival => "session_survival",
            Scenario::ChurnRecovery => "churn_recovery",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub n_nodes: usize,
    pub k: usize,
    pub alpha: usize,
    pub net: SimNetworkConfig,
    pub trials: u32,
    /// Fraction of nodes killed: during each session, or before recovery.
    pub churn_rate: f64,
    pub session_duration_secs: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::ConnectionTime,
            n_nodes: 64,
            k: 20,
            alpha: 3,
            net: SimNetworkConfig::default(),
            trials: 100,
            churn_rate: 0.0,
            session_duration_secs: 120,
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("churn rate {0} is outside [0, 1)")]
    ChurnRate(f64),
    #[error("need at least {need} nodes, got {got}")]
    TooFewNodes { need: usize, got: usize },
    #[error("session duration must be at least one keepalive period")]
    ShortSession,
    #[error(transparent)]
    Node(#[from] ConfigError),
    #[error(transparent)]
    Net(#[from] SimConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("setup failed: {0}")]
    Setup(String),
}

impl ExperimentConfig {
    pub fn node_config(&self) -> NodeConfig {
        NodeConfig {
            k: self.k,
            alpha: self.alpha,
            ..NodeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::NoTrials);
        }
        if !(0.0..1.0).contains(&self.churn_rate) {
            return Err(HarnessError::ChurnRate(self.churn_rate));
        }
        // Two distinct gateways for the peers, or a node to look up from
        // and one to find.
        let need = 2;
        if self.n_nodes < need {
            return Err(HarnessError::TooFewNodes {
                need,
                got: self.n_nodes,
            });
        }
        if self.scenario == Scenario::SessionSurvival && self.session_duration_secs * 1000 < KEEPALIVE_MS {
            return Err(HarnessError::ShortSession);
        }
        self.node_config().validate()?;
        self.net.validate()?;
        Ok(())
    }
}

fn trial_rng(seed: u64, trial: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (u64::from(trial) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Builds the network and runs `cfg.trials` trials of the scenario.
/// Deterministic in `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport, HarnessError> {
    cfg.validate()?;
    let mut world = SimWorld::bootstrap(
        cfg.n_nodes,
        cfg.net.clone(),
        cfg.node_config(),
        GatewayConfig::default(),
    )?;
    let mut report = MetricsReport::new(cfg.scenario, cfg.n_nodes, cfg.net.seed);
    match cfg.scenario {
        Scenario::LookupScaling => {
            for trial in 0..cfg.trials {
                report.records.push(lookup_trial(&mut world, cfg, trial)?);
            }
        }
        Scenario::ConnectionTime | Scenario::FailureRate => {
            for trial in 0..cfg.trials {
                let mut w = world.clone();
                let (a, b) = setup_pair(&mut w, cfg, trial)?;
                let sent = w.net().datagrams_sent();
                let out = measure_connection(&mut w, &a, &b, trial);
                report.records.push(TrialRecord {
                    trial,
                    success: out.established,
                    connection_time_ms: Some(out.elapsed_ms),
                    hops: Some(out.hops),
                    survival_ms: None,
                    messages: w.net().datagrams_sent() - sent,
                });
            }
        }
        Scenario::SessionSurvival => {
            for trial in 0..cfg.trials {
                let mut w = world.clone();
                let (a, b) = setup_pair(&mut w, cfg, trial)?;
                let sent = w.net().datagrams_sent();
                let out = measure_connection(&mut w, &a, &b, trial);
                let survival = if out.established {
                    let churn = Churn::Random { rate: cfg.churn_rate };
                    let s = measure_session_survival(&mut w, &a, &b, cfg.session_duration_secs * 1000, churn, trial);
                    Some(s.survival_ms)
                } else {
                    Some(0)
                };
                report.records.push(TrialRecord {
                    trial,
                    success: out.established,
                    connection_time_ms: Some(out.elapsed_ms),
                    hops: Some(out.hops),
                    survival_ms: survival,
                    messages: w.net().datagrams_sent() - sent,
                });
            }
        }
        Scenario::ChurnRecovery => {
            let mut rng = trial_rng(cfg.net.seed, u32::MAX);
            let mut nodes: Vec<usize> = (0..world.len()).collect();
            nodes.shuffle(&mut rng);
            let victims = (cfg.churn_rate * cfg.n_nodes as f64).round() as usize;
            // Keep at least two nodes so there is someone to look up.
            for &i in nodes.iter().take(victims.min(cfg.n_nodes - 2)) {
                world.kill(i);
            }
            world.refresh_cycle();
            for trial in 0..cfg.trials {
                report.records.push(recovery_trial(&mut world, cfg, trial)?);
            }
        }
    }
    Ok(report)
}

fn lookup_trial(world: &mut SimWorld, cfg: &ExperimentConfig, trial: u32) -> Result<TrialRecord, HarnessError> {
    let mut rng = trial_rng(cfg.net.seed, trial);
    let live: Vec<usize> = world.alive().collect();
    let origin = *live.choose(&mut rng).expect("validated non-empty");
    let target = NodeId::random(&mut rng);
    let sent = world.net().datagrams_sent();
    let result = world.find_node(origin, target)?;
    let messages = world.net().datagrams_sent() - sent;
    let expected = world.closest_live(&target, cfg.k, Some(origin));
    Ok(match result {
        Ok(out) => TrialRecord {
            trial,
            success: out.contacts == expected,
            connection_time_ms: None,
            hops: Some(out.rounds),
            survival_ms: None,
            messages,
        },
        Err(_) => TrialRecord {
            trial,
            success: false,
            connection_time_ms: None,
            hops: None,
            survival_ms: None,
            messages,
        },
    })
}

fn recovery_trial(world: &mut SimWorld, cfg: &ExperimentConfig, trial: u32) -> Result<TrialRecord, HarnessError> {
    let mut rng = trial_rng(cfg.net.seed, trial);
    let live: Vec<usize> = world.alive().collect();
    let pair: Vec<usize> = live.choose_multiple(&mut rng, 2).copied().collect();
    let (origin, wanted) = (pair[0], pair[1]);
    let target = world.node(wanted).id();
    let sent = world.net().datagrams_sent();
    let result = world.find_node(origin, target)?;
    let messages = world.net().datagrams_sent() - sent;
    Ok(TrialRecord {
        trial,
        success: result.as_ref().is_ok_and(|o| o.contacts.iter().any(|c| c.id == target)),
        connection_time_ms: None,
        hops: result.ok().map(|o| o.rounds),
        survival_ms: None,
        messages,
    })
}

/// One end of a signaling session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Peer {
    pub client: ClientRef,
    pub name: String,
}

/// Attaches two peers to distinct random gateways and registers them with
/// loss switched off; the trial's own network randomness starts afterwards.
pub fn setup_pair(world: &mut SimWorld, cfg: &ExperimentConfig, trial: u32) -> Result<(Peer, Peer), HarnessError> {
    let mut rng = trial_rng(cfg.net.seed, trial);
    let live: Vec<usize> = world.alive().collect();
    let pair: Vec<usize> = live.choose_multiple(&mut rng, 2).copied().collect();
    let loss = world.net().config().loss_rate;
    world.net_mut().set_loss_rate(0.0)?;
    let mut peers = Vec::new();
    for (node, role) in pair.into_iter().zip(["a", "b"]) {
        let name = format!("peer-{role}-{trial}");
        let client = world.attach(node);
        world
            .register(client, &name)
            .map_err(|f| HarnessError::Setup(format!("registering {name}: {}", f.to_json())))?;
        peers.push(Peer { client, name });
    }
    world.net_mut().set_loss_rate(loss)?;
    world
        .net_mut()
        .reseed(cfg.net.seed ^ u64::from(trial).wrapping_mul(0xd134_2543_de82_ef95));
    let b = peers.pop().expect("two peers");
    let a = peers.pop().expect("two peers");
    Ok((a, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectionOutcome {
    pub established: bool,
    pub elapsed_ms: u64,
    /// Lookup rounds the caller's gateway spent resolving the callee.
    pub hops: u32,
    /// Datagrams sent during the exchange.
    pub messages: u64,
}

/// A fixed-size synthetic SDP or candidate blob naming its trial.
pub fn synthetic_blob(trial: u32, from: &str, kind: SignalKind, seq: u64) -> String {
    let mut blob = format!("trial={trial};from={from};kind={kind:?};seq={seq};");
    let fill = b"abcdefghijklmnopqrstuvwxyz0123456789";
    let mut i = 0;
    while blob.len() < BLOB_LEN {
        blob.push(fill[i % fill.len()] as char);
        i += 1;
    }
    blob
}

fn handshake(trial: u32, from: &str, first: SignalKind) -> Vec<(SignalKind, u64, String)> {
    [first, SignalKind::Candidate, SignalKind::Candidate]
        .into_iter()
        .zip(0u64..)
        .map(|(kind, seq)| (kind, seq, synthetic_blob(trial, from, kind, seq)))
        .collect()
}

#[derive(Debug, Default)]
struct Side {
    session: Option<SessionId>,
    got: Vec<(SignalKind, u64, String)>,
    failed: bool,
}

/// Runs offer, answer and two candidates each way between `a` (caller)
/// and `b`. Established once each side holds the other's full set,
/// byte for byte.
pub fn measure_connection(world: &mut SimWorld, a: &Peer, b: &Peer, trial: u32) -> ConnectionOutcome {
    let start = world.now();
    let sent = world.net().datagrams_sent();
    let rounds = world.gateway(a.client.node).stats().resolve_rounds;
    let from_a = handshake(trial, &a.name, SignalKind::Offer);
    let from_b = handshake(trial, &b.name, SignalKind::Answer);
    let mut sa = Side::default();
    let mut sb = Side::default();

    world.send_frame(a.client, ClientFrame::Connect { to: b.name.clone() });
    let established = world.run_while(start + CONNECT_TIMEOUT_MS, |w| {
        pump(w, a.client, &mut sa, &from_a, None);
        pump(w, b.client, &mut sb, &from_b, Some(SignalKind::Offer));
        if sa.failed || sb.failed {
            return true;
        }
        sa.got == from_b && sb.got == from_a
    }) && !sa.failed
        && !sb.failed
        && sa.got == from_b
        && sb.got == from_a;

    ConnectionOutcome {
        established,
        elapsed_ms: world.now() - start,
        hops: (world.gateway(a.client.node).stats().resolve_rounds - rounds) as u32,
        messages: world.net().datagrams_sent() - sent,
    }
}

/// Reacts to one side's frames. The caller sends its set on the session
/// frame; the callee answers once the offer arrives.
fn pump(
    w: &mut SimWorld,
    c: ClientRef,
    side: &mut Side,
    mine: &[(SignalKind, u64, String)],
    trigger: Option<SignalKind>,
) {
    if w.closed_at(c).is_some() {
        side.failed = true;
    }
    for (_, frame) in w.take_frames(c) {
        match frame {
            ServerFrame::Session { session, .. } => {
                side.session = Some(session);
                if trigger.is_none() {
                    send_all(w, c, session, mine);
                }
            }
            ServerFrame::Signal {
                session,
                kind,
                seq,
                blob,
            } if Some(session) == side.session => {
                if trigger == Some(kind) && seq == 0 {
                    send_all(w, c, session, mine);
                }
                side.got.push((kind, seq, blob));
            }
            ServerFrame::Error { .. } => side.failed = true,
            _ => {}
        }
    }
}

fn send_all(w: &mut SimWorld, c: ClientRef, session: SessionId, items: &[(SignalKind, u64, String)]) {
    for (kind, seq, blob) in items {
        w.send_frame(
            c,
            ClientFrame::Signal {
                session,
                kind: *kind,
                seq: *seq,
                blob: blob.clone(),
            },
        );
    }
}

/// Who dies while a session runs.
#[derive(Debug, Clone, PartialEq)]
pub enum Churn {
    /// Kills this fraction of nodes other than the two gateways, at random
    /// times during the session.
    Random { rate: f64 },
    /// Kills specific nodes at offsets (ms) into the session.
    Scheduled(Vec<(u64, usize)>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurvivalOutcome {
    /// Time from the start until the first of two consecutive missed
    /// keepalive windows, or the full duration.
    pub survival_ms: u64,
    /// Per side (caller, callee): offset at which that side saw its second
    /// consecutive missed window.
    pub detected_ms: [Option<u64>; 2],
}

/// Exchanges a keepalive each way every [`KEEPALIVE_MS`] over an
/// established session. A window is missed on a side when the other
/// side's keepalive for it has not arrived by the window's end.
pub fn measure_session_survival(
    world: &mut SimWorld,
    a: &Peer,
    b: &Peer,
    duration_ms: u64,
    churn: Churn,
    trial: u32,
) -> SurvivalOutcome {
    let start = world.now();
    let mut kills: Vec<(u64, usize)> = match churn {
        Churn::Scheduled(v) => v,
        Churn::Random { rate } => {
            let mut rng = trial_rng(world.net().config().seed, trial ^ 0x00c0_ffee);
            let mut pool: Vec<usize> = world
                .alive()
                .filter(|&i| i != a.client.node && i != b.client.node)
                .collect();
            pool.shuffle(&mut rng);
            let n = (rate * world.len() as f64).round() as usize;
            pool.into_iter()
                .take(n)
                .map(|i| (rng.gen_range(0..duration_ms), i))
                .collect()
        }
    };
    kills.sort_unstable();
    let mut kills = kills.into_iter().peekable();

    let peers = [a, b];
    let sessions = [session_of(world, a), session_of(world, b)];
    // Each side continues its sequence after the handshake's three envelopes.
    let mut next_seq = [3u64, 3u64];
    let mut arrived: [BTreeMap<u64, u64>; 2] = [BTreeMap::new(), BTreeMap::new()];
    let mut missed_run = [0u32; 2];
    let mut detected: [Option<u64>; 2] = [None, None];
    let mut survival = None;
    let windows = duration_ms / KEEPALIVE_MS;

    for win in 0..windows {
        let t0 = start + win * KEEPALIVE_MS;
        let t1 = t0 + KEEPALIVE_MS;
        for side in 0..2 {
            if let Some(sid) = sessions[side] {
                world.send_frame(
                    peers[side].client,
                    ClientFrame::Signal {
                        session: sid,
                        kind: SignalKind::Candidate,
                        seq: next_seq[side],
                        blob: format!("keepalive {win}"),
                    },
                );
                next_seq[side] += 1;
            }
        }
        while let Some(&(at, victim)) = kills.peek() {
            if start + at >= t1 {
                break;
            }
            world.run_until(start + at);
            world.kill(victim);
            kills.next();
        }
        world.run_until(t1 - 1);
        for side in 0..2 {
            for (time, frame) in world.take_frames(peers[side].client) {
                if let ServerFrame::Signal { blob, .. } = frame {
                    if let Some(w) = blob.strip_prefix("keepalive ").and_then(|n| n.parse::<u64>().ok()) {
                        arrived[side].entry(w).or_insert(time);
                    }
                }
            }
            let open = world.closed_at(peers[side].client).is_none();
            let ok = open && arrived[side].get(&win).is_some_and(|&t| t < t1);
            missed_run[side] = if ok { 0 } else { missed_run[side] + 1 };
            if missed_run[side] >= 2 && detected[side].is_none() {
                detected[side] = Some(t1 - 1 - start);
                survival.get_or_insert((win - 1) * KEEPALIVE_MS);
            }
        }
        world.run_until(t1);
    }
    SurvivalOutcome {
        survival_ms: survival.unwrap_or(duration_ms),
        detected_ms: detected,
    }
}

fn session_of(world: &SimWorld, p: &Peer) -> Option<SessionId> {
    world
        .gateway(p.client.node)
        .sessions_of(p.client.client)
        .into_iter()
        .next()
}

/// Problems with a finished report, judged against the bounds each
/// scenario promises. Empty means the report is sound.
pub fn check_invariants(cfg: &ExperimentConfig, report: &MetricsReport) -> Vec<String> {
    let mut bad = Vec::new();
    let agg = report.aggregates();
    let loss = cfg.net.loss_rate;
    if agg.trials != cfg.trials as usize {
        bad.push(format!("expected {} trials, got {}", cfg.trials, agg.trials));
    }
    match cfg.scenario {
        Scenario::LookupScaling => {
            let log2n = (cfg.n_nodes as f64).log2();
            if let Some(h) = agg.hops {
                if h.median as f64 > log2n.ceil() + 2.0 {
                    bad.push(format!("median hops {} > ceil(log2 n) + 2", h.median));
                }
                if h.max as f64 > 2.0 * log2n.max(1.0) {
                    bad.push(format!("max hops {} > 2 log2 n", h.max));
                }
            }
            if loss == 0.0 && agg.failures > 0 {
                bad.push(format!("{} lookups differ from the global closest set", agg.failures));
            }
        }
        Scenario::ConnectionTime | Scenario::FailureRate => {
            if loss == 0.0 && agg.failures > 0 {
                bad.push(format!("failure rate {} with no loss", agg.failure_rate));
            }
            if loss <= 0.05 && agg.failure_rate > 0.05 {
                bad.push(format!("failure rate {} above 0.05", agg.failure_rate));
            }
            if loss >= 1.0 && agg.failures != agg.trials {
                bad.push(format!("failure rate {} with total loss", agg.failure_rate));
            }
            let floor = 2 * cfg.net.latency_min_ms;
            for r in report.records.iter().filter(|r| r.success) {
                if r.connection_time_ms.is_some_and(|t| t < floor) {
                    bad.push(format!("trial {} connected faster than {floor} ms", r.trial));
                }
            }
        }
        Scenario::SessionSurvival => {
            // Relaying never touches nodes other than the two gateways.
            let full = cfg.session_duration_secs * 1000 / KEEPALIVE_MS * KEEPALIVE_MS;
            if loss == 0.0 {
                for r in &report.records {
                    if !r.success || r.survival_ms != Some(full) {
                        bad.push(format!("trial {} survived {:?} of {full} ms", r.trial, r.survival_ms));
                    }
                }
            }
        }
        Scenario::ChurnRecovery => {
            if loss == 0.0 && agg.failures > 0 {
                bad.push(format!(
                    "{} of {} lookups failed after recovery",
                    agg.failures, agg.trials
                ));
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(scenario: Scenario, n: usize, trials: u32) -> ExperimentConfig {
        ExperimentConfig {
            scenario,
            n_nodes: n,
            trials,
            net: SimNetworkConfig {
                seed: 11,
                ..SimNetworkConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn validation() {
        let mut c = cfg(Scenario::ConnectionTime, 8, 0);
        assert!(matches!(c.validate(), Err(HarnessError::NoTrials)));
        c.trials = 1;
        c.churn_rate = 1.0;
        assert!(matches!(c.validate(), Err(HarnessError::ChurnRate(_))));
        c.churn_rate = 0.0;
        c.n_nodes = 1;
        assert!(matches!(c.validate(), Err(HarnessError::TooFewNodes { .. })));
        assert_eq!("churn_recovery".parse::<Scenario>(), Ok(Scenario::ChurnRecovery));
        assert!("nope".parse::<Scenario>().is_err());
    }

    #[test]
    fn blobs_are_one_kib_and_tagged() {
        let b = synthetic_blob(42, "peer-a-42", SignalKind::Offer, 0);
        assert_eq!(b.len(), BLOB_LEN);
        assert!(b.starts_with("trial=42;"));
    }

    #[test]
    fn connections_without_loss() {
        let c = cfg(Scenario::ConnectionTime, 16, 5);
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.failures(), 0, "{:?}", r.records);
        for t in &r.records {
            assert!(t.connection_time_ms.unwrap() >= 20);
            assert!(t.messages > 0);
        }
        assert!(check_invariants(&c, &r).is_empty());
    }

    #[test]
    fn reports_are_reproducible() {
        let c = cfg(Scenario::ConnectionTime, 12, 3);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn unregistered_callee_fails_fast() {
        let c = cfg(Scenario::ConnectionTime, 12, 1);
        let mut w = SimWorld::bootstrap(12, c.net.clone(), c.node_config(), GatewayConfig::default()).unwrap();
        let (a, mut b) = setup_pair(&mut w, &c, 0).unwrap();
        b.name = "nobody".into();
        let out = measure_connection(&mut w, &a, &b, 0);
        assert!(!out.established);
        assert!(out.elapsed_ms < CONNECT_TIMEOUT_MS);
    }

    #[test]
    fn total_loss_fails_every_trial() {
        let mut c = cfg(Scenario::FailureRate, 12, 3);
        c.net.loss_rate = 1.0;
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.failure_rate(), 1.0);
        assert!(check_invariants(&c, &r).is_empty());
    }

    #[test]
    fn session_survives_without_churn() {
        let mut c = cfg(Scenario::SessionSurvival, 12, 2);
        c.session_duration_secs = 30;
        let r = run_experiment(&c).unwrap();
        for t in &r.records {
            assert_eq!(t.survival_ms, Some(30_000));
        }
    }

    #[test]
    fn gateway_kill_is_detected() {
        let c = cfg(Scenario::SessionSurvival, 12, 1);
        let mut w = SimWorld::bootstrap(12, c.net.clone(), c.node_config(), GatewayConfig::default()).unwrap();
        let (a, b) = setup_pair(&mut w, &c, 0).unwrap();
        assert!(measure_connection(&mut w, &a, &b, 0).established);
        let kill_at = 12_345;
        let out = measure_session_survival(
            &mut w,
            &a,
            &b,
            60_000,
            Churn::Scheduled(vec![(kill_at, a.client.node)]),
            0,
        );
        assert!(out.survival_ms < 60_000);
        let seen = out.detected_ms[1].expect("callee notices");
        assert!(seen / KEEPALIVE_MS - kill_at / KEEPALIVE_MS <= 2, "{out:?}");
    }

    #[test]
    fn lookups_and_recovery() {
        let c = cfg(Scenario::LookupScaling, 40, 10);
        let r = run_experiment(&c).unwrap();
        assert!(check_invariants(&c, &r).is_empty(), "{:?}", r.records);

        let mut c = cfg(Scenario::ChurnRecovery, 40, 10);
        c.churn_rate = 0.2;
        let r = run_experiment(&c).unwrap();
        assert_eq!(r.failures(), 0);
    }
}
