//! Acceptance suite: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kadrtc::harness::{
    check_invariants, measure_connection, measure_session_survival, run_experiment, setup_pair, Churn,
    ExperimentConfig, Scenario, SimWorld, KEEPALIVE_MS,
};
use kadrtc::id::NodeId;
use kadrtc::node::{FindValueError, NodeConfig, NodeEvent};
use kadrtc::protocol::{
    self, Body, RelayFailReason, RpcId, RpcMessage, SessionId, SignalEnvelope, SignalKind, SignalRelayBody, StoreBody,
    ValueRecord,
};
use kadrtc::routing::{Contact, RoutingTable, UpdateOutcome};
use kadrtc::signaling::GatewayConfig;
use kadrtc::transport::SimNetworkConfig;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn net(seed: u64, loss: f64) -> SimNetworkConfig {
    SimNetworkConfig {
        latency_min_ms: 10,
        latency_max_ms: 50,
        loss_rate: loss,
        seed,
        partitions: Vec::new(),
    }
}

fn big(bytes: &[u8]) -> BigUint {
    BigUint::from_bytes_be(bytes)
}

// ---- XOR metric -------------------------------------------------------------

fn xor_metric() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 10_000;
    for _ in 0..n {
        let a = NodeId::random(&mut rng);
        let b = NodeId::random(&mut rng);
        let c = NodeId::random(&mut rng);
        let ab = big(a.distance(&b).as_bytes());
        let bc = big(b.distance(&c).as_bytes());
        let ac = big(a.distance(&c).as_bytes());
        ensure!(a.distance(&a).is_zero(), "d(a,a) != 0 for {a}");
        ensure!(a == b || ab > BigUint::default(), "d(a,b) = 0 for distinct ids");
        ensure!(a.distance(&b) == b.distance(&a), "asymmetric for {a} {b}");
        ensure!(ac <= &ab + &bc, "triangle fails for {a} {b} {c}");
        // The byte-wise xor, computed here, is the only id at that distance.
        let d = a.distance(&b);
        let back: Vec<u8> = a.as_bytes().iter().zip(d.as_bytes()).map(|(x, y)| x ^ y).collect();
        ensure!(back == b.as_bytes(), "offset does not land on b");
        ensure!(c == b || a.distance(&c) != d, "two ids at one distance from {a}");
    }
    let took = started.elapsed();
    ensure!(took < Duration::from_secs(5), "took {took:?}");
    Ok(format!("{n} triples, {took:.2?}"))
}

// ---- closest-k ----------------------------------------------------------------

fn closest_k() -> Outcome {
    let mut notes = Vec::new();
    for n in [32usize, 128, 1024] {
        let started = Instant::now();
        let mut world = SimWorld::bootstrap(n, net(n as u64, 0.0), NodeConfig::default(), GatewayConfig::default())
            .map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(77 + n as u64);
        for t in 0..50 {
            let target = NodeId::random(&mut rng);
            let origin = rng.gen_range(0..n);

            let table = world.node(origin).table();
            let mut all: Vec<Contact> = table.contacts().collect();
            all.sort_by_key(|c| big(c.id.distance(&target).as_bytes()));
            all.truncate(20);
            ensure!(
                table.closest(&target, 20) == all,
                "n={n} target {t}: table closest differs from its contents"
            );

            let got = world
                .find_node(origin, target)
                .map_err(|e| e.to_string())?
                .map_err(|e| format!("n={n}: lookup failed: {e}"))?;
            let mut everyone: Vec<Contact> = (0..n)
                .filter(|&i| i != origin)
                .map(|i| world.node(i).contact())
                .collect();
            everyone.sort_by_key(|c| big(c.id.distance(&target).as_bytes()));
            everyone.truncate(20);
            ensure!(
                got.contacts == everyone,
                "n={n} target {t}: lookup differs from global closest set"
            );
        }
        let took = started.elapsed();
        ensure!(took < Duration::from_secs(60), "n={n} took {took:?}");
        notes.push(format!("n={n} {took:.1?}"));
    }
    Ok(notes.join(", "))
}

// ---- hop scaling ----------------------------------------------------------------

fn hop_scaling() -> Outcome {
    let mut medians = Vec::new();
    let mut notes = Vec::new();
    for n in [32usize, 256, 1024] {
        let cfg = ExperimentConfig {
            scenario: Scenario::LookupScaling,
            n_nodes: n,
            trials: 100,
            net: net(500 + n as u64, 0.0),
            ..ExperimentConfig::default()
        };
        let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
        let hops = report.aggregates().hops.ok_or("no hop data")?;
        let log2n = (n as f64).log2();
        ensure!(
            hops.median as f64 <= log2n.ceil() + 2.0,
            "n={n}: median {} rounds",
            hops.median
        );
        ensure!(hops.max as f64 <= 2.0 * log2n, "n={n}: max {} rounds", hops.max);
        ensure!(
            report.failures() == 0,
            "n={n}: {} lookups missed the closest set",
            report.failures()
        );
        let violations = check_invariants(&cfg, &report);
        ensure!(violations.is_empty(), "n={n}: {violations:?}");
        if n == 32 {
            let again = run_experiment(&cfg).map_err(|e| e.to_string())?;
            ensure!(again.to_csv() == report.to_csv(), "n={n}: rerun differs");
        }
        medians.push(hops.median);
        notes.push(format!("n={n} median {} max {}", hops.median, hops.max));
    }
    let growth = medians[2] as f64 - medians[0] as f64;
    ensure!(growth <= (1024f64 / 32.0).log2() + 2.0, "median grew by {growth}");
    Ok(notes.join(", "))
}

// ---- occupancy ----------------------------------------------------------------

fn occupancy() -> Outcome {
    let n = 1024;
    let world = SimWorld::bootstrap(n, net(4242, 0.0), NodeConfig::default(), GatewayConfig::default())
        .map_err(|e| e.to_string())?;
    let counts: Vec<usize> = (0..n).map(|i| world.node(i).table().occupied_buckets()).collect();
    let mean = counts.iter().sum::<usize>() as f64 / n as f64;
    let mut hist = std::collections::BTreeMap::new();
    for c in &counts {
        *hist.entry(*c).or_insert(0usize) += 1;
    }
    println!("  occupied buckets per node (n={n}, k=20): count -> nodes");
    for (c, nodes) in &hist {
        println!("    {c:>3} -> {nodes}");
    }
    let sizes: Vec<usize> = (0..n).map(|i| world.node(i).table().len()).collect();
    println!(
        "  contacts per node: min {} mean {:.1} max {}",
        sizes.iter().min().unwrap(),
        sizes.iter().sum::<usize>() as f64 / n as f64,
        sizes.iter().max().unwrap()
    );
    let bound = 4.0 * (n as f64).log2();
    ensure!(mean <= bound, "mean {mean:.2} > {bound}");
    Ok(format!("mean {mean:.2} occupied buckets (bound {bound})"))
}

// ---- eviction -------------------------------------------------------------------

fn eviction() -> Outcome {
    // Table level: a live eldest always wins.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let owner = NodeId::ZERO;
    let addr = |i: u32| std::net::SocketAddr::from(([10, 9, (i >> 8) as u8, i as u8], 7000));
    let mut table = RoutingTable::new(owner, 20);
    let members: Vec<Contact> = (0..20)
        .map(|i| Contact::new(owner.random_in_bucket(159, &mut rng), addr(i)))
        .collect();
    for (t, c) in members.iter().enumerate() {
        table.update(*c, t as u64).map_err(|e| e.to_string())?;
    }
    let ids = |t: &RoutingTable| {
        let mut v: Vec<NodeId> = t.bucket(159).entries().map(|e| e.contact.id).collect();
        v.sort();
        v
    };
    let before = ids(&table);
    for i in 0..1000u32 {
        let c = Contact::new(owner.random_in_bucket(159, &mut rng), addr(100 + i));
        match table.update(c, 100 + i as u64).map_err(|e| e.to_string())? {
            UpdateOutcome::BucketFullPingEldest { eldest, .. } => {
                table.resolve_eviction(&eldest, true, c, 100 + i as u64)
            }
            other => return Err(format!("full bucket answered {other:?}")),
        }
    }
    ensure!(ids(&table) == before, "membership changed under flood with live eldest");
    let cand = Contact::new(owner.random_in_bucket(159, &mut rng), addr(5000));
    let UpdateOutcome::BucketFullPingEldest { eldest, .. } = table.update(cand, 5000).map_err(|e| e.to_string())?
    else {
        return Err("bucket not full".into());
    };
    table.resolve_eviction(&eldest, false, cand, 5000);
    let mut expect: Vec<NodeId> = before
        .iter()
        .copied()
        .filter(|id| *id != eldest.id)
        .chain([cand.id])
        .collect();
    expect.sort();
    ensure!(ids(&table) == expect, "dead eldest not replaced by the candidate");

    // Network level: the owner pings its eldest over the simulated network.
    let mut world =
        SimWorld::new(net(6, 0.0), NodeConfig::default(), GatewayConfig::default()).map_err(|e| e.to_string())?;
    let owner = world.spawn_with_id(NodeId::ZERO).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let i = world
            .spawn_with_id(NodeId::ZERO.random_in_bucket(159, &mut rng))
            .map_err(|e| e.to_string())?;
        world
            .ping(i, owner)
            .map_err(|e| e.to_string())?
            .map_err(|e| format!("{e:?}"))?;
    }
    let before = ids(world.node(owner).table());
    ensure!(before.len() == 20, "bucket holds {} contacts", before.len());
    for _ in 0..1000 {
        let i = world
            .spawn_with_id(NodeId::ZERO.random_in_bucket(159, &mut rng))
            .map_err(|e| e.to_string())?;
        world
            .ping(i, owner)
            .map_err(|e| e.to_string())?
            .map_err(|e| format!("{e:?}"))?;
        world.settle();
    }
    ensure!(
        ids(world.node(owner).table()) == before,
        "network flood changed membership"
    );
    let eldest = world
        .node(owner)
        .table()
        .bucket(159)
        .entries()
        .next()
        .map(|e| e.contact)
        .ok_or("empty")?;
    let dead = world.index_of(&eldest.addr).ok_or("eldest unknown")?;
    world.kill(dead);
    let newcomer = world
        .spawn_with_id(NodeId::ZERO.random_in_bucket(159, &mut rng))
        .map_err(|e| e.to_string())?;
    world
        .ping(newcomer, owner)
        .map_err(|e| e.to_string())?
        .map_err(|e| format!("{e:?}"))?;
    world.settle();
    let mut expect: Vec<NodeId> = before
        .iter()
        .copied()
        .filter(|id| *id != eldest.id)
        .chain([world.node(newcomer).id()])
        .collect();
    expect.sort();
    ensure!(
        ids(world.node(owner).table()) == expect,
        "network: dead eldest not replaced"
    );
    Ok("1000-contact flood left membership unchanged; dead eldest replaced (table and network)".into())
}

// ---- store / retrieve -----------------------------------------------------------

fn store_retrieve() -> Outcome {
    let n = 100;
    let mut world = SimWorld::bootstrap(n, net(100, 0.0), NodeConfig::default(), GatewayConfig::default())
        .map_err(|e| e.to_string())?;
    let key = NodeId::from_name("acceptance/once");
    let acks = world
        .store(3, key, b"hello".to_vec(), 60, false)
        .map_err(|e| e.to_string())?
        .map_err(|e| e.to_string())?;
    ensure!(acks == 20, "ack count {acks}, want k=20");
    let found = world
        .find_value(50, key)
        .map_err(|e| e.to_string())?
        .map_err(|e| format!("get failed: {e}"))?;
    ensure!(
        found.records.iter().any(|r| r.value == b"hello"),
        "wrong value returned"
    );

    world.run_for(61_000);
    let gone = world.find_value(77, key).map_err(|e| e.to_string())?;
    ensure!(matches!(gone, Err(FindValueError::NotFound)), "after ttl: {gone:?}");

    let key = NodeId::from_name("acceptance/kept");
    world
        .store(5, key, b"kept".to_vec(), 60, true)
        .map_err(|e| e.to_string())?
        .map_err(|e| e.to_string())?;
    world.run_for(2 * 60_000 + 10_000);
    let kept = world
        .find_value(90, key)
        .map_err(|e| e.to_string())?
        .map_err(|e| format!("republished record lost: {e}"))?;
    ensure!(
        kept.records.iter().any(|r| r.value == b"kept"),
        "republished value wrong"
    );
    Ok("acks=20, expired after ttl, republished record alive at 2x ttl + 10 s".into())
}

// ---- signaling end to end -------------------------------------------------------

/// Probability that one envelope is never acknowledged: every attempt loses
/// its request or its reply. Enumerates each attempt's four outcomes.
fn envelope_failure(p: f64, attempts: u32) -> f64 {
    fn walk(p: f64, left: u32) -> f64 {
        if left == 0 {
            return 1.0;
        }
        let mut fail = 0.0;
        for req_lost in [false, true] {
            for reply_lost in [false, true] {
                let pr = if req_lost { p } else { 1.0 - p } * if reply_lost { p } else { 1.0 - p };
                if req_lost || reply_lost {
                    fail += pr * walk(p, left - 1);
                }
            }
        }
        fail
    }
    walk(p, attempts)
}

/// Failure probability of an exchange of `envelopes` independent relays:
/// sums every success/failure pattern with at least one failure.
fn exchange_failure(p: f64, attempts: u32, envelopes: u32) -> f64 {
    let f = envelope_failure(p, attempts);
    (0u32..1 << envelopes)
        .filter(|mask| *mask != 0)
        .map(|mask| f.powi(mask.count_ones() as i32) * (1.0 - f).powi((envelopes - mask.count_ones()) as i32))
        .sum()
}

fn signaling() -> Outcome {
    let base = ExperimentConfig {
        scenario: Scenario::ConnectionTime,
        n_nodes: 64,
        trials: 100,
        net: net(64, 0.0),
        ..ExperimentConfig::default()
    };
    let clean = run_experiment(&base).map_err(|e| e.to_string())?;
    ensure!(
        clean.failure_rate() == 0.0,
        "loss 0: failure rate {}",
        clean.failure_rate()
    );
    for r in &clean.records {
        let t = r.connection_time_ms.unwrap_or(0);
        ensure!(t >= 20, "trial {} connected in {t} ms", r.trial);
    }
    let rerun = run_experiment(&base).map_err(|e| e.to_string())?;
    ensure!(
        rerun.to_csv() == clean.to_csv() && rerun.to_json() == clean.to_json(),
        "rerun not byte-identical"
    );

    let expected = exchange_failure(0.05, GatewayConfig::default().relay_attempts, 6);
    ensure!(expected <= 0.05, "oracle predicts {expected}");
    let mut notes = vec![format!(
        "loss 0: 0/100 failed, median {} ms",
        clean.aggregates().connection_time_ms.map(|c| c.median).unwrap_or(0)
    )];
    for n in [64usize, 512] {
        let lossy = ExperimentConfig {
            scenario: Scenario::FailureRate,
            n_nodes: n,
            net: net(n as u64 + 1, 0.05),
            ..base.clone()
        };
        let report = run_experiment(&lossy).map_err(|e| e.to_string())?;
        let rate = report.failure_rate();
        ensure!(rate <= 0.05, "n={n} loss 0.05: failure rate {rate}");
        for r in report.records.iter().filter(|r| r.success) {
            let t = r.connection_time_ms.unwrap_or(0);
            ensure!(t >= 20, "n={n} trial {} connected in {t} ms", r.trial);
        }
        ensure!(check_invariants(&lossy, &report).is_empty(), "n={n}: invariants failed");
        notes.push(format!("n={n} loss 0.05: {rate} (expected {expected:.5})"));
    }
    Ok(notes.join("; "))
}

// ---- churn recovery -------------------------------------------------------------

fn churn_recovery() -> Outcome {
    let cfg = ExperimentConfig {
        scenario: Scenario::ChurnRecovery,
        n_nodes: 500,
        trials: 100,
        churn_rate: 0.2,
        net: net(500, 0.0),
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    ensure!(report.failures() == 0, "{} of 100 lookups failed", report.failures());
    Ok("100/100 lookups found their live target after killing 100 of 500 nodes".into())
}

// ---- session survival -----------------------------------------------------------

fn session_survival() -> Outcome {
    let cfg = ExperimentConfig {
        scenario: Scenario::SessionSurvival,
        n_nodes: 64,
        trials: 100,
        session_duration_secs: 120,
        net: net(9, 0.0),
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).map_err(|e| e.to_string())?;
    let full = report.records.iter().filter(|r| r.survival_ms == Some(120_000)).count();
    ensure!(full == 100, "{full}/100 sessions survived the full duration");

    let spared = ExperimentConfig {
        churn_rate: 0.2,
        trials: 20,
        ..cfg.clone()
    };
    let report = run_experiment(&spared).map_err(|e| e.to_string())?;
    ensure!(
        report.records.iter().all(|r| r.survival_ms == Some(120_000)),
        "churn sparing both gateways dropped a session"
    );

    let mut worst = 0;
    for trial in 0..10u32 {
        let mut world = SimWorld::bootstrap(
            32,
            net(900 + trial as u64, 0.0),
            NodeConfig::default(),
            GatewayConfig::default(),
        )
        .map_err(|e| e.to_string())?;
        let (a, b) = setup_pair(&mut world, &cfg, trial).map_err(|e| e.to_string())?;
        ensure!(
            measure_connection(&mut world, &a, &b, trial).established,
            "trial {trial}: no session"
        );
        let kill_at = 7_000 + 4_321 * u64::from(trial);
        let out = measure_session_survival(
            &mut world,
            &a,
            &b,
            120_000,
            Churn::Scheduled(vec![(kill_at, a.client.node)]),
            trial,
        );
        let seen = out.detected_ms[1].ok_or(format!("trial {trial}: drop never detected"))?;
        let windows = seen / KEEPALIVE_MS - kill_at / KEEPALIVE_MS;
        ensure!(windows <= 2, "trial {trial}: detected {windows} windows after the kill");
        ensure!(out.survival_ms < 120_000, "trial {trial}: survival reported full");
        worst = worst.max(windows);
    }

    let mut world = SimWorld::bootstrap(32, net(1000, 0.0), NodeConfig::default(), GatewayConfig::default())
        .map_err(|e| e.to_string())?;
    let (a, b) = setup_pair(&mut world, &cfg, 0).map_err(|e| e.to_string())?;
    ensure!(measure_connection(&mut world, &a, &b, 0).established, "no session");
    let both = Churn::Scheduled(vec![(30_000, a.client.node), (30_000, b.client.node)]);
    let out = measure_session_survival(&mut world, &a, &b, 120_000, both, 0);
    ensure!(out.survival_ms < 120_000, "both gateways killed but survival is full");

    Ok(format!(
        "100/100 full at churn 0; 20/20 full at churn 0.2; gateway kill detected within {worst} windows"
    ))
}

// ---- decode fuzz ----------------------------------------------------------------

fn samples(rng: &mut ChaCha8Rng) -> Vec<Vec<u8>> {
    let me = Contact::new(NodeId::from_name("fuzz"), "10.0.0.1:7000".parse().unwrap());
    let key = NodeId::from_name("k");
    let env = SignalEnvelope {
        blob: "v=0\r\no=- 1 1 IN IP4 0.0.0.0".into(),
        from_peer: "alice".into(),
        kind: SignalKind::Offer,
        seq: 0,
        session_id: SessionId::random(rng),
        to_peer: "bob".into(),
    };
    let bodies = vec![
        Body::Ping,
        Body::Pong,
        Body::Store(StoreBody {
            key,
            value: b"value".to_vec(),
            ttl: 60,
        }),
        Body::StoreOk { key },
        Body::FindNode { target: key },
        Body::FindValue { target: key },
        Body::Nodes {
            contacts: vec![me, Contact::new(key, "10.0.0.9:7001".parse().unwrap())],
        },
        Body::Value {
            key,
            records: vec![ValueRecord {
                publisher: me.id,
                value: b"v".to_vec(),
                ttl: 9,
            }],
        },
        Body::SignalRelay(SignalRelayBody {
            dest_peer_key: NodeId::from_name("bob"),
            envelope: env,
        }),
        Body::RelayOk,
        Body::RelayFail {
            reason: RelayFailReason::NoSuchPeer,
        },
    ];
    bodies
        .into_iter()
        .map(|b| protocol::encode(&RpcMessage::new(RpcId::random(rng), me, b)).expect("valid message"))
        .collect()
}

const TOKENS: &[u8] = b"{}[]\":,0123456789-eE.\\ntruefalsenull";

fn mutate(rng: &mut ChaCha8Rng, seed: &[u8]) -> Vec<u8> {
    let mut v = seed.to_vec();
    for _ in 0..rng.gen_range(1..8) {
        match rng.gen_range(0..5) {
            0 if !v.is_empty() => {
                let i = rng.gen_range(0..v.len());
                v[i] ^= 1 << rng.gen_range(0..8);
            }
            1 if !v.is_empty() => {
                let i = rng.gen_range(0..v.len());
                v[i] = TOKENS[rng.gen_range(0..TOKENS.len())];
            }
            2 => v.truncate(rng.gen_range(0..=v.len())),
            3 => {
                let i = rng.gen_range(0..=v.len());
                let j = rng.gen_range(i..=v.len());
                let dup = v[i..j].to_vec();
                v.splice(i..i, dup);
            }
            _ => {
                let i = rng.gen_range(0..=v.len());
                v.insert(i, rng.gen());
            }
        }
    }
    v
}

fn decode_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    let seeds = samples(&mut rng);
    for s in &seeds {
        ensure!(protocol::decode(s).is_ok(), "seed does not decode");
    }
    let mut node = kadrtc::node::Node::new(
        NodeId::from_name("target"),
        "10.0.0.2:7000".parse().unwrap(),
        NodeConfig::default(),
        1,
        0,
    )
    .map_err(|e| e.to_string())?;
    let from: std::net::SocketAddr = "10.0.0.3:7000".parse().unwrap();
    let total = 1_000_000u32;
    let mut decoded = 0u32;
    let mut crashes = 0u32;
    let quiet = panic::take_hook();
    panic::set_hook(Box::new(|_| {}));
    for i in 0..total {
        let dgram = if i % 2 == 0 {
            let mut buf = vec![0; rng.gen_range(0..600)];
            rng.fill_bytes(&mut buf);
            buf
        } else {
            let s = &seeds[rng.gen_range(0..seeds.len())];
            mutate(&mut rng, s)
        };
        match panic::catch_unwind(|| protocol::decode(&dgram).is_ok()) {
            Ok(true) => decoded += 1,
            Ok(false) => {}
            Err(_) => crashes += 1,
        }
        if i % 10 == 1 {
            let fed = panic::catch_unwind(AssertUnwindSafe(|| {
                node.handle_datagram(u64::from(i), from, &dgram);
                node.take_outbox();
                for ev in node.take_events() {
                    if let NodeEvent::Request(req) = ev {
                        node.respond(&req, Body::RelayOk);
                    }
                }
            }));
            if fed.is_err() {
                crashes += 1;
            }
        }
    }
    panic::set_hook(quiet);
    ensure!(crashes == 0, "{crashes} crashes");
    Ok(format!("{total} datagrams, 0 crashes ({decoded} still decoded)"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("xor metric suite", xor_metric),
        ("closest-k oracle equivalence", closest_k),
        ("hop-count scaling", hop_scaling),
        ("routing-table occupancy", occupancy),
        ("eviction policy", eviction),
        ("store/retrieve", store_retrieve),
        ("signaling end-to-end", signaling),
        ("churn recovery", churn_recovery),
        ("session survival", session_survival),
        ("decode fuzz", decode_fuzz),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = started.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{took:.1?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{took:.1?}]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
