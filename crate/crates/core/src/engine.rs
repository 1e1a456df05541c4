//! Seeded discrete-event loop for one join trial.
//!
//! A trial runs in three phases:
//!
//! 1. Build-up. Starting from the sink, the existing nodes power on one at
//!    a time in breadth-first order of the hearing graph and join the
//!    network with the trial's algorithm. A node that cannot join within
//!    `max_wait_ms` is retried after the others; the phase ends when every
//!    node joined or a full round of retries made no progress.
//! 2. Warmup and join. Background traffic and connection events start and
//!    run for `warmup_ms`, then the new node listens to broadcasts and runs
//!    the joining procedure.
//! 3. Measurement. The new node sends probes to the sink at `probe_rate`
//!    for `measure_ms`.
//!
//! Time is kept in integer microseconds. Events at the same instant are
//! ordered by kind, then node ids, then insertion order, so a
//! `(scenario, algorithm, seed)` triple always replays identically.

use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::channel::hears_with_noise;
use crate::error::{Error, Result};
use crate::join::{
    baseline_select, filter_candidates, make_joinme_ack, select_parent, CandidateInfo,
    FilterThresholds, HeardJoinMe, JoinDecision,
};
use crate::model::{
    make_status_advert, DataPacket, JoinMePacket, Network, NodeId, NodeState, StatusAdvert,
};
use crate::scenario::Scenario;

const LINK_STREAM: u64 = 0;
const CONNECTION_STREAM: u64 = 1;
const BROADCAST_STREAM: u64 = 2;
const TRAFFIC_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Algo {
    Baseline,
    Scored,
}

impl Algo {
    pub const ALL: [Algo; 2] = [Algo::Baseline, Algo::Scored];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Baseline => "baseline",
            Algo::Scored => "scored",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Algo::Baseline),
            "scored" => Ok(Algo::Scored),
            other => Err(Error::InvalidInput(format!(
                "unknown algorithm {other:?} (expected baseline or scored)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EngineParams {
    /// Period of status and joinMe broadcasts; also the discovery window.
    pub t_adv_ms: f64,
    pub warmup_ms: f64,
    pub measure_ms: f64,
    /// Probe packets per second sent by the new node.
    pub probe_rate: f64,
    /// Packets moved per connection event.
    pub n_ce: u32,
    pub max_wait_ms: f64,
}

impl Default for EngineParams {
    fn default() -> Self {
        EngineParams {
            t_adv_ms: 200.0,
            warmup_ms: 5000.0,
            measure_ms: 60000.0,
            probe_rate: 10.0,
            n_ce: 4,
            max_wait_ms: 10000.0,
        }
    }
}

impl EngineParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::scenario(
                    format!("engine.{name}"),
                    "must be positive",
                ))
            }
        };
        positive(self.t_adv_ms, "t_adv_ms")?;
        positive(self.measure_ms, "measure_ms")?;
        positive(self.probe_rate, "probe_rate")?;
        positive(self.max_wait_ms, "max_wait_ms")?;
        if !(self.warmup_ms.is_finite() && self.warmup_ms >= 0.0) {
            return Err(Error::scenario("engine.warmup_ms", "must be >= 0"));
        }
        if self.n_ce == 0 {
            return Err(Error::scenario("engine.n_ce", "must be at least 1"));
        }
        if self.max_wait_ms < self.t_adv_ms {
            return Err(Error::scenario(
                "engine.max_wait_ms",
                "must cover one discovery window",
            ));
        }
        Ok(())
    }
}

fn ms_to_us(ms: f64) -> u64 {
    libm::round(ms * 1000.0) as u64
}

fn us_to_ms(us: u64) -> f64 {
    us as f64 / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventKind {
    WindowStart,
    ConnectionEvent { master: NodeId, slave: NodeId },
    PacketGen(NodeId),
    StatusBroadcast(NodeId),
    JoinMeBroadcast(NodeId),
    PowerOn(NodeId),
    JoinDecision(NodeId),
    MeasurementEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Event {
    pub at_us: u64,
    pub kind: EventKind,
    seq: u64,
}

impl Event {
    pub fn at_ms(&self) -> f64 {
        us_to_ms(self.at_us)
    }
}

/// Poisson packet arrivals for one node.
#[derive(Debug, Clone)]
pub struct PoissonArrivals {
    rng: ChaCha8Rng,
    rate_pps: f64,
    next_us: u64,
}

impl PoissonArrivals {
    pub fn new(rate_pps: f64, start_us: u64, rng: ChaCha8Rng) -> Self {
        PoissonArrivals {
            rng,
            rate_pps,
            next_us: start_us,
        }
    }
}

impl Iterator for PoissonArrivals {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        if self.rate_pps.is_nan() || self.rate_pps <= 0.0 {
            return None;
        }
        let gap_s: f64 = Exp1.sample(&mut self.rng);
        self.next_us += libm::round(gap_s / self.rate_pps * 1e6) as u64;
        Some(self.next_us)
    }
}

/// Arrival times (µs) of `node`'s background traffic, drawn from the
/// trial's seeded generator. Every node reads its own stream.
pub fn generate_traffic(node: NodeId, rate_pps: f64, seed: u64, start_us: u64) -> PoissonArrivals {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRAFFIC_STREAM_BASE + u64::from(node.0));
    PoissonArrivals::new(rate_pps, start_us, rng)
}

/// RSSI of every ordered node pair for one trial. With shadowing enabled
/// each ordered pair draws once.
#[derive(Debug, Clone)]
pub struct LinkTable {
    index: BTreeMap<NodeId, usize>,
    rssi: Vec<f64>,
    threshold: f64,
}

impl LinkTable {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Self> {
        let mut specs: Vec<_> = scenario.nodes.iter().collect();
        specs.sort_by_key(|n| n.id);
        let n = specs.len();
        let index = specs.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(LINK_STREAM);
        let shadowed = scenario.radio.shadowing_enabled();
        let mut rssi = alloc::vec![0.0; n * n];
        for (i, from) in specs.iter().enumerate() {
            for (j, to) in specs.iter().enumerate() {
                if i == j {
                    continue;
                }
                let noise: f64 = if shadowed {
                    StandardNormal.sample(&mut rng)
                } else {
                    0.0
                };
                rssi[i * n + j] = hears_with_noise(from.pos, to.pos, &scenario.radio, noise)?.1;
            }
        }
        Ok(LinkTable {
            index,
            rssi,
            threshold: scenario.radio.rx_threshold_dbm,
        })
    }

    /// RSSI at `to` of a transmission from `from`.
    pub fn rssi(&self, from: NodeId, to: NodeId) -> f64 {
        let n = self.index.len();
        self.rssi[self.index[&from] * n + self.index[&to]]
    }

    pub fn heard(&self, from: NodeId, to: NodeId) -> bool {
        from != to && self.rssi(from, to) >= self.threshold
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.index.keys().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatusDelivery {
    pub receiver: NodeId,
    pub advert: StatusAdvert,
    pub rl_dbm: f64,
}

/// Deliver a fresh status advert from `sender` to every node hearing it.
pub fn broadcast_status(
    sender: NodeId,
    net: &Network,
    links: &LinkTable,
) -> Result<Vec<StatusDelivery>> {
    let node = net.node(sender)?;
    let rn = node.master.map(|m| links.rssi(m, sender));
    let advert = make_status_advert(node, rn);
    Ok(links
        .ids()
        .filter(|&r| links.heard(sender, r))
        .map(|receiver| StatusDelivery {
            receiver,
            advert: advert.clone(),
            rl_dbm: links.rssi(sender, receiver),
        })
        .collect())
}

/// Packets moved by one connection event.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transfer {
    pub moved: u32,
    /// Consumed by their destination.
    pub delivered: Vec<DataPacket>,
    /// Lost because the receiver's buffer was full.
    pub dropped: Vec<DataPacket>,
}

/// One slave-to-master connection event: up to `n_ce` packets leave the
/// head of the slave's buffer.
pub fn connection_event(
    net: &mut Network,
    master: NodeId,
    slave: NodeId,
    n_ce: u32,
) -> Result<Transfer> {
    if net.node(slave)?.master != Some(master) {
        return Err(Error::Topology(format!("no link from {slave} to {master}")));
    }
    let mut transfer = Transfer::default();
    for _ in 0..n_ce {
        let Some(mut pkt) = net.node_mut(slave)?.buffer.pop_front() else {
            break;
        };
        pkt.hops_traversed += 1;
        transfer.moved += 1;
        let receiver = net.node_mut(master)?;
        if pkt.dst == master {
            transfer.delivered.push(pkt);
        } else if receiver.buffer_full() {
            transfer.dropped.push(pkt);
        } else {
            receiver.buffer.push_back(pkt);
        }
    }
    Ok(transfer)
}

/// Time-integrated buffer occupancy over a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WindowStats {
    /// Packet-microseconds.
    pub occupancy_area: u128,
    pub duration_us: u64,
    pub overflow_drops: u64,
}

impl WindowStats {
    pub fn avg_occupancy(&self) -> f64 {
        if self.duration_us == 0 {
            0.0
        } else {
            self.occupancy_area as f64 / self.duration_us as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeBufferStats {
    pub id: NodeId,
    pub b_max: u32,
    /// From half-way through the warmup to the join decision.
    pub pre_join: WindowStats,
    pub measurement: WindowStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRecord {
    pub seq: u64,
    pub created_at_ms: f64,
    pub delivered_at_ms: Option<f64>,
    pub dropped: bool,
    pub hops_traversed: u32,
}

impl ProbeRecord {
    pub fn delay_ms(&self) -> Option<f64> {
        self.delivered_at_ms.map(|d| d - self.created_at_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PacketCounts {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

/// A neighbor heard by the new node at decision time, with its branch
/// (itself and its masters, sink excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateBranch {
    pub id: NodeId,
    pub branch: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub scenario: String,
    pub algo: Algo,
    pub trial_seed: u64,
    pub new_node: NodeId,
    pub chosen_parent: Option<NodeId>,
    pub join_time_ms: Option<f64>,
    pub hops_at_join: Option<u32>,
    /// From the chosen parent up to the sink, both included.
    pub path_to_sink: Vec<NodeId>,
    pub heard_candidates: Vec<CandidateBranch>,
    pub probes: Vec<ProbeRecord>,
    pub probe_counts: PacketCounts,
    /// Probes and background traffic together.
    pub all_counts: PacketCounts,
    pub buffers: Vec<NodeBufferStats>,
    /// Existing nodes that never reached the sink's cluster.
    pub stranded: Vec<NodeId>,
    pub theta_sat: f64,
    pub sat_branch: Option<bool>,
    pub eligible_sat: bool,
    pub avoided_sat: Option<bool>,
}

impl TrialResult {
    pub fn joined(&self) -> bool {
        self.chosen_parent.is_some()
    }

    pub fn buffer(&self, id: NodeId) -> Option<&NodeBufferStats> {
        self.buffers.iter().find(|b| b.id == id)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BufferTracker {
    area: u128,
    last_change: u64,
    drops: u64,
}

impl BufferTracker {
    fn area_at(&self, len: usize, now: u64) -> u128 {
        self.area + len as u128 * u128::from(now - self.last_change)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Mark {
    at: u64,
    area: u128,
    drops: u64,
}

#[derive(Debug)]
struct Listener {
    node: NodeId,
    since: u64,
    status: BTreeMap<NodeId, (StatusAdvert, f64)>,
    joinme: BTreeMap<NodeId, HeardJoinMe>,
}

impl Listener {
    fn new(node: NodeId, since: u64) -> Self {
        Listener {
            node,
            since,
            status: BTreeMap::new(),
            joinme: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    BuildUp,
    Warmup,
    Measuring,
    Done,
}

struct Engine<'s> {
    sc: &'s Scenario,
    algo: Algo,
    seed: u64,
    net: Network,
    links: LinkTable,
    queue: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    now: u64,
    phase: Phase,
    t_adv: u64,
    ce_rng: ChaCha8Rng,
    adv_rng: ChaCha8Rng,
    traffic: BTreeMap<NodeId, PoissonArrivals>,
    trackers: BTreeMap<NodeId, BufferTracker>,
    pre_marks: BTreeMap<NodeId, Mark>,
    pre_stats: BTreeMap<NodeId, WindowStats>,
    meas_marks: BTreeMap<NodeId, Mark>,
    meas_stats: BTreeMap<NodeId, WindowStats>,
    listener: Option<Listener>,
    pending: VecDeque<NodeId>,
    failed_streak: usize,
    next_packet_seq: u64,
    measure_end: u64,
    probes: Vec<ProbeRecord>,
    probe_counts: PacketCounts,
    all_counts: PacketCounts,
    chosen_parent: Option<NodeId>,
    join_time: Option<u64>,
    heard_candidates: Vec<NodeId>,
}

/// Run one trial of `algo` on `scenario` with `seed`.
pub fn run_trial(scenario: &Scenario, algo: Algo, seed: u64) -> Result<TrialResult> {
    scenario.validate()?;
    let mut engine = Engine::new(scenario, algo, seed)?;
    engine.run()?;
    engine.finish()
}

impl<'s> Engine<'s> {
    fn new(sc: &'s Scenario, algo: Algo, seed: u64) -> Result<Self> {
        let net = Network::new(sc.nodes.iter().map(|spec| NodeState {
            b_max: spec.b_max as usize,
            slave_capacity: spec.slave_capacity,
            traffic_rate_pps: spec.traffic_rate_pps,
            ..NodeState::new(spec.id, spec.pos, spec.ci_ms)
        }))?;
        let links = LinkTable::new(sc, seed)?;
        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        Ok(Engine {
            sc,
            algo,
            seed,
            net,
            links,
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: 0,
            phase: Phase::BuildUp,
            t_adv: ms_to_us(sc.engine.t_adv_ms).max(1),
            ce_rng: stream(CONNECTION_STREAM),
            adv_rng: stream(BROADCAST_STREAM),
            traffic: BTreeMap::new(),
            trackers: BTreeMap::new(),
            pre_marks: BTreeMap::new(),
            pre_stats: BTreeMap::new(),
            meas_marks: BTreeMap::new(),
            meas_stats: BTreeMap::new(),
            listener: None,
            pending: VecDeque::new(),
            failed_streak: 0,
            next_packet_seq: 0,
            measure_end: u64::MAX,
            probes: Vec::new(),
            probe_counts: PacketCounts::default(),
            all_counts: PacketCounts::default(),
            chosen_parent: None,
            join_time: None,
            heard_candidates: Vec::new(),
        })
    }

    fn schedule(&mut self, at_us: u64, kind: EventKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event { at_us, kind, seq }));
    }

    fn run(&mut self) -> Result<()> {
        self.pending = self.build_order().into();
        self.start_broadcasts(self.sc.sink_id, 0);
        self.next_joiner();
        while self.phase != Phase::Done {
            let Some(Reverse(ev)) = self.queue.pop() else {
                break;
            };
            debug_assert!(ev.at_us >= self.now);
            self.now = ev.at_us;
            self.handle(ev.kind)?;
        }
        Ok(())
    }

    /// Breadth-first order over "hears a joined node" edges, excluding the
    /// sink and the new node.
    fn build_order(&self) -> Vec<NodeId> {
        let new = self.sc.new_node_id;
        let mut seen = alloc::collections::BTreeSet::from([self.sc.sink_id]);
        let mut queue = VecDeque::from([self.sc.sink_id]);
        let mut order = Vec::new();
        while let Some(v) = queue.pop_front() {
            for u in self.links.ids() {
                if u != new && !seen.contains(&u) && self.links.heard(v, u) {
                    seen.insert(u);
                    order.push(u);
                    queue.push_back(u);
                }
            }
        }
        // Nodes unreachable under this trial's shadowing still get a turn.
        for u in self.links.ids() {
            if u != new && !seen.contains(&u) {
                order.push(u);
            }
        }
        order
    }

    fn start_broadcasts(&mut self, node: NodeId, from: u64) {
        let offset = self.adv_rng.random_range(0..self.t_adv);
        self.schedule(from + offset, EventKind::StatusBroadcast(node));
        self.schedule(from + offset, EventKind::JoinMeBroadcast(node));
    }

    fn start_link(&mut self, slave: NodeId, from: u64) -> Result<()> {
        let node = self.net.node(slave)?;
        let master = node
            .master
            .ok_or_else(|| Error::Topology(format!("{slave} has no master")))?;
        let ci = ms_to_us(node.ci_ms).max(1);
        let offset = self.ce_rng.random_range(0..ci);
        self.schedule(from + offset, EventKind::ConnectionEvent { master, slave });
        Ok(())
    }

    fn next_joiner(&mut self) {
        match self.pending.pop_front() {
            Some(n) => {
                self.listener = Some(Listener::new(n, self.now));
                self.schedule(self.now + self.t_adv, EventKind::JoinDecision(n));
            }
            None => self.finish_build_up(),
        }
    }

    fn finish_build_up(&mut self) {
        self.listener = None;
        self.phase = Phase::Warmup;
        let start = self.now;
        let members: Vec<NodeId> = self
            .net
            .nodes()
            .filter(|n| self.net.in_sink_cluster(n.id))
            .map(|n| n.id)
            .collect();
        for id in members {
            self.trackers.insert(
                id,
                BufferTracker {
                    last_change: start,
                    ..Default::default()
                },
            );
            if id == self.sc.sink_id {
                continue;
            }
            // Links were formed during build-up; connection events start now.
            let _ = self.start_link(id, start);
            let rate = self.net.get(id).map_or(0.0, |n| n.traffic_rate_pps);
            let mut arrivals = generate_traffic(id, rate, self.seed, start);
            if let Some(t) = arrivals.next() {
                self.schedule(t, EventKind::PacketGen(id));
                self.traffic.insert(id, arrivals);
            }
        }
        let warmup = ms_to_us(self.sc.engine.warmup_ms);
        self.schedule(start + warmup / 2, EventKind::WindowStart);
        self.schedule(start + warmup, EventKind::PowerOn(self.sc.new_node_id));
    }

    fn handle(&mut self, kind: EventKind) -> Result<()> {
        match kind {
            EventKind::WindowStart => {
                self.pre_marks = self.marks();
            }
            EventKind::ConnectionEvent { master, slave } => {
                self.on_connection_event(master, slave)?
            }
            EventKind::PacketGen(node) => self.on_packet_gen(node)?,
            EventKind::StatusBroadcast(node) => {
                if let Some(l) = self.listener.as_mut() {
                    if l.node != node {
                        for d in broadcast_status(node, &self.net, &self.links)? {
                            if d.receiver == l.node {
                                l.status.insert(node, (d.advert, d.rl_dbm));
                            }
                        }
                    }
                }
                if self.phase != Phase::Measuring {
                    self.schedule(self.now + self.t_adv, kind);
                }
            }
            EventKind::JoinMeBroadcast(node) => {
                if let Some(l) = self.listener.as_mut() {
                    if l.node != node && self.links.heard(node, l.node) {
                        let packet = JoinMePacket::from_node(self.net.node(node)?);
                        let rl_dbm = self.links.rssi(node, l.node);
                        l.joinme.insert(node, HeardJoinMe { packet, rl_dbm });
                    }
                }
                if self.phase != Phase::Measuring {
                    self.schedule(self.now + self.t_adv, kind);
                }
            }
            EventKind::PowerOn(node) => {
                self.listener = Some(Listener::new(node, self.now));
                self.schedule(self.now + self.t_adv, EventKind::JoinDecision(node));
            }
            EventKind::JoinDecision(node) => self.on_join_decision(node)?,
            EventKind::MeasurementEnd => {
                self.meas_stats = self.window_stats(&self.meas_marks);
                self.phase = Phase::Done;
            }
        }
        Ok(())
    }

    fn touch(&mut self, id: NodeId) {
        let len = self.net.get(id).map_or(0, |n| n.buffer.len());
        if let Some(t) = self.trackers.get_mut(&id) {
            t.area = t.area_at(len, self.now);
            t.last_change = self.now;
        }
    }

    fn record_drop(&mut self, at: NodeId, pkt: &DataPacket) {
        if let Some(t) = self.trackers.get_mut(&at) {
            t.drops += 1;
        }
        self.all_counts.dropped += 1;
        if pkt.src == self.sc.new_node_id {
            self.probe_counts.dropped += 1;
            self.probes[pkt.seq as usize].dropped = true;
        }
    }

    fn on_packet_gen(&mut self, node: NodeId) -> Result<()> {
        let is_probe = node == self.sc.new_node_id;
        let seq = if is_probe {
            self.probes.len() as u64
        } else {
            self.next_packet_seq += 1;
            self.next_packet_seq - 1
        };
        let pkt = DataPacket {
            seq,
            src: node,
            dst: self.sc.sink_id,
            created_at_us: self.now,
            hops_traversed: 0,
        };
        self.all_counts.sent += 1;
        if is_probe {
            self.probe_counts.sent += 1;
            self.probes.push(ProbeRecord {
                seq,
                created_at_ms: us_to_ms(self.now),
                delivered_at_ms: None,
                dropped: false,
                hops_traversed: 0,
            });
        }
        self.touch(node);
        if self.net.node(node)?.buffer_full() {
            self.record_drop(node, &pkt);
        } else {
            self.net.node_mut(node)?.buffer.push_back(pkt);
        }

        let next = if is_probe {
            let period = libm::round(1e6 / self.sc.engine.probe_rate) as u64;
            Some(self.now + period.max(1)).filter(|t| *t < self.measure_end)
        } else {
            self.traffic.get_mut(&node).and_then(|a| a.next())
        };
        if let Some(t) = next {
            self.schedule(t, EventKind::PacketGen(node));
        }
        Ok(())
    }

    fn on_connection_event(&mut self, master: NodeId, slave: NodeId) -> Result<()> {
        self.touch(slave);
        self.touch(master);
        let transfer = connection_event(&mut self.net, master, slave, self.sc.engine.n_ce)?;
        for pkt in &transfer.delivered {
            debug_assert_eq!(
                Some(pkt.hops_traversed),
                self.net.get(pkt.src).and_then(|n| n.hops_to_sink)
            );
            self.all_counts.delivered += 1;
            if pkt.src == self.sc.new_node_id {
                self.probe_counts.delivered += 1;
                let rec = &mut self.probes[pkt.seq as usize];
                rec.delivered_at_ms = Some(us_to_ms(self.now));
                rec.hops_traversed = pkt.hops_traversed;
            }
        }
        for pkt in &transfer.dropped {
            self.record_drop(master, pkt);
        }
        let ci = ms_to_us(self.net.node(slave)?.ci_ms).max(1);
        self.schedule(self.now + ci, EventKind::ConnectionEvent { master, slave });
        Ok(())
    }

    fn decide(&self, l: &Listener) -> Result<Option<NodeId>> {
        let me = self.net.node(l.node)?;
        match self.algo {
            Algo::Baseline => {
                let heard: Vec<HeardJoinMe> = l.joinme.values().copied().collect();
                match baseline_select(&heard, me) {
                    JoinDecision::ConnectAsChild(p) => Ok(Some(p)),
                    JoinDecision::Wait | JoinDecision::None => Ok(None),
                }
            }
            Algo::Scored => {
                let cands: Vec<CandidateInfo> = l
                    .status
                    .values()
                    .filter(|(adv, _)| adv.cluster_id != me.cluster_id)
                    .map(|(adv, rl)| CandidateInfo::from_advert(adv, *rl))
                    .collect();
                let th = self.sc.thresholds.filter();
                let mut filtered = filter_candidates(&cands, th);
                // A weak link beats no link: if the RL floor removes every
                // candidate, retry without it.
                if filtered.is_empty() {
                    let relaxed = FilterThresholds {
                        rl_min_dbm: f64::NEG_INFINITY,
                        ..th
                    };
                    filtered = filter_candidates(&cands, relaxed);
                }
                let choice = select_parent(&filtered, &self.sc.weights);
                // Only the node named in the ACK field answers the joinMe.
                Ok(make_joinme_ack(me, choice)
                    .and_then(|pkt| pkt.ack_field.filter(|&p| pkt.addressed_to(p))))
            }
        }
    }

    /// Connection handshake: the parent must hear the joiner and still have
    /// a free slot.
    fn handshake(&mut self, joiner: NodeId, parent: NodeId) -> Result<bool> {
        if !self.links.heard(joiner, parent) || self.net.node(parent)?.free_out() == 0 {
            return Ok(false);
        }
        self.net.attach(joiner, parent)?;
        Ok(true)
    }

    fn on_join_decision(&mut self, node: NodeId) -> Result<()> {
        let Some(l) = self.listener.take() else {
            return Ok(());
        };
        debug_assert_eq!(l.node, node);
        let choice = self.decide(&l)?;
        let joined = match choice {
            Some(p) => self.handshake(node, p)?,
            None => false,
        };
        let is_new = node == self.sc.new_node_id;
        if is_new {
            let mut heard: Vec<NodeId> = l.status.keys().chain(l.joinme.keys()).copied().collect();
            heard.sort();
            heard.dedup();
            self.heard_candidates = heard;
        }

        if joined {
            if is_new {
                self.on_new_node_joined(choice.unwrap())?;
            } else {
                self.failed_streak = 0;
                self.start_broadcasts(node, self.now);
                self.next_joiner();
            }
            return Ok(());
        }

        let waited = self.now - l.since;
        if waited < ms_to_us(self.sc.engine.max_wait_ms) {
            self.listener = Some(l);
            self.schedule(self.now + self.t_adv, EventKind::JoinDecision(node));
        } else if is_new {
            self.pre_stats = self.window_stats(&self.pre_marks);
            self.phase = Phase::Done;
        } else {
            self.pending.push_back(node);
            self.failed_streak += 1;
            if self.failed_streak >= self.pending.len() {
                self.pending.clear();
            }
            self.next_joiner();
        }
        Ok(())
    }

    fn on_new_node_joined(&mut self, parent: NodeId) -> Result<()> {
        let new = self.sc.new_node_id;
        self.pre_stats = self.window_stats(&self.pre_marks);
        self.chosen_parent = Some(parent);
        self.join_time = Some(self.now);
        self.phase = Phase::Measuring;
        self.trackers.insert(
            new,
            BufferTracker {
                last_change: self.now,
                ..Default::default()
            },
        );
        self.meas_marks = self.marks();
        self.measure_end = self.now + ms_to_us(self.sc.engine.measure_ms);
        self.start_link(new, self.now)?;
        self.schedule(self.now, EventKind::PacketGen(new));
        self.schedule(self.measure_end, EventKind::MeasurementEnd);
        Ok(())
    }

    fn marks(&self) -> BTreeMap<NodeId, Mark> {
        self.trackers
            .iter()
            .map(|(&id, t)| {
                let len = self.net.get(id).map_or(0, |n| n.buffer.len());
                (
                    id,
                    Mark {
                        at: self.now,
                        area: t.area_at(len, self.now),
                        drops: t.drops,
                    },
                )
            })
            .collect()
    }

    fn window_stats(&self, start: &BTreeMap<NodeId, Mark>) -> BTreeMap<NodeId, WindowStats> {
        let end = self.marks();
        end.iter()
            .filter_map(|(id, e)| {
                let s = start.get(id)?;
                Some((
                    *id,
                    WindowStats {
                        occupancy_area: e.area - s.area,
                        duration_us: e.at - s.at,
                        overflow_drops: e.drops - s.drops,
                    },
                ))
            })
            .collect()
    }

    fn saturated(&self, stats: &BTreeMap<NodeId, WindowStats>, branch: &[NodeId]) -> bool {
        let theta = self.sc.thresholds.theta_sat;
        branch.iter().any(|id| {
            let b_max = self.net.get(*id).map_or(0, |n| n.b_max) as f64;
            stats
                .get(id)
                .is_some_and(|w| w.overflow_drops > 0 || w.avg_occupancy() >= theta * b_max)
        })
    }

    fn branch_of(&self, id: NodeId) -> Result<Vec<NodeId>> {
        let mut path = self.net.path_to_root(id)?;
        path.retain(|n| *n != self.sc.sink_id);
        Ok(path)
    }

    fn finish(self) -> Result<TrialResult> {
        let new = self.sc.new_node_id;
        let mut in_flight_all = 0;
        let mut in_flight_probes = 0;
        for node in self.net.nodes() {
            in_flight_all += node.buffer.len() as u64;
            in_flight_probes += node.buffer.iter().filter(|p| p.src == new).count() as u64;
        }
        let probe_counts = PacketCounts {
            in_flight: in_flight_probes,
            ..self.probe_counts
        };
        let all_counts = PacketCounts {
            in_flight: in_flight_all,
            ..self.all_counts
        };

        let heard_candidates = self
            .heard_candidates
            .iter()
            .map(|&id| {
                Ok(CandidateBranch {
                    id,
                    branch: self.branch_of(id)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let (path_to_sink, hops_at_join, sat_branch, avoided_sat) = match self.chosen_parent {
            Some(parent) => {
                let path = self
                    .net
                    .path_to_sink(parent)?
                    .ok_or_else(|| Error::Topology(format!("parent {parent} lost its route")))?;
                let branch = self.branch_of(parent)?;
                (
                    path,
                    self.net.node(new)?.hops_to_sink,
                    Some(self.saturated(&self.meas_stats, &branch)),
                    Some(!self.saturated(&self.pre_stats, &branch)),
                )
            }
            None => (Vec::new(), None, None, None),
        };
        let sat_flags: Vec<bool> = heard_candidates
            .iter()
            .map(|c| self.saturated(&self.pre_stats, &c.branch))
            .collect();
        let eligible_sat =
            self.chosen_parent.is_some() && sat_flags.contains(&true) && sat_flags.contains(&false);

        let buffers = self
            .net
            .nodes()
            .map(|n| NodeBufferStats {
                id: n.id,
                b_max: n.b_max as u32,
                pre_join: self.pre_stats.get(&n.id).copied().unwrap_or_default(),
                measurement: self.meas_stats.get(&n.id).copied().unwrap_or_default(),
            })
            .collect();
        let stranded = self
            .net
            .ids()
            .filter(|&id| id != new && !self.net.in_sink_cluster(id))
            .collect();

        Ok(TrialResult {
            scenario: self.sc.name.clone(),
            algo: self.algo,
            trial_seed: self.seed,
            new_node: new,
            chosen_parent: self.chosen_parent,
            join_time_ms: self.join_time.map(us_to_ms),
            hops_at_join,
            path_to_sink,
            heard_candidates,
            probes: self.probes,
            probe_counts,
            all_counts,
            buffers,
            stranded,
            theta_sat: self.sc.thresholds.theta_sat,
            sat_branch,
            eligible_sat,
            avoided_sat: avoided_sat.filter(|_| eligible_sat),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Position;
    use crate::scenario::{training11, NodeSpec};
    use alloc::vec;

    fn chain(n: u32) -> Network {
        let mut net = Network::new(
            (1..=n)
                .map(|i| NodeState::new(NodeId(i), Position::new(f64::from(i) * 8.0, 0.0), 100.0)),
        )
        .unwrap();
        for i in 2..=n {
            net.attach(NodeId(i), NodeId(i - 1)).unwrap();
        }
        net
    }

    fn fill(net: &mut Network, id: u32, count: u64) {
        let node = net.node_mut(NodeId(id)).unwrap();
        for seq in 0..count {
            node.buffer.push_back(DataPacket {
                seq,
                src: NodeId(id),
                dst: NodeId::SINK,
                created_at_us: 0,
                hops_traversed: 0,
            });
        }
    }

    #[test]
    fn connection_event_moves_at_most_n_ce() {
        let mut net = chain(3);
        fill(&mut net, 3, 6);
        let t = connection_event(&mut net, NodeId(2), NodeId(3), 4).unwrap();
        assert_eq!(t.moved, 4);
        assert!(t.dropped.is_empty());
        assert_eq!(net.node(NodeId(3)).unwrap().buffer.len(), 2);
        let relay = &net.node(NodeId(2)).unwrap().buffer;
        assert_eq!(relay.len(), 4);
        assert!(relay.iter().all(|p| p.hops_traversed == 1));
    }

    #[test]
    fn full_receiver_drops() {
        let mut net = chain(3);
        net.node_mut(NodeId(2)).unwrap().b_max = 5;
        fill(&mut net, 2, 4);
        fill(&mut net, 3, 3);
        let t = connection_event(&mut net, NodeId(2), NodeId(3), 4).unwrap();
        assert_eq!(t.moved, 3);
        assert_eq!(t.dropped.len(), 2);
        assert_eq!(net.node(NodeId(2)).unwrap().buffer.len(), 5);
    }

    #[test]
    fn sink_consumes() {
        let mut net = chain(2);
        fill(&mut net, 2, 2);
        let t = connection_event(&mut net, NodeId(1), NodeId(2), 4).unwrap();
        assert_eq!(t.delivered.len(), 2);
        assert!(net.node(NodeId(1)).unwrap().buffer.is_empty());
        assert!(connection_event(&mut net, NodeId(2), NodeId(1), 4).is_err());
    }

    #[test]
    fn zero_rate_has_no_arrivals() {
        assert_eq!(generate_traffic(NodeId(3), 0.0, 1, 0).next(), None);
    }

    #[test]
    fn per_node_streams_differ_and_replay() {
        let a: Vec<u64> = generate_traffic(NodeId(3), 5.0, 9, 0).take(20).collect();
        let b: Vec<u64> = generate_traffic(NodeId(4), 5.0, 9, 0).take(20).collect();
        assert_ne!(a, b);
        assert_eq!(
            a,
            generate_traffic(NodeId(3), 5.0, 9, 0)
                .take(20)
                .collect::<Vec<_>>()
        );
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn broadcast_reaches_hearers_only() {
        let s = training11();
        let links = LinkTable::new(&s, 0).unwrap();
        let mut net =
            Network::new(s.nodes.iter().map(|n| NodeState::new(n.id, n.pos, n.ci_ms))).unwrap();
        net.attach(NodeId(2), NodeId(1)).unwrap();
        let d = broadcast_status(NodeId(2), &net, &links).unwrap();
        let receivers: Vec<_> = d.iter().map(|x| x.receiver).collect();
        assert_eq!(receivers, vec![NodeId(1), NodeId(3)]);
        assert!(d[0].advert.rn_dbm.is_some());

        let lonely = Scenario {
            nodes: vec![NodeSpec::new(1, 0.0, 0.0), NodeSpec::new(2, 50.0, 0.0)],
            new_node_id: NodeId(2),
            unjoinable: true,
            ..training11()
        };
        let links = LinkTable::new(&lonely, 0).unwrap();
        let net = Network::new(
            lonely
                .nodes
                .iter()
                .map(|n| NodeState::new(n.id, n.pos, n.ci_ms)),
        )
        .unwrap();
        assert!(broadcast_status(NodeId(2), &net, &links)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn advert_snapshots_buffer_at_emission() {
        let s = training11();
        let links = LinkTable::new(&s, 0).unwrap();
        let mut net =
            Network::new(s.nodes.iter().map(|n| NodeState::new(n.id, n.pos, n.ci_ms))).unwrap();
        net.attach(NodeId(2), NodeId(1)).unwrap();
        fill(&mut net, 2, 3);
        let d = broadcast_status(NodeId(2), &net, &links).unwrap();
        net.node_mut(NodeId(2)).unwrap().buffer.clear();
        assert_eq!(d[0].advert.b_occupancy, 3);
    }

    #[test]
    fn event_order_is_time_then_kind() {
        let mut q = BinaryHeap::new();
        let ev = |at_us, kind, seq| Reverse(Event { at_us, kind, seq });
        q.push(ev(5, EventKind::MeasurementEnd, 0));
        q.push(ev(5, EventKind::PacketGen(NodeId(3)), 1));
        q.push(ev(5, EventKind::PacketGen(NodeId(2)), 2));
        q.push(ev(4, EventKind::JoinDecision(NodeId(9)), 3));
        let order: Vec<EventKind> =
            core::iter::from_fn(|| q.pop().map(|Reverse(e)| e.kind)).collect();
        assert_eq!(
            order,
            vec![
                EventKind::JoinDecision(NodeId(9)),
                EventKind::PacketGen(NodeId(2)),
                EventKind::PacketGen(NodeId(3)),
                EventKind::MeasurementEnd,
            ]
        );
    }
}
