//! Deterministic discrete-event simulation core.
//!
//! One run is a single thread draining an `(time, seq)`-ordered event queue.
//! Mobility, Hello/Ack neighbor sensing, route discovery, per-node FIFO
//! forwarding, energy accounting and drop bookkeeping all happen through
//! scheduled events, so a fixed config and seed always replay identically.

pub mod event;
pub mod node;
pub mod packet;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linklife::{
    EnergyEstimate, EnergyProfile, LinkLifeEstimate, RssWindow, MISSED_HELLO_FACTOR,
};
use crate::mobility::{self, clamped_rss, in_range, Position, RadioParams, WaypointState};
use crate::model::{ConfigError, FuzzyLabel, NodeId, Path, Protocol, ScenarioConfig};
use crate::report::MetricsReport;
use crate::routing::{on_failure, plan_for, RouteCandidate, RoutePlan, RoutingError};

use event::{Event, EventKind, EventQueue};
use node::{NodeRuntime, NodeTraffic};
use packet::{DropReason, PacketRecord, PacketStatus};

/// Seconds between mobility updates.
pub const MOBILITY_TICK: f64 = 0.1;
/// Fixed per-hop processing latency, seconds.
pub const PROCESSING_DELAY: f64 = 0.001;
/// bits/second on every link.
pub const LINK_BITRATE: f64 = 2_000_000.0;
/// bytes
pub const CONTROL_PACKET_SIZE: u32 = 64;
/// Length of one traffic-statistics epoch, seconds.
pub const STATS_INTERVAL: f64 = 5.0;
/// Seconds between re-evaluations of an active multipath plan.
pub const REFRESH_INTERVAL: f64 = 2.0;
/// Maximum recorded hops in a route request.
pub const ROUTE_TTL: usize = 32;
/// Wait after a failed discovery before trying again, seconds.
pub const DISCOVERY_BACKOFF: f64 = 1.0;

pub fn hop_latency(size_bytes: u32) -> f64 {
    size_bytes as f64 * 8.0 / LINK_BITRATE + PROCESSING_DELAY
}

pub fn control_latency() -> f64 {
    hop_latency(CONTROL_PACKET_SIZE)
}

/// Destination-side window for gathering request copies.
pub fn collection_window() -> f64 {
    2.0 * ROUTE_TTL as f64 * control_latency()
}

/// Source-side wait from request to plan.
pub fn settle_delay() -> f64 {
    2.0 * ROUTE_TTL as f64 * control_latency() + collection_window() + control_latency()
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("setup: {0}")]
    Setup(String),
}

#[derive(Debug, Clone)]
pub struct FlowRuntime {
    pub flow: crate::model::Flow,
    pub plan: Option<RoutePlan>,
    /// Packets dispatched on each selected path of the current plan.
    pub sent: Vec<u64>,
    /// Generated packets waiting for a route.
    pub pending: VecDeque<usize>,
    pub generated: u64,
    pub dispatched: u64,
    pub discovering: Option<u64>,
    pub next_discovery_at: f64,
    pub refresh_scheduled: bool,
    pub discoveries: u64,
}

#[derive(Debug, Clone)]
struct Discovery {
    flow: Option<usize>,
    dst: NodeId,
    seen: BTreeSet<NodeId>,
    routes: Vec<Path>,
    closed: bool,
    replies: Vec<RouteCandidate>,
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trace: Option<String>,
}

/// Per-link estimate as seen by the upstream node, with the paired energy
/// duration kept for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkReading {
    pub estimate: LinkLifeEstimate,
    pub le: f64,
}

pub struct SimulationBuilder {
    cfg: ScenarioConfig,
    positions: Option<Vec<Position>>,
    waypoints: Option<Vec<WaypointState>>,
    ranges: Option<Vec<f64>>,
    consumed: BTreeMap<usize, f64>,
    trace: bool,
}

impl SimulationBuilder {
    /// Pins every node at the given position for the whole run.
    pub fn static_positions(mut self, positions: Vec<Position>) -> Self {
        self.positions = Some(positions);
        self
    }

    /// Starts every node from the given kinematic state; nodes keep moving
    /// under the waypoint model afterwards, except states built with
    /// [`WaypointState::fixed`], which stay pinned.
    pub fn initial_waypoints(mut self, states: Vec<WaypointState>) -> Self {
        self.waypoints = Some(states);
        self
    }

    /// Overrides the per-node radio ranges otherwise drawn from the config.
    pub fn radio_ranges(mut self, ranges: Vec<f64>) -> Self {
        self.ranges = Some(ranges);
        self
    }

    /// Starts `node` with `joules` already consumed.
    pub fn pre_consumed(mut self, node: usize, joules: f64) -> Self {
        self.consumed.insert(node, joules);
        self
    }

    pub fn trace(mut self, on: bool) -> Self {
        self.trace = on;
        self
    }

    pub fn build(self) -> Result<Simulation, EngineError> {
        let cfg = self.cfg.validate()?;
        let n = cfg.node_count;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut radio_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        radio_rng.set_stream(1);

        let (waypoints, mobile) = match (self.positions, self.waypoints) {
            (Some(_), Some(_)) => {
                return Err(EngineError::Setup(
                    "static positions and initial waypoints are exclusive".into(),
                ));
            }
            (Some(p), None) if p.len() != n => {
                return Err(EngineError::Setup(format!(
                    "{} positions for {n} nodes",
                    p.len()
                )));
            }
            (None, Some(w)) if w.len() != n => {
                return Err(EngineError::Setup(format!(
                    "{} waypoints for {n} nodes",
                    w.len()
                )));
            }
            (Some(p), None) => {
                let w: Vec<WaypointState> = p.into_iter().map(WaypointState::fixed).collect();
                (w, vec![false; n])
            }
            (None, Some(w)) => {
                let mobile = w
                    .iter()
                    .map(|s| *s != WaypointState::fixed(s.position))
                    .collect();
                (w, mobile)
            }
            (None, None) => (mobility::init_positions(&cfg, &mut rng), vec![true; n]),
        };
        let ranges: Vec<f64> = match self.ranges {
            Some(r) if r.len() != n => {
                return Err(EngineError::Setup(format!(
                    "{} radio ranges for {n} nodes",
                    r.len()
                )));
            }
            Some(r) => r,
            None => (0..n)
                .map(|_| {
                    if cfg.radio_range_max > cfg.radio_range_min {
                        radio_rng.gen_range(cfg.radio_range_min..=cfg.radio_range_max)
                    } else {
                        cfg.radio_range_min
                    }
                })
                .collect(),
        };
        for (&node, &j) in &self.consumed {
            if node >= n || !(0.0..=cfg.energy_initial).contains(&j) {
                return Err(EngineError::Setup(format!(
                    "bad pre-consumed energy {j} for node {node}"
                )));
            }
        }

        let nodes = waypoints
            .into_iter()
            .zip(ranges)
            .zip(mobile)
            .enumerate()
            .map(|(i, ((waypoint, rad_rng), mobile))| {
                let consumed = self.consumed.get(&i).copied().unwrap_or(0.0);
                let energy = EnergyProfile {
                    initial_energy: cfg.energy_initial,
                    consumed_energy: consumed,
                    recv_cost: cfg.energy_recv_per_packet,
                    send_cost: cfg.energy_send_per_packet,
                    max_arrival: cfg.max_arrival_rate,
                    max_departure: cfg.max_departure_rate,
                };
                NodeRuntime {
                    id: NodeId(i),
                    waypoint,
                    mobile,
                    radio: RadioParams {
                        trans_pow: cfg.trans_pow,
                        k_const: cfg.friis_k,
                        q_exp: cfg.friis_q,
                        rad_rng,
                    },
                    alive: energy.above_reserve(),
                    energy,
                    traffic: NodeTraffic::default(),
                    queue: VecDeque::new(),
                    neighbors: BTreeMap::new(),
                    last_ack: BTreeMap::new(),
                    service_pending: false,
                    last_service: f64::NEG_INFINITY,
                    busy_time: 0.0,
                    data_energy: 0.0,
                    control_energy: 0.0,
                }
            })
            .collect();

        let flows = cfg
            .flows
            .iter()
            .map(|f| FlowRuntime {
                flow: f.clone(),
                plan: None,
                sent: Vec::new(),
                pending: VecDeque::new(),
                generated: 0,
                dispatched: 0,
                discovering: None,
                next_discovery_at: 0.0,
                refresh_scheduled: false,
                discoveries: 0,
            })
            .collect();

        let mut sim = Simulation {
            cfg,
            now: 0.0,
            queue: EventQueue::new(),
            nodes,
            flows,
            packets: Vec::new(),
            discoveries: BTreeMap::new(),
            standalone: BTreeMap::new(),
            next_request: 0,
            rng,
            trace: self.trace.then(Vec::new),
            notes: Vec::new(),
            finished: false,
            on_wire: 0,
            last_event: (f64::NEG_INFINITY, 0),
        };
        sim.schedule_initial();
        Ok(sim)
    }
}

pub struct Simulation {
    cfg: ScenarioConfig,
    now: f64,
    queue: EventQueue,
    nodes: Vec<NodeRuntime>,
    flows: Vec<FlowRuntime>,
    packets: Vec<PacketRecord>,
    discoveries: BTreeMap<u64, Discovery>,
    standalone: BTreeMap<u64, Vec<RouteCandidate>>,
    next_request: u64,
    rng: ChaCha8Rng,
    trace: Option<Vec<String>>,
    notes: Vec<String>,
    finished: bool,
    on_wire: u64,
    last_event: (f64, u64),
}

macro_rules! note {
    ($sim:expr, $($arg:tt)*) => {
        if $sim.trace.is_some() {
            $sim.notes.push(format!($($arg)*));
        }
    };
}

impl Simulation {
    pub fn builder(cfg: ScenarioConfig) -> SimulationBuilder {
        SimulationBuilder {
            cfg,
            positions: None,
            waypoints: None,
            ranges: None,
            consumed: BTreeMap::new(),
            trace: false,
        }
    }

    pub fn new(cfg: ScenarioConfig) -> Result<Simulation, EngineError> {
        Simulation::builder(cfg).build()
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn nodes(&self) -> &[NodeRuntime] {
        &self.nodes
    }

    pub fn flows(&self) -> &[FlowRuntime] {
        &self.flows
    }

    pub fn packets(&self) -> &[PacketRecord] {
        &self.packets
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Packets on a link between two nodes.
    pub fn on_wire(&self) -> u64 {
        self.on_wire
    }

    /// In-flight packets by location: (waiting for a route, in node queues,
    /// on a link).
    pub fn in_flight_breakdown(&self) -> (u64, u64, u64) {
        let pending = self.flows.iter().map(|f| f.pending.len() as u64).sum();
        let queued = self.nodes.iter().map(|n| n.queue.len() as u64).sum();
        (pending, queued, self.on_wire)
    }

    /// Creates a packet of `flow` already routed on `path` and offers it to
    /// the queue of the path's source at the current time. Returns the
    /// packet id; its status tells whether the queue accepted it.
    pub fn inject_packet(&mut self, flow: usize, path: Path) -> usize {
        assert!(flow < self.flows.len(), "unknown flow {flow}");
        assert!(
            path.nodes().iter().all(|n| n.0 < self.nodes.len()),
            "path outside the network"
        );
        let pid = self.packets.len();
        let f = &mut self.flows[flow];
        let seq = f.generated;
        f.generated += 1;
        let src = path.src();
        self.packets.push(PacketRecord {
            id: pid,
            flow,
            seq,
            created_at: self.now,
            delivered_at: None,
            path: Some(path),
            hop: 0,
            size: f.flow.packet_size,
            status: PacketStatus::InFlight,
        });
        self.enqueue(src, pid);
        pid
    }

    fn schedule(&mut self, at: f64, kind: EventKind) {
        assert!(
            at >= self.now,
            "event {kind} scheduled in the past ({at} < {})",
            self.now
        );
        self.queue.push(at, kind);
    }

    fn schedule_initial(&mut self) {
        let duration = self.cfg.sim_duration;
        self.schedule(duration, EventKind::SimEnd);
        if self.nodes.iter().any(|n| n.mobile) {
            self.schedule(MOBILITY_TICK, EventKind::MobilityTick { round: 1 });
        }
        for i in 0..self.nodes.len() {
            let t = self.hello_time(i, 0);
            if t < duration {
                self.schedule(
                    t,
                    EventKind::HelloBroadcast {
                        node: NodeId(i),
                        round: 0,
                    },
                );
            }
        }
        if STATS_INTERVAL < duration {
            self.schedule(STATS_INTERVAL, EventKind::StatsSnapshot);
        }
        for f in 0..self.flows.len() {
            let t = self.flows[f].flow.start_time;
            if t < duration {
                self.schedule(t, EventKind::FlowPacketGen { flow: f });
            }
        }
    }

    /// Hellos are phase-staggered by node index within one interval.
    fn hello_time(&self, node: usize, round: u64) -> f64 {
        let intv = self.cfg.hello_interval;
        intv * node as f64 / self.nodes.len() as f64 + intv * round as f64
    }

    /// Processes one event. Returns false once the run has ended.
    pub fn step(&mut self) -> bool {
        if self.finished {
            return false;
        }
        let Some(Event { time, seq, kind }) = self.queue.pop() else {
            self.finished = true;
            return false;
        };
        assert!(
            (time, seq) > self.last_event || self.last_event.0 == f64::NEG_INFINITY,
            "event order violated"
        );
        self.last_event = (time, seq);
        self.now = time;
        self.notes.clear();
        let name = kind.name();
        self.handle(kind);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(format!("{time:.9}|{seq}|{name}|{}", self.notes.join(" ")));
        }
        if self.finished {
            self.append_node_summary(seq);
        }
        !self.finished
    }

    pub fn run_to_end(&mut self) {
        while self.step() {}
    }

    /// Runs the event loop until `time` (exclusive) or the end.
    pub fn run_until(&mut self, time: f64) {
        while !self.finished && self.queue.peek_time().is_some_and(|t| t < time) {
            self.step();
        }
    }

    pub fn report(&self) -> MetricsReport {
        MetricsReport::from_records(
            self.cfg.protocol,
            self.cfg.node_count,
            self.cfg.seed,
            &self.packets,
            self.cfg.sim_duration,
        )
    }

    pub fn trace_text(&self) -> Option<String> {
        self.trace.as_ref().map(|lines| {
            let mut out = String::with_capacity(lines.iter().map(|l| l.len() + 1).sum());
            for l in lines {
                out.push_str(l);
                out.push('\n');
            }
            out
        })
    }

    pub fn finish(mut self) -> RunOutput {
        let started = Instant::now();
        self.run_to_end();
        let mut report = self.report();
        report.wall_time = started.elapsed().as_secs_f64();
        RunOutput {
            report,
            trace: self.trace_text(),
        }
    }

    fn append_node_summary(&mut self, seq: u64) {
        let Some(trace) = self.trace.as_mut() else {
            return;
        };
        let t = self.now;
        let duration = self.cfg.sim_duration;
        for n in &self.nodes {
            trace.push(format!(
                "{t:.9}|{seq}|NodeStats|node={} arrived={} departed={} dropped={} drop_rate={:.9} queued={} remaining={:.9} data_energy={:.9} control_energy={:.9} alive={}",
                n.id,
                n.traffic.arrived_total,
                n.traffic.departed_total,
                n.traffic.dropped_total,
                n.traffic.dropped_total as f64 / duration,
                n.queue.len(),
                n.remaining_energy(),
                n.data_energy,
                n.control_energy,
                n.alive,
            ));
        }
    }

    fn handle(&mut self, kind: EventKind) {
        match kind {
            EventKind::HelloBroadcast { node, round } => self.on_hello(node, round),
            EventKind::HelloAck { from, to } => self.on_hello_ack(from, to),
            EventKind::MobilityTick { round } => self.on_mobility(round),
            EventKind::FlowPacketGen { flow } => self.on_generate(flow),
            EventKind::PacketHop { packet, to } => self.on_packet_hop(packet, to),
            EventKind::QueueService { node } => self.on_service(node),
            EventKind::RouteRequestHop { request, at, route } => {
                self.on_request(request, at, route)
            }
            EventKind::RouteReplyHop {
                request,
                path,
                at,
                labels,
                min_energy,
                sent_at,
            } => self.on_reply(request, path, at, labels, min_energy, sent_at),
            EventKind::RouteCollect { request } => self.on_collect(request),
            EventKind::RouteSettle { request } => self.on_settle(request),
            EventKind::RouteError { flow, path } => self.on_route_error(flow, path),
            EventKind::PlanRefresh { flow } => self.on_refresh(flow),
            EventKind::StatsSnapshot => self.on_stats(),
            EventKind::SimEnd => self.finished = true,
        }
    }

    // -----------------------------------------------------------------------
    // geometry and energy helpers
    // -----------------------------------------------------------------------

    fn alive(&self, n: NodeId) -> bool {
        self.nodes[n.0].alive
    }

    pub fn linked(&self, a: NodeId, b: NodeId) -> bool {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        in_range(
            na.waypoint.position,
            nb.waypoint.position,
            &na.radio,
            &nb.radio,
        )
    }

    fn neighbors_of(&self, n: NodeId) -> Vec<NodeId> {
        (0..self.nodes.len())
            .map(NodeId)
            .filter(|&m| m != n && self.nodes[m.0].alive && self.linked(n, m))
            .collect()
    }

    fn charge(&mut self, n: NodeId, joules: f64, data: bool) {
        let node = &mut self.nodes[n.0];
        node.energy.consumed_energy += joules;
        if data {
            node.data_energy += joules;
        } else {
            node.control_energy += joules;
        }
        if node.alive && !node.energy.above_reserve() {
            self.kill(n);
        }
    }

    fn note_tx(&mut self, n: NodeId) {
        if self.trace.is_some() {
            let node = &self.nodes[n.0];
            let line = format!(
                "tx={}@{:.9}/{:.9}",
                n,
                node.remaining_energy(),
                node.energy.initial_energy
            );
            self.notes.push(line);
        }
    }

    fn tx_control(&mut self, n: NodeId) {
        self.note_tx(n);
        let j = self.cfg.control_energy_fraction * self.cfg.energy_send_per_packet;
        self.charge(n, j, false);
    }

    fn rx_control(&mut self, n: NodeId) {
        let j = self.cfg.control_energy_fraction * self.cfg.energy_recv_per_packet;
        self.charge(n, j, false);
    }

    /// Below the energy reserve a node stops transmitting for good; whatever
    /// it still holds is lost.
    fn kill(&mut self, n: NodeId) {
        self.nodes[n.0].alive = false;
        note!(self, "dead={n}");
        let queued: Vec<usize> = self.nodes[n.0].queue.drain(..).collect();
        for pid in queued {
            self.drop_packet(pid, DropReason::NodeDead, Some(n));
            self.notify_source(pid);
        }
    }

    fn drop_packet(&mut self, pid: usize, reason: DropReason, at: Option<NodeId>) {
        let p = &mut self.packets[pid];
        debug_assert_eq!(p.status, PacketStatus::InFlight);
        p.status = PacketStatus::Dropped(reason);
        let flow = p.flow;
        if let Some(n) = at {
            self.nodes[n.0].traffic.drop_one(flow);
        }
        note!(self, "drop={pid}:{reason}");
    }

    /// Route error travelling back to the flow source.
    fn notify_source(&mut self, pid: usize) {
        let p = &self.packets[pid];
        let Some(path) = p.path.clone() else {
            return;
        };
        let delay = p.hop as f64 * control_latency();
        let flow = p.flow;
        self.schedule(self.now + delay, EventKind::RouteError { flow, path });
    }

    // -----------------------------------------------------------------------
    // link estimation
    // -----------------------------------------------------------------------

    /// Link-life reading for the hop `j -> k`, computed at `j` from its RSS
    /// history of `k`, both ends' energy outlook for `flow`, and `j`'s recent
    /// drop ratio.
    pub fn link_reading(&self, j: NodeId, k: NodeId, flow: Option<usize>) -> LinkReading {
        let (nj, nk) = (&self.nodes[j.0], &self.nodes[k.0]);
        let rad_rng = nj.radio.rad_rng.min(nk.radio.rad_rng);
        let fresh = self.now - MISSED_HELLO_FACTOR * self.cfg.hello_interval;
        let lpm = match nj.neighbors.get(&k) {
            Some(w) if w.last_time().is_some_and(|t| t >= fresh) => {
                crate::linklife::estimate_mobility(w, &nk.radio, rad_rng, self.cfg.lp_cap)
                    .map(|m| m.lpm)
                    .unwrap_or(0.0)
            }
            _ => 0.0,
        };
        let (total, rate) = flow
            .map(|f| {
                (
                    self.flows[f].flow.total_packets,
                    self.flows[f].flow.offered_rate,
                )
            })
            .unwrap_or((0, 0.0));
        let estimate_for = |n: &NodeRuntime| {
            let traffic = n.traffic.traffic_state(self.now, flow, Some(rate));
            EnergyEstimate::for_node(&n.energy, &traffic, total).unwrap_or(EnergyEstimate {
                trans_rate: 0.0,
                recv_rate: 0.0,
                per_packet_time: n.energy.per_packet_time(),
                active_time: 0.0,
                total_consumption: 0.0,
                operational: false,
                le: 0.0,
                lpe: 0.0,
            })
        };
        let mut ej = estimate_for(nj);
        let mut ek = estimate_for(nk);
        EnergyEstimate::pair(&mut ej, &mut ek);
        let dpr = nj.traffic.recent_dpr();
        let estimate =
            LinkLifeEstimate::from_values(lpm, ej.lpe, dpr).expect("all inputs lie in [0, 1]");
        LinkReading {
            estimate,
            le: ej.le,
        }
    }

    // -----------------------------------------------------------------------
    // neighbor sensing and mobility
    // -----------------------------------------------------------------------

    fn on_hello(&mut self, node: NodeId, round: u64) {
        if !self.alive(node) {
            return;
        }
        self.tx_control(node);
        let radio = self.nodes[node.0].radio;
        let from = self.nodes[node.0].waypoint.position;
        let (window, intv) = (self.cfg.rss_window, self.cfg.hello_interval);
        for j in self.neighbors_of(node) {
            let d = from.distance(self.nodes[j.0].waypoint.position);
            let rss = clamped_rss(&radio, d);
            self.rx_control(j);
            let now = self.now;
            let w = self.nodes[j.0]
                .neighbors
                .entry(node)
                .or_insert_with(|| RssWindow::new(window, intv));
            let _ = w.push(now, rss);
            note!(self, "rx={j}:{rss:.9e}");
            if self.alive(j) {
                self.tx_control(j);
                self.schedule(
                    now + control_latency(),
                    EventKind::HelloAck { from: j, to: node },
                );
            }
        }
        let next = self.hello_time(node.0, round + 1);
        if next < self.cfg.sim_duration {
            self.schedule(
                next,
                EventKind::HelloBroadcast {
                    node,
                    round: round + 1,
                },
            );
        }
    }

    fn on_hello_ack(&mut self, from: NodeId, to: NodeId) {
        if !self.alive(to) || !self.alive(from) || !self.linked(from, to) {
            note!(self, "lost");
            return;
        }
        self.rx_control(to);
        let now = self.now;
        self.nodes[to.0].last_ack.insert(from, now);
        note!(self, "ack={from}->{to}");
    }

    fn on_mobility(&mut self, round: u64) {
        let dt = MOBILITY_TICK;
        for i in 0..self.nodes.len() {
            if self.nodes[i].mobile {
                let wp = self.nodes[i].waypoint;
                self.nodes[i].waypoint = mobility::advance(wp, dt, &self.cfg, &mut self.rng);
            }
        }
        let next = MOBILITY_TICK * (round + 1) as f64;
        if next < self.cfg.sim_duration {
            self.schedule(next, EventKind::MobilityTick { round: round + 1 });
        }
    }

    fn on_stats(&mut self) {
        let now = self.now;
        for n in &mut self.nodes {
            n.traffic.rotate(now);
        }
        if now + STATS_INTERVAL < self.cfg.sim_duration {
            self.schedule(now + STATS_INTERVAL, EventKind::StatsSnapshot);
        }
    }

    // -----------------------------------------------------------------------
    // data plane
    // -----------------------------------------------------------------------

    fn on_generate(&mut self, fi: usize) {
        let now = self.now;
        let f = &mut self.flows[fi];
        let seq = f.generated;
        f.generated += 1;
        let pid = self.packets.len();
        self.packets.push(PacketRecord {
            id: pid,
            flow: fi,
            seq,
            created_at: now,
            delivered_at: None,
            path: None,
            hop: 0,
            size: f.flow.packet_size,
            status: PacketStatus::InFlight,
        });
        note!(self, "flow={fi} packet={pid}");
        self.dispatch_or_buffer(fi, pid);

        let f = &self.flows[fi];
        if f.generated < f.flow.total_packets {
            let next = f.flow.start_time + f.generated as f64 / f.flow.offered_rate;
            if next < self.cfg.sim_duration {
                self.schedule(next.max(now), EventKind::FlowPacketGen { flow: fi });
            }
        }
    }

    fn dispatch_or_buffer(&mut self, fi: usize, pid: usize) {
        let f = &self.flows[fi];
        if let Some(idx) = f.plan.as_ref().and_then(|p| p.next_path(&f.sent)) {
            self.dispatch(fi, pid, idx);
            return;
        }
        if self.flows[fi].pending.len() >= self.cfg.queue_capacity {
            self.drop_packet(pid, DropReason::NoRoute, None);
        } else {
            self.flows[fi].pending.push_back(pid);
        }
        self.maybe_discover(fi);
    }

    fn dispatch(&mut self, fi: usize, pid: usize, idx: usize) {
        let f = &mut self.flows[fi];
        let plan = f.plan.as_ref().expect("dispatch needs a plan");
        let path = plan.selected[idx].path.clone();
        f.sent[idx] += 1;
        f.dispatched += 1;
        let src = path.src();
        note!(self, "route={pid}:{path}");
        let p = &mut self.packets[pid];
        p.path = Some(path);
        p.hop = 0;
        self.enqueue(src, pid);
    }

    /// Accepts a packet into a node's FIFO or drops it on overflow.
    fn enqueue(&mut self, n: NodeId, pid: usize) {
        let flow = self.packets[pid].flow;
        self.nodes[n.0].traffic.arrive(flow);
        if self.nodes[n.0].queue.len() >= self.cfg.queue_capacity {
            self.drop_packet(pid, DropReason::QueueOverflow, Some(n));
            return;
        }
        self.nodes[n.0].queue.push_back(pid);
        if !self.nodes[n.0].service_pending {
            let spacing = 1.0 / self.cfg.max_departure_rate;
            let at = self.now.max(self.nodes[n.0].last_service + spacing);
            self.nodes[n.0].service_pending = true;
            self.schedule(at, EventKind::QueueService { node: n });
        }
    }

    fn on_service(&mut self, n: NodeId) {
        self.nodes[n.0].service_pending = false;
        if !self.alive(n) {
            return;
        }
        let Some(pid) = self.nodes[n.0].queue.pop_front() else {
            return;
        };
        let spacing = 1.0 / self.cfg.max_departure_rate;
        self.nodes[n.0].last_service = self.now;
        let (next, flow, size) = {
            let p = &self.packets[pid];
            let path = p.path.as_ref().expect("queued packets are routed");
            (path.nodes()[p.hop + 1], p.flow, p.size)
        };
        note!(self, "packet={pid} next={next}");
        if !self.alive(next) {
            self.drop_packet(pid, DropReason::NodeDead, Some(n));
            self.notify_source(pid);
        } else if !self.linked(n, next) {
            self.drop_packet(pid, DropReason::LinkBreak, Some(n));
            self.notify_source(pid);
        } else {
            self.note_tx(n);
            self.nodes[n.0].traffic.depart(flow);
            self.nodes[n.0].busy_time += spacing;
            self.on_wire += 1;
            self.schedule(
                self.now + hop_latency(size),
                EventKind::PacketHop {
                    packet: pid,
                    to: next,
                },
            );
            self.charge(n, self.cfg.energy_send_per_packet, true);
            self.charge(next, self.cfg.energy_recv_per_packet, true);
        }
        if self.alive(n) && !self.nodes[n.0].queue.is_empty() {
            self.nodes[n.0].service_pending = true;
            self.schedule(self.now + spacing, EventKind::QueueService { node: n });
        }
    }

    fn on_packet_hop(&mut self, pid: usize, to: NodeId) {
        self.on_wire -= 1;
        let now = self.now;
        let p = &mut self.packets[pid];
        p.hop += 1;
        let path = p.path.clone().expect("packets on the wire are routed");
        if to == path.dst() {
            p.status = PacketStatus::Delivered;
            p.delivered_at = Some(now);
            let latency = now - p.created_at;
            let fi = p.flow;
            note!(self, "delivered={pid}");
            if let Some(plan) = self.flows[fi].plan.as_mut() {
                if let Some(i) = plan.position_of(&path) {
                    plan.selected[i].observe_delay(latency);
                }
            }
            return;
        }
        if !self.alive(to) {
            let flow = self.packets[pid].flow;
            self.nodes[to.0].traffic.arrive(flow);
            self.drop_packet(pid, DropReason::NodeDead, Some(to));
            self.notify_source(pid);
            return;
        }
        self.enqueue(to, pid);
    }

    // -----------------------------------------------------------------------
    // route discovery
    // -----------------------------------------------------------------------

    fn maybe_discover(&mut self, fi: usize) {
        let f = &self.flows[fi];
        if f.discovering.is_none() && self.now >= f.next_discovery_at {
            let (src, dst) = (f.flow.src, f.flow.dst);
            self.start_discovery(Some(fi), src, dst);
        }
    }

    fn start_discovery(&mut self, flow: Option<usize>, src: NodeId, dst: NodeId) -> u64 {
        let id = self.next_request;
        self.next_request += 1;
        self.discoveries.insert(
            id,
            Discovery {
                flow,
                dst,
                seen: BTreeSet::from([src]),
                routes: Vec::new(),
                closed: false,
                replies: Vec::new(),
            },
        );
        if let Some(fi) = flow {
            self.flows[fi].discovering = Some(id);
            self.flows[fi].discoveries += 1;
        }
        note!(self, "rreq={id} {src}->{dst}");
        self.schedule(
            self.now + settle_delay(),
            EventKind::RouteSettle { request: id },
        );
        self.broadcast_request(id, src, vec![src]);
        id
    }

    fn broadcast_request(&mut self, id: u64, from: NodeId, route: Vec<NodeId>) {
        if !self.alive(from) {
            return;
        }
        self.tx_control(from);
        let at = self.now + control_latency();
        for m in self.neighbors_of(from) {
            self.rx_control(m);
            if !route.contains(&m) {
                self.schedule(
                    at,
                    EventKind::RouteRequestHop {
                        request: id,
                        at: m,
                        route: route.clone(),
                    },
                );
            }
        }
    }

    fn on_request(&mut self, id: u64, at: NodeId, route: Vec<NodeId>) {
        if !self.alive(at) {
            return;
        }
        let now = self.now;
        let Some(d) = self.discoveries.get_mut(&id) else {
            return;
        };
        if at == d.dst {
            if d.closed {
                return;
            }
            if d.routes.is_empty() {
                self.queue.push(
                    now + collection_window(),
                    EventKind::RouteCollect { request: id },
                );
            }
            let mut nodes = route;
            nodes.push(at);
            let path = Path::new(nodes).expect("recorded routes never revisit a node");
            note!(self, "collect={path}");
            self.discoveries.get_mut(&id).unwrap().routes.push(path);
            return;
        }
        if !d.seen.insert(at) || route.len() >= ROUTE_TTL {
            return;
        }
        let mut next = route;
        next.push(at);
        self.broadcast_request(id, at, next);
    }

    fn on_collect(&mut self, id: u64) {
        let Some(d) = self.discoveries.get_mut(&id) else {
            return;
        };
        d.closed = true;
        let routes = d.routes.clone();
        let now = self.now;
        for path in routes {
            let last = path.hop_count();
            let energy = self.nodes[path.dst().0].remaining_energy();
            self.send_reply(id, path, last, Vec::new(), energy, now);
        }
    }

    /// Sends the reply held by `path[from_idx]` one hop towards the source.
    fn send_reply(
        &mut self,
        id: u64,
        path: Path,
        from_idx: usize,
        labels: Vec<FuzzyLabel>,
        min_energy: f64,
        sent_at: f64,
    ) {
        let from = path.nodes()[from_idx];
        let to = path.nodes()[from_idx - 1];
        if !self.alive(from) || !self.alive(to) || !self.linked(from, to) {
            note!(self, "rrep_lost={path}@{from}");
            return;
        }
        self.tx_control(from);
        self.rx_control(to);
        self.schedule(
            self.now + control_latency(),
            EventKind::RouteReplyHop {
                request: id,
                path,
                at: from_idx - 1,
                labels,
                min_energy,
                sent_at,
            },
        );
    }

    fn on_reply(
        &mut self,
        id: u64,
        path: Path,
        at: usize,
        mut labels: Vec<FuzzyLabel>,
        min_energy: f64,
        sent_at: f64,
    ) {
        let j = path.nodes()[at];
        let k = path.nodes()[at + 1];
        if !self.alive(j) {
            return;
        }
        let Some(flow) = self.discoveries.get(&id).map(|d| d.flow) else {
            return;
        };
        let reading = self.link_reading(j, k, flow);
        let e = reading.estimate;
        note!(
            self,
            "link={j}->{k} lpm={:.9} lpe={:.9} le={:.9} dpr={:.9} tm={} life={}",
            e.lpm,
            e.lpe,
            reading.le,
            e.dpr,
            e.tm,
            e.link_life
        );
        labels.push(e.link_life);
        let min_energy = min_energy.min(self.nodes[j.0].remaining_energy());
        if at > 0 {
            self.send_reply(id, path, at, labels, min_energy, sent_at);
            return;
        }
        labels.reverse();
        let delay = (self.now - sent_at).max(control_latency());
        let now = self.now;
        let candidate =
            RouteCandidate::new(path, labels, delay, now, min_energy).expect("one label per hop");
        if let Some(d) = self.discoveries.get_mut(&id) {
            d.replies.push(candidate);
        }
    }

    fn on_settle(&mut self, id: u64) {
        let Some(d) = self.discoveries.remove(&id) else {
            return;
        };
        let Some(fi) = d.flow else {
            self.standalone.insert(id, d.replies);
            return;
        };
        self.flows[fi].discovering = None;
        if d.replies.is_empty() {
            note!(self, "no_route flow={fi}");
            self.flows[fi].next_discovery_at = self.now + DISCOVERY_BACKOFF;
            if self.flows[fi].plan.is_none() {
                let pending: Vec<usize> = self.flows[fi].pending.drain(..).collect();
                for pid in pending {
                    self.drop_packet(pid, DropReason::NoRoute, None);
                }
            }
            return;
        }
        let f = &self.flows[fi];
        let remaining = f.flow.total_packets - f.dispatched;
        if remaining == 0 {
            return;
        }
        let plan = plan_for(
            self.cfg.protocol,
            fi,
            d.replies,
            self.cfg.path_count,
            remaining,
        )
        .expect("non-empty candidate set");
        self.install_plan(fi, plan);
        let pending: Vec<usize> = self.flows[fi].pending.drain(..).collect();
        for pid in pending {
            self.dispatch_or_buffer(fi, pid);
        }
        if self.cfg.protocol == Protocol::Dbmf && !self.flows[fi].refresh_scheduled {
            self.flows[fi].refresh_scheduled = true;
            self.schedule(
                self.now + REFRESH_INTERVAL,
                EventKind::PlanRefresh { flow: fi },
            );
        }
    }

    fn install_plan(&mut self, fi: usize, plan: RoutePlan) {
        if self.trace.is_some() {
            let mut s = String::new();
            for (c, q) in plan.selected.iter().zip(&plan.partitions) {
                let _ = write!(
                    s,
                    "{}:{}:{}:{:.9},",
                    c.path, q, c.route_life, c.delay_estimate
                );
            }
            self.notes.push(format!(
                "plan flow={fi} paths={} pd={:.9}",
                s.trim_end_matches(','),
                plan.pd
            ));
        }
        let f = &mut self.flows[fi];
        f.sent = vec![0; plan.selected.len()];
        f.plan = Some(plan);
    }

    fn on_route_error(&mut self, fi: usize, path: Path) {
        let f = &self.flows[fi];
        let Some(plan) = f.plan.as_ref() else {
            return;
        };
        if plan.position_of(&path).is_none() {
            return;
        }
        let unsent: Vec<u64> = plan
            .partitions
            .iter()
            .zip(&f.sent)
            .map(|(q, s)| q.saturating_sub(*s))
            .collect();
        let next = on_failure(self.cfg.protocol, plan, &path, &unsent);
        note!(self, "failed={path} flow={fi}");
        if next.needs_discovery || next.selected.is_empty() {
            self.flows[fi].plan = None;
            self.flows[fi].sent.clear();
            if self.flows[fi].dispatched < self.flows[fi].flow.total_packets {
                self.maybe_discover(fi);
            }
        } else {
            self.install_plan(fi, next);
        }
    }

    fn on_refresh(&mut self, fi: usize) {
        self.flows[fi].refresh_scheduled = false;
        let f = &self.flows[fi];
        if f.dispatched >= f.flow.total_packets {
            return;
        }
        if f.discovering.is_none() {
            if let Some(plan) = f.plan.clone() {
                let mut doomed = false;
                let mut relabeled = plan.clone();
                for c in relabeled.selected.iter_mut() {
                    let mut labels = Vec::with_capacity(c.path.hop_count());
                    for (j, k) in c.path.hops() {
                        if self.alive(j) {
                            self.tx_control(j);
                            if self.alive(k) {
                                self.rx_control(k);
                            }
                        }
                        labels.push(self.link_reading(j, k, Some(fi)).estimate.link_life);
                    }
                    c.relabel(labels);
                    doomed |= c.route_life == FuzzyLabel::A;
                }
                let lives: Vec<String> = relabeled
                    .selected
                    .iter()
                    .map(|c| c.route_life.to_string())
                    .collect();
                note!(self, "refresh flow={fi} lives={}", lives.join(","));
                if let Some(p) = self.flows[fi].plan.as_mut() {
                    for (dst, src) in p.selected.iter_mut().zip(relabeled.selected) {
                        dst.relabel(src.link_labels);
                    }
                }
                if doomed {
                    let (src, dst) = (self.flows[fi].flow.src, self.flows[fi].flow.dst);
                    self.start_discovery(Some(fi), src, dst);
                }
            }
        }
        if self.now + REFRESH_INTERVAL < self.cfg.sim_duration {
            self.flows[fi].refresh_scheduled = true;
            self.schedule(
                self.now + REFRESH_INTERVAL,
                EventKind::PlanRefresh { flow: fi },
            );
        }
    }

    /// Floods a route request from `src` and runs the event loop until the
    /// source settles, returning every recorded path that came back.
    pub fn discover(
        &mut self,
        src: NodeId,
        dst: NodeId,
    ) -> Result<Vec<RouteCandidate>, RoutingError> {
        let id = self.start_discovery(None, src, dst);
        while !self.standalone.contains_key(&id) {
            if !self.step() {
                break;
            }
        }
        match self.standalone.remove(&id) {
            Some(c) if !c.is_empty() => Ok(c),
            _ => Err(RoutingError::NoRouteFound),
        }
    }
}

/// Runs one scenario without a trace.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, EngineError> {
    Ok(Simulation::new(cfg.clone())?.finish())
}

/// Runs one scenario and keeps the full event trace.
pub fn run_traced(cfg: &ScenarioConfig) -> Result<RunOutput, EngineError> {
    Ok(Simulation::builder(cfg.clone())
        .trace(true)
        .build()?
        .finish())
}
