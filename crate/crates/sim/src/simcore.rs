//! Deterministic discrete-event simulation of MHCL over a topology.
//!
//! One run drives a [`NodeEngine`] per node. Unicasts and beacons travel with
//! the configured link delay and loss model; at the application start time
//! every non-root node sends one packet to the root and the root answers each
//! with one packet sent down the tree.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use mhcl_core::messages::{Kind, BROADCAST};
use mhcl_core::node::{Hop, Notice, RouteError};
use mhcl_core::oracle::{ParentMap, Plan};
use mhcl_core::{
    AddressRange, Body, Command, Direction, EngineConfig, HostAddress, Input, MhclMessage, Mode, NodeEngine, NodeId,
    RankBeacon, ReserveFraction, Role, StabilizationParams, TimerId,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::link::{sample_loss, FailureModel, LinkDelay, LossOutcome};
use crate::queue::EventQueue;
use crate::topology::{derive_seed, Topology};
use crate::trace::{Outcome, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolMode {
    Greedy,
    Aggregate,
    /// Storing-mode routing with bounded per-node tables.
    Baseline,
}

impl ProtocolMode {
    pub fn mhcl(self) -> Option<Mode> {
        match self {
            ProtocolMode::Greedy => Some(Mode::Greedy),
            ProtocolMode::Aggregate => Some(Mode::Aggregate),
            ProtocolMode::Baseline => None,
        }
    }
}

impl fmt::Display for ProtocolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolMode::Greedy => "greedy",
            ProtocolMode::Aggregate => "aggregate",
            ProtocolMode::Baseline => "baseline",
        })
    }
}

impl FromStr for ProtocolMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(ProtocolMode::Greedy),
            "aggregate" => Ok(ProtocolMode::Aggregate),
            "baseline" => Ok(ProtocolMode::Baseline),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

/// What a full baseline routing table does with a new destination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TablePolicy {
    /// Refuse the new route.
    FifoReject,
    /// Evict the least recently used route.
    Lru,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mode: ProtocolMode,
    pub failure: FailureModel,
    pub reserve: ReserveFraction,
    pub params: StabilizationParams,
    pub addr_width: u8,
    /// Node start times are uniform in `[0, start_jitter_ms]`.
    pub start_jitter_ms: u64,
    pub link: LinkDelay,
    pub max_retransmissions: u8,
    pub app_start_ms: u64,
    /// Each node's application packet leaves at a uniform offset in `[0, app_spread_ms)`.
    pub app_spread_ms: u64,
    pub count_window_ms: u64,
    pub horizon_ms: u64,
    pub baseline_capacity: usize,
    pub baseline_policy: TablePolicy,
    pub baseline_refresh_ms: u64,
    pub seed: u64,
    pub trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: ProtocolMode::Greedy,
            failure: FailureModel::NONE,
            reserve: ReserveFraction::DEFAULT,
            params: StabilizationParams::default(),
            addr_width: 16,
            start_jitter_ms: 1_000,
            link: LinkDelay::default(),
            max_retransmissions: 3,
            app_start_ms: 180_000,
            app_spread_ms: 10_000,
            count_window_ms: 180_000,
            horizon_ms: 600_000,
            baseline_capacity: 20,
            baseline_policy: TablePolicy::FifoReject,
            baseline_refresh_ms: 60_000,
            seed: 0,
            trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !self.failure.is_valid() {
            return bad("failure rates must lie in [0, 1]");
        }
        if !self.params.is_valid() {
            return bad("stabilization multipliers must be >= 1 and dio_min_exp in 1..=40");
        }
        if !(1..=16).contains(&self.addr_width) {
            return bad("address width must be between 1 and 16 bits");
        }
        if self.app_start_ms > self.horizon_ms {
            return bad("application start lies beyond the horizon");
        }
        if self.mode == ProtocolMode::Baseline && self.baseline_refresh_ms == 0 {
            return bad("baseline refresh period must be positive");
        }
        Ok(())
    }

    pub fn root_range(&self) -> AddressRange {
        AddressRange::full(self.addr_width).expect("validated width")
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("topology has {0} nodes; the root range cannot address them")]
    TooManyNodes(usize),
    #[error("protocol stalled: {} node(s) unaddressed without loss or exhaustion (first: {})", .unaddressed.len(), .unaddressed[0])]
    ProtocolStall { unaddressed: Vec<NodeId> },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AppStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped_loss: u64,
    pub dropped_noroute: u64,
    pub dropped_unaddressed: u64,
}

impl AppStats {
    pub fn resolved(&self) -> u64 {
        self.delivered + self.dropped_loss + self.dropped_noroute + self.dropped_unaddressed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressEvent {
    pub node: NodeId,
    pub time_ms: u64,
    pub address: HostAddress,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub n: usize,
    /// Height of the final parent tree.
    pub dag_depth: usize,
    /// Last address assignment (MHCL) or last route stored at the root (baseline).
    pub setup_ms: Option<u64>,
    /// DIO_MHCL + DIOACK_MHCL transmissions inside the counting window
    /// (routing beacons for the baseline).
    pub dio_count: u64,
    /// DAO_MHCL + DAOACK_MHCL transmissions inside the counting window
    /// (route advertisements for the baseline).
    pub dao_count: u64,
    /// Retransmissions inside the window, already included in the counts above.
    pub retransmissions: u64,
    /// Routing beacons inside the window.
    pub beacon_count: u64,
    pub addressed: usize,
    pub addr_rate: f64,
    pub up: AppStats,
    pub down: AppStats,
    pub up_rate: f64,
    pub down_rate: f64,
    pub timed_out: bool,
    pub allocation_failures: usize,
    pub delayed_connections: usize,
    pub address_log: Vec<AddressEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeReport {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub own: Option<HostAddress>,
    pub range: Option<AddressRange>,
    pub addressed_at: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Metrics,
    pub nodes: Vec<NodeReport>,
    pub trace: Vec<TraceRecord>,
    /// Final engine states (MHCL modes only).
    pub engines: Vec<NodeEngine>,
}

impl RunOutput {
    /// Final parent links of every node that joined.
    pub fn parent_map(&self, root: NodeId) -> ParentMap {
        let links = self.nodes.iter().filter_map(|r| r.parent.map(|p| (r.id, p)));
        ParentMap::new(root, links).expect("frozen parents never form a cycle")
    }

    /// Address and range of every node that holds both.
    pub fn plan(&self) -> Plan {
        self.nodes.iter().filter_map(|r| Some((r.id, (r.own?, r.range?)))).collect()
    }

    /// Hop sequence of a downward packet from `root` to `dest`.
    pub fn route_down(&self, root: NodeId, dest: HostAddress) -> Result<Vec<NodeId>, RouteError> {
        let mut path = vec![root];
        let mut at = root;
        for _ in 0..=self.engines.len() {
            match self.engines[at.0 as usize].forward_down(dest)? {
                Hop::Local => return Ok(path),
                Hop::Child(c) => {
                    path.push(c);
                    at = c;
                }
            }
        }
        Err(RouteError::NoRoute)
    }
}

pub fn tree_depths(parents: &[Option<NodeId>], root: NodeId) -> Vec<Option<usize>> {
    let mut depth = vec![None; parents.len()];
    depth[root.0 as usize] = Some(0);
    for v in 0..parents.len() {
        let mut chain = Vec::new();
        let mut at = v;
        while depth[at].is_none() {
            chain.push(at);
            match parents[at] {
                Some(p) if chain.len() <= parents.len() => at = p.0 as usize,
                _ => break,
            }
        }
        if let Some(d) = depth[at] {
            for (k, &c) in chain.iter().rev().enumerate() {
                depth[c] = Some(d + k + 1);
            }
        }
    }
    depth
}

/// Fraction with the convention that an empty population scores 1.
pub(crate) fn rate(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

// ----- shared radio medium -----

pub(crate) struct Medium<'t> {
    pub topo: &'t Topology,
    pub failure: FailureModel,
    pub link: LinkDelay,
    pub rng: ChaCha8Rng,
    pub start_at: Vec<u64>,
    pub trace: Option<Vec<TraceRecord>>,
}

impl<'t> Medium<'t> {
    fn log(&mut self, time_ms: u64, src: NodeId, dst: NodeId, kind: &'static str, outcome: Outcome, bytes: &[u8]) {
        if let Some(t) = &mut self.trace {
            t.push(TraceRecord { time_ms, src, dst, kind, outcome, bytes: bytes.to_vec() });
        }
    }

    fn collision(&mut self) -> bool {
        self.failure.collision_rate > 0.0 && self.rng.random_bool(self.failure.collision_rate)
    }

    /// Arrival time, or `None` if the packet is lost.
    pub fn unicast(&mut self, now: u64, src: NodeId, dst: NodeId, kind: &'static str, bytes: &[u8]) -> Option<u64> {
        debug_assert!(self.topo.neighbors(src).contains(&dst), "{src} -> {dst} is not a link");
        let loss = sample_loss(&self.failure, &mut self.rng);
        let delay = self.link.sample(&mut self.rng);
        let outcome = match loss {
            LossOutcome::DropAll => Outcome::DropTx,
            LossOutcome::DropDestOnly => Outcome::DropRx,
            LossOutcome::DeliverAll if self.collision() || now + delay < self.start_at[dst.0 as usize] => {
                Outcome::DropRx
            }
            LossOutcome::DeliverAll => Outcome::Delivered,
        };
        self.log(now, src, dst, kind, outcome, bytes);
        (outcome == Outcome::Delivered).then_some(now + delay)
    }

    /// Receivers and arrival times of a local broadcast.
    pub fn broadcast(&mut self, now: u64, src: NodeId, kind: &'static str, bytes: &[u8]) -> Vec<(NodeId, u64)> {
        let topo = self.topo;
        let tx_lost = self.failure.kind == crate::link::FailureKind::Tx
            && sample_loss(&self.failure, &mut self.rng) == LossOutcome::DropAll;
        let mut out = Vec::new();
        for &dst in topo.neighbors(src) {
            let delay = self.link.sample(&mut self.rng);
            let outcome = if tx_lost {
                Outcome::DropTx
            } else if (self.failure.kind == crate::link::FailureKind::Rx
                && sample_loss(&self.failure, &mut self.rng) == LossOutcome::DropDestOnly)
                || self.collision()
                || now + delay < self.start_at[dst.0 as usize]
            {
                Outcome::DropRx
            } else {
                Outcome::Delivered
            };
            self.log(now, src, dst, kind, outcome, bytes);
            if outcome == Outcome::Delivered {
                out.push((dst, now + delay));
            }
        }
        out
    }
}

/// Per-direction application bookkeeping.
#[derive(Debug, Default)]
pub(crate) struct AppTracker {
    pub up: AppStats,
    pub down: AppStats,
    pub launched: usize,
}

impl AppTracker {
    pub fn stats(&mut self, d: Direction) -> &mut AppStats {
        match d {
            Direction::Up => &mut self.up,
            Direction::Down => &mut self.down,
        }
    }

    pub fn done(&self, expected_launches: usize) -> bool {
        self.launched == expected_launches
            && self.up.resolved() == self.up.sent
            && self.down.resolved() == self.down.sent
    }
}

pub(crate) fn start_times(cfg: &SimConfig, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    (0..n).map(|_| if cfg.start_jitter_ms == 0 { 0 } else { rng.random_range(0..=cfg.start_jitter_ms) }).collect()
}

pub(crate) fn app_times(cfg: &SimConfig, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    (0..n)
        .map(|_| cfg.app_start_ms + if cfg.app_spread_ms == 0 { 0 } else { rng.random_range(0..cfg.app_spread_ms) })
        .collect()
}

// ----- MHCL run -----

#[derive(Debug, Clone)]
enum Packet {
    Control(MhclMessage),
    Beacon(RankBeacon),
    App(MhclMessage),
}

#[derive(Debug, Clone)]
enum Event {
    Start(NodeId),
    Timer { node: NodeId, timer: TimerId, generation: u64 },
    Arrive { to: NodeId, packet: Packet },
    AppSend(NodeId),
    AppPhase,
}

struct MhclRun<'t> {
    cfg: &'t SimConfig,
    queue: EventQueue<Event>,
    medium: Medium<'t>,
    engines: Vec<NodeEngine>,
    timers: Vec<BTreeMap<TimerId, u64>>,
    addressed_at: Vec<Option<u64>>,
    address_log: Vec<AddressEvent>,
    dio_count: u64,
    dao_count: u64,
    retransmissions: u64,
    beacon_count: u64,
    allocation_failures: usize,
    delayed_connections: usize,
    app: AppTracker,
}

/// Runs one simulation. Baseline mode is delegated to [`crate::baseline`].
pub fn run(cfg: &SimConfig, topo: &Topology) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let Some(mode) = cfg.mode.mhcl() else {
        return crate::baseline::run_baseline_storing(cfg, topo);
    };
    let n = topo.len();
    if n as u64 > cfg.root_range().len() as u64 {
        return Err(SimError::TooManyNodes(n));
    }
    let engines = topo
        .ids()
        .map(|id| {
            let role = if id == topo.root() { Role::Root } else { Role::NonRoot };
            let mut ec = EngineConfig::new(id, role, mode);
            ec.params = cfg.params;
            ec.reserve = cfg.reserve;
            ec.root_range = cfg.root_range();
            ec.seed = derive_seed(cfg.seed, 1_000 + id.0 as u64);
            ec.max_retransmissions = cfg.max_retransmissions;
            NodeEngine::new(ec)
        })
        .collect();
    let start_at = start_times(cfg, n);
    let mut sim = MhclRun {
        cfg,
        queue: EventQueue::new(),
        medium: Medium {
            topo,
            failure: cfg.failure,
            link: cfg.link,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3)),
            start_at: start_at.clone(),
            trace: cfg.trace.then(Vec::new),
        },
        engines,
        timers: vec![BTreeMap::new(); n],
        addressed_at: vec![None; n],
        address_log: Vec::new(),
        dio_count: 0,
        dao_count: 0,
        retransmissions: 0,
        beacon_count: 0,
        allocation_failures: 0,
        delayed_connections: 0,
        app: AppTracker::default(),
    };
    for (i, t) in start_at.iter().enumerate() {
        sim.queue.push(*t, Event::Start(NodeId(i as u16)));
    }
    sim.queue.push(cfg.app_start_ms, Event::AppPhase);
    for (i, t) in app_times(cfg, n).into_iter().enumerate() {
        if NodeId(i as u16) != topo.root() {
            sim.queue.push(t, Event::AppSend(NodeId(i as u16)));
        }
    }
    sim.run_loop()
}

impl<'t> MhclRun<'t> {
    fn root(&self) -> NodeId {
        self.medium.topo.root()
    }

    fn run_loop(mut self) -> Result<RunOutput, SimError> {
        let expected = self.engines.len() - 1;
        let mut timed_out = false;
        // A lone root has no traffic; run its timers up to the application phase.
        let lone = expected == 0;
        while !self.app.done(expected) || (lone && self.queue.peek_time().is_some_and(|t| t <= self.cfg.app_start_ms)) {
            let Some(t) = self.queue.peek_time() else {
                break;
            };
            if t > self.cfg.horizon_ms {
                timed_out = true;
                break;
            }
            let (now, ev) = self.queue.pop().unwrap();
            match ev {
                Event::Start(id) => self.feed(now, id, Input::Start),
                Event::Timer { node, timer, generation } => {
                    if self.timers[node.0 as usize].get(&timer) == Some(&generation) {
                        self.feed(now, node, Input::Timer(timer));
                    }
                }
                Event::Arrive { to, packet } => match packet {
                    Packet::Control(m) => self.feed(now, to, Input::Message(m)),
                    Packet::Beacon(b) => self.feed(now, to, Input::Beacon(b)),
                    Packet::App(m) => self.app_arrive(now, to, m),
                },
                Event::AppSend(id) => self.app_launch(now, id),
                Event::AppPhase => self.check_stall()?,
            }
        }
        if self.queue.peek_time().is_none() && !self.app.done(expected) {
            timed_out = true;
        }
        Ok(self.finish(timed_out))
    }

    fn check_stall(&self) -> Result<(), SimError> {
        if !self.cfg.failure.is_lossless() || self.allocation_failures > 0 {
            return Ok(());
        }
        let unaddressed: Vec<NodeId> =
            self.engines.iter().filter(|e| !e.is_root() && e.own_address().is_none()).map(|e| e.id()).collect();
        if unaddressed.is_empty() {
            Ok(())
        } else {
            Err(SimError::ProtocolStall { unaddressed })
        }
    }

    fn in_window(&self, now: u64) -> bool {
        now < self.cfg.count_window_ms
    }

    fn feed(&mut self, now: u64, id: NodeId, input: Input) {
        let cmds = self.engines[id.0 as usize].handle(input);
        for c in cmds {
            self.execute(now, id, c);
        }
    }

    fn execute(&mut self, now: u64, id: NodeId, cmd: Command) {
        match cmd {
            Command::Send { msg, retransmission } => {
                if self.in_window(now) {
                    match msg.kind() {
                        Kind::Dio | Kind::DioAck => self.dio_count += 1,
                        Kind::Dao | Kind::DaoAck => self.dao_count += 1,
                        Kind::AppData => {}
                    }
                    if retransmission {
                        self.retransmissions += 1;
                    }
                }
                let bytes = msg.encode();
                if let Some(at) = self.medium.unicast(now, id, msg.dst, msg.kind().name(), &bytes) {
                    self.queue.push(at, Event::Arrive { to: msg.dst, packet: Packet::Control(msg) });
                }
            }
            Command::Broadcast(b) => {
                if self.in_window(now) {
                    self.beacon_count += 1;
                }
                for (to, at) in self.medium.broadcast(now, id, b.name(), &b.encode()) {
                    self.queue.push(at, Event::Arrive { to, packet: Packet::Beacon(b) });
                }
            }
            Command::ArmTimer { timer, after_ms } => {
                let slot = self.timers[id.0 as usize].entry(timer).or_insert(0);
                let generation = next_generation(slot);
                self.queue.push(now + after_ms, Event::Timer { node: id, timer, generation });
            }
            Command::CancelTimer(timer) => {
                // Generations only grow, so pending firings become stale.
                if let Some(slot) = self.timers[id.0 as usize].get_mut(&timer) {
                    next_generation(slot);
                }
            }
            Command::Notify(notice) => match notice {
                Notice::Addressed { .. } => {
                    let e = &self.engines[id.0 as usize];
                    if let (Some(address), None) = (e.own_address(), self.addressed_at[id.0 as usize]) {
                        self.addressed_at[id.0 as usize] = Some(now);
                        self.address_log.push(AddressEvent { node: id, time_ms: now, address });
                    }
                }
                Notice::AllocationFailure { .. } => self.allocation_failures += 1,
                Notice::DelayedConnection { .. } => self.delayed_connections += 1,
                _ => {}
            },
        }
    }

    fn app_send(&mut self, now: u64, from: NodeId, mut msg: MhclMessage, to: NodeId) {
        msg.src = from;
        msg.dst = to;
        let Body::AppData { direction, .. } = msg.body else { unreachable!() };
        match self.medium.unicast(now, from, to, Kind::AppData.name(), &msg.encode()) {
            Some(at) => self.queue.push(at, Event::Arrive { to, packet: Packet::App(msg) }),
            None => self.app.stats(direction).dropped_loss += 1,
        }
    }

    fn app_launch(&mut self, now: u64, id: NodeId) {
        self.app.launched += 1;
        self.app.up.sent += 1;
        let root_addr = self.engines[self.root().0 as usize]
            .own_address()
            .unwrap_or(HostAddress(self.cfg.root_range().start() as u16));
        let msg = MhclMessage {
            src: id,
            dst: BROADCAST,
            seq: id.0,
            body: Body::AppData { dest: root_addr, direction: Direction::Up },
        };
        self.forward(now, id, msg);
    }

    fn app_arrive(&mut self, now: u64, at: NodeId, msg: MhclMessage) {
        let Body::AppData { direction, .. } = msg.body else { unreachable!() };
        if direction == Direction::Up && at == self.root() {
            self.app.up.delivered += 1;
            self.reply(now, NodeId(msg.seq));
            return;
        }
        self.forward(now, at, msg);
    }

    /// Root answers the node that sent an upward packet.
    fn reply(&mut self, now: u64, origin: NodeId) {
        self.app.down.sent += 1;
        let Some(dest) = self.engines[origin.0 as usize].own_address() else {
            self.app.down.dropped_unaddressed += 1;
            return;
        };
        let msg = MhclMessage {
            src: self.root(),
            dst: BROADCAST,
            seq: origin.0,
            body: Body::AppData { dest, direction: Direction::Down },
        };
        self.forward(now, self.root(), msg);
    }

    fn forward(&mut self, now: u64, at: NodeId, msg: MhclMessage) {
        let Body::AppData { dest, direction } = msg.body else { unreachable!() };
        let engine = &self.engines[at.0 as usize];
        match direction {
            Direction::Up => match engine.forward_up() {
                Ok(parent) => self.app_send(now, at, msg, parent),
                Err(_) => self.app.up.dropped_noroute += 1,
            },
            Direction::Down => match engine.forward_down(dest) {
                Ok(Hop::Local) => self.app.down.delivered += 1,
                Ok(Hop::Child(c)) => self.app_send(now, at, msg, c),
                Err(RouteError::NotAddressed) => self.app.down.dropped_unaddressed += 1,
                Err(_) => self.app.down.dropped_noroute += 1,
            },
        }
    }

    fn finish(self, timed_out: bool) -> RunOutput {
        let n = self.engines.len();
        let root = self.root();
        let parents: Vec<Option<NodeId>> = self.engines.iter().map(|e| e.forward_up().ok()).collect();
        let depths = tree_depths(&parents, root);
        let addressed = self.engines.iter().filter(|e| !e.is_root() && e.own_address().is_some()).count();
        let nonroot = (n - 1) as u64;
        let metrics = Metrics {
            n,
            dag_depth: depths.iter().flatten().copied().max().unwrap_or(0),
            setup_ms: self.addressed_at.iter().flatten().copied().max(),
            dio_count: self.dio_count,
            dao_count: self.dao_count,
            retransmissions: self.retransmissions,
            beacon_count: self.beacon_count,
            addressed,
            addr_rate: rate(addressed as u64, nonroot),
            up: self.app.up,
            down: self.app.down,
            up_rate: rate(self.app.up.delivered, nonroot),
            down_rate: rate(self.app.down.delivered, nonroot),
            timed_out,
            allocation_failures: self.allocation_failures,
            delayed_connections: self.delayed_connections,
            address_log: self.address_log,
        };
        let nodes = self
            .engines
            .iter()
            .map(|e| NodeReport {
                id: e.id(),
                parent: e.forward_up().ok(),
                own: e.own_address(),
                range: e.range(),
                addressed_at: self.addressed_at[e.id().0 as usize],
            })
            .collect();
        RunOutput { metrics, nodes, trace: self.medium.trace.unwrap_or_default(), engines: self.engines }
    }
}

pub(crate) fn next_generation(slot: &mut u64) -> u64 {
    *slot += 1;
    *slot
}
