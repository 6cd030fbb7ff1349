//! Storing-mode baseline: every router keeps per-destination routes in a
//! bounded table, filled by destination advertisements that travel towards
//! the root. Node addresses are static (the node id).

use mhcl_core::node::{Expiry, ParentSelector, TrickleTimer};
use mhcl_core::{Direction, HostAddress, NodeId, RankBeacon};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::queue::EventQueue;
use crate::simcore::{
    app_times, next_generation, rate, start_times, tree_depths, AppTracker, Medium, Metrics, NodeReport, RunOutput,
    SimConfig, SimError, TablePolicy,
};
use crate::topology::{derive_seed, Topology};

pub const STORING_DAO_KIND: u8 = 0x20;
const APP_KIND: u8 = 0x21;

/// Destination advertisement: `target` is reachable through `src`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoringDao {
    pub src: NodeId,
    pub dst: NodeId,
    pub seq: u16,
    pub target: NodeId,
}

impl StoringDao {
    pub fn encode(&self) -> Vec<u8> {
        let mut v = vec![STORING_DAO_KIND, 0];
        for x in [self.src.0, self.dst.0, self.seq, self.target.0] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v
    }
}

#[derive(Debug, Clone, Copy)]
struct AppPacket {
    origin: NodeId,
    target: NodeId,
    direction: Direction,
}

impl AppPacket {
    fn encode(&self, src: NodeId, dst: NodeId) -> Vec<u8> {
        let dir = match self.direction {
            Direction::Up => 0u8,
            Direction::Down => 1,
        };
        let mut v = vec![APP_KIND, dir];
        for x in [src.0, dst.0, self.origin.0, self.target.0] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Route {
    target: NodeId,
    next_hop: NodeId,
    last_used: u64,
}

/// Bounded destination table.
#[derive(Debug, Clone)]
pub struct RouteTable {
    capacity: usize,
    policy: TablePolicy,
    routes: Vec<Route>,
    pub rejected: u64,
}

impl RouteTable {
    pub fn new(capacity: usize, policy: TablePolicy) -> Self {
        RouteTable { capacity, policy, routes: Vec::new(), rejected: 0 }
    }

    /// Returns whether the route is now stored.
    pub fn store(&mut self, target: NodeId, next_hop: NodeId, now: u64) -> bool {
        if let Some(r) = self.routes.iter_mut().find(|r| r.target == target) {
            r.next_hop = next_hop;
            r.last_used = now;
            return true;
        }
        if self.routes.len() >= self.capacity {
            match self.policy {
                TablePolicy::FifoReject => {
                    self.rejected += 1;
                    return false;
                }
                TablePolicy::Lru => {
                    let Some(victim) = self.routes.iter().enumerate().min_by_key(|(_, r)| r.last_used).map(|(i, _)| i)
                    else {
                        self.rejected += 1;
                        return false;
                    };
                    self.routes.remove(victim);
                }
            }
        }
        self.routes.push(Route { target, next_hop, last_used: now });
        true
    }

    pub fn lookup(&mut self, target: NodeId, now: u64) -> Option<NodeId> {
        let r = self.routes.iter_mut().find(|r| r.target == target)?;
        r.last_used = now;
        Some(r.next_hop)
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    pub fn targets(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.routes.iter().map(|r| r.target)
    }
}

struct Node {
    dag: ParentSelector,
    timer: TrickleTimer,
    timer_gen: u64,
    joined: bool,
    table: RouteTable,
    next_seq: u16,
}

#[derive(Debug, Clone)]
enum Event {
    Start(NodeId),
    ParentTimer { node: NodeId, generation: u64 },
    Refresh(NodeId),
    Beacon { to: NodeId, beacon: RankBeacon },
    Dao { to: NodeId, dao: StoringDao },
    App { to: NodeId, packet: AppPacket },
    AppSend(NodeId),
}

struct BaselineRun<'t> {
    cfg: &'t SimConfig,
    queue: EventQueue<Event>,
    medium: Medium<'t>,
    nodes: Vec<Node>,
    rng: ChaCha8Rng,
    dio_count: u64,
    dao_count: u64,
    root_full_at: Option<u64>,
    root_last_store: Option<u64>,
    app: AppTracker,
}

/// Baseline counterpart of [`crate::simcore::run`].
pub fn run_baseline_storing(cfg: &SimConfig, topo: &Topology) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let n = topo.len();
    let base = cfg.params.base_interval_ms();
    let nodes = (0..n)
        .map(|_| Node {
            dag: ParentSelector::new(),
            timer: TrickleTimer::new(base, cfg.params.sp_child),
            timer_gen: 0,
            joined: false,
            table: RouteTable::new(cfg.baseline_capacity, cfg.baseline_policy),
            next_seq: 1,
        })
        .collect();
    let start_at = start_times(cfg, n);
    let mut sim = BaselineRun {
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
        nodes,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4)),
        dio_count: 0,
        dao_count: 0,
        root_full_at: None,
        root_last_store: None,
        app: AppTracker::default(),
    };
    for (i, t) in start_at.iter().enumerate() {
        sim.queue.push(*t, Event::Start(NodeId(i as u16)));
    }
    for (i, t) in app_times(cfg, n).into_iter().enumerate() {
        if NodeId(i as u16) != topo.root() {
            sim.queue.push(t, Event::AppSend(NodeId(i as u16)));
        }
    }
    Ok(sim.run_loop())
}

impl<'t> BaselineRun<'t> {
    fn root(&self) -> NodeId {
        self.medium.topo.root()
    }

    fn node(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id.0 as usize]
    }

    fn run_loop(mut self) -> RunOutput {
        let expected = self.nodes.len() - 1;
        let mut timed_out = false;
        while !self.app.done(expected) {
            let Some(t) = self.queue.peek_time() else {
                timed_out = true;
                break;
            };
            if t > self.cfg.horizon_ms {
                timed_out = true;
                break;
            }
            let (now, ev) = self.queue.pop().unwrap();
            match ev {
                Event::Start(id) => self.on_start(now, id),
                Event::ParentTimer { node, generation } => {
                    if self.node(node).timer_gen == generation {
                        self.on_parent_timer(now, node);
                    }
                }
                Event::Refresh(id) => {
                    self.advertise(now, id, id);
                    self.queue.push(now + self.cfg.baseline_refresh_ms, Event::Refresh(id));
                }
                Event::Beacon { to, beacon } => self.on_beacon(now, to, beacon),
                Event::Dao { to, dao } => self.on_dao(now, to, dao),
                Event::App { to, packet } => self.on_app(now, to, packet),
                Event::AppSend(id) => {
                    self.app.launched += 1;
                    self.app.up.sent += 1;
                    let root = self.root();
                    self.forward(now, id, AppPacket { origin: id, target: root, direction: Direction::Up });
                }
            }
        }
        self.finish(timed_out)
    }

    fn broadcast(&mut self, now: u64, id: NodeId, beacon: RankBeacon) {
        if now < self.cfg.count_window_ms {
            self.dio_count += 1;
        }
        for (to, at) in self.medium.broadcast(now, id, beacon.name(), &beacon.encode()) {
            self.queue.push(at, Event::Beacon { to, beacon });
        }
    }

    fn arm(&mut self, now: u64, id: NodeId, reset: bool) {
        let mut rng = std::mem::replace(&mut self.rng, ChaCha8Rng::seed_from_u64(0));
        let node = self.node(id);
        let after = if reset { node.timer.reset(&mut rng) } else { node.timer.current() };
        let generation = next_generation(&mut node.timer_gen);
        self.rng = rng;
        self.queue.push(now + after, Event::ParentTimer { node: id, generation });
    }

    fn on_start(&mut self, now: u64, id: NodeId) {
        if id == self.root() {
            let n = self.node(id);
            n.dag.set_root();
            n.joined = true;
            self.broadcast(now, id, RankBeacon::Advert { src: id, rank: 0 });
        } else {
            self.broadcast(now, id, RankBeacon::Solicit { src: id });
            self.arm(now, id, true);
        }
    }

    fn on_beacon(&mut self, now: u64, id: NodeId, beacon: RankBeacon) {
        match beacon {
            RankBeacon::Advert { src, rank } => {
                if let Some(r) = self.node(id).dag.on_advert(src, rank) {
                    self.broadcast(now, id, RankBeacon::Advert { src: id, rank: r });
                }
            }
            RankBeacon::Solicit { .. } => {
                if let Some(rank) = self.node(id).dag.rank() {
                    self.broadcast(now, id, RankBeacon::Advert { src: id, rank });
                }
            }
        }
    }

    fn on_parent_timer(&mut self, now: u64, id: NodeId) {
        let node = self.node(id);
        if node.joined {
            return;
        }
        if node.dag.best().is_none() {
            self.broadcast(now, id, RankBeacon::Solicit { src: id });
            self.arm(now, id, true);
            return;
        }
        if node.dag.take_best_changed() {
            self.arm(now, id, true);
            return;
        }
        match node.timer.expire() {
            Expiry::Doubled(_) => self.arm(now, id, false),
            Expiry::AtMax => {
                node.dag.freeze();
                node.joined = true;
                // Announce self and every destination learned before joining.
                let known: Vec<NodeId> = node.table.targets().collect();
                self.advertise(now, id, id);
                for t in known {
                    self.advertise(now, id, t);
                }
                self.queue.push(now + self.cfg.baseline_refresh_ms, Event::Refresh(id));
            }
        }
    }

    /// Sends an advertisement for `target` to the parent.
    fn advertise(&mut self, now: u64, id: NodeId, target: NodeId) {
        let node = self.node(id);
        let Some(parent) = node.dag.parent() else {
            return;
        };
        let seq = node.next_seq;
        node.next_seq = node.next_seq.wrapping_add(1);
        let dao = StoringDao { src: id, dst: parent, seq, target };
        if now < self.cfg.count_window_ms {
            self.dao_count += 1;
        }
        if let Some(at) = self.medium.unicast(now, id, parent, "RPL_DAO", &dao.encode()) {
            self.queue.push(at, Event::Dao { to: parent, dao });
        }
    }

    fn on_dao(&mut self, now: u64, id: NodeId, dao: StoringDao) {
        let root = self.root();
        let n_total = self.nodes.len();
        let stored = self.node(id).table.store(dao.target, dao.src, now);
        if id == root {
            if stored {
                self.root_last_store = Some(now);
            }
            if self.root_full_at.is_none() && self.node(id).table.len() + 1 >= n_total {
                self.root_full_at = Some(now);
            }
            return;
        }
        if self.node(id).joined {
            self.advertise(now, id, dao.target);
        }
    }

    fn send_app(&mut self, now: u64, from: NodeId, to: NodeId, packet: AppPacket) {
        match self.medium.unicast(now, from, to, "APP_DATA", &packet.encode(from, to)) {
            Some(at) => self.queue.push(at, Event::App { to, packet }),
            None => self.app.stats(packet.direction).dropped_loss += 1,
        }
    }

    fn on_app(&mut self, now: u64, id: NodeId, packet: AppPacket) {
        if packet.direction == Direction::Up && id == self.root() {
            self.app.up.delivered += 1;
            self.app.down.sent += 1;
            let down = AppPacket { origin: id, target: packet.origin, direction: Direction::Down };
            self.forward(now, id, down);
            return;
        }
        self.forward(now, id, packet);
    }

    fn forward(&mut self, now: u64, id: NodeId, packet: AppPacket) {
        match packet.direction {
            Direction::Up => match self.node(id).dag.parent() {
                Some(p) if self.node(id).joined => self.send_app(now, id, p, packet),
                _ => self.app.up.dropped_noroute += 1,
            },
            Direction::Down => {
                if packet.target == id {
                    self.app.down.delivered += 1;
                    return;
                }
                let node = self.node(id);
                let next = node
                    .table
                    .lookup(packet.target, now)
                    .or_else(|| node.dag.is_neighbor(packet.target).then_some(packet.target));
                match next {
                    Some(n) => self.send_app(now, id, n, packet),
                    None => self.app.down.dropped_noroute += 1,
                }
            }
        }
    }

    fn finish(self, timed_out: bool) -> RunOutput {
        let n = self.nodes.len();
        let root = self.root();
        let parents: Vec<Option<NodeId>> =
            self.nodes.iter().map(|nd| if nd.joined { nd.dag.parent() } else { None }).collect();
        let depths = tree_depths(&parents, root);
        let joined = (0..n).filter(|&i| NodeId(i as u16) != root && parents[i].is_some()).count();
        let nonroot = (n - 1) as u64;
        let metrics = Metrics {
            n,
            dag_depth: depths.iter().flatten().copied().max().unwrap_or(0),
            setup_ms: self.root_full_at.or(self.root_last_store).or((n == 1).then_some(0)),
            dio_count: self.dio_count,
            dao_count: self.dao_count,
            retransmissions: 0,
            beacon_count: self.dio_count,
            addressed: joined,
            addr_rate: rate(joined as u64, nonroot),
            up: self.app.up,
            down: self.app.down,
            up_rate: rate(self.app.up.delivered, nonroot),
            down_rate: rate(self.app.down.delivered, nonroot),
            timed_out,
            allocation_failures: 0,
            delayed_connections: 0,
            address_log: Vec::new(),
        };
        let nodes = (0..n)
            .map(|i| NodeReport {
                id: NodeId(i as u16),
                parent: parents[i],
                own: Some(HostAddress(i as u16)),
                range: None,
                addressed_at: None,
            })
            .collect();
        RunOutput { metrics, nodes, trace: self.medium.trace.unwrap_or_default(), engines: Vec::new() }
    }
}
