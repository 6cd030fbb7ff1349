use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dag::ParentSelector;
use super::routing::RoutingTable;
use super::timer::{Expiry, TrickleTimer};
use super::{Command, Input, Mode, Notice, Role, StabilizationParams, TimerId};
use crate::addrspace::{
    allocate_delayed, partition_aggregate, partition_greedy, AddressRange, AllocError, HostAddress, PartitionResult,
    ReserveFraction,
};
use crate::messages::{Body, MhclMessage, RankBeacon};
use crate::NodeId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub id: NodeId,
    pub role: Role,
    pub mode: Mode,
    pub params: StabilizationParams,
    pub reserve: ReserveFraction,
    /// Address space managed by the root. Ignored by other nodes.
    pub root_range: AddressRange,
    /// Seed of the engine's private random stream (timer draws).
    pub seed: u64,
    /// Retransmissions after the first DIO_MHCL / DAO_MHCL transmission.
    pub max_retransmissions: u8,
    /// Acknowledgement timeout; `None` means one base interval.
    pub ack_timeout_ms: Option<u64>,
}

impl EngineConfig {
    pub fn new(id: NodeId, role: Role, mode: Mode) -> Self {
        EngineConfig {
            id,
            role,
            mode,
            params: StabilizationParams::default(),
            reserve: ReserveFraction::DEFAULT,
            root_range: AddressRange::full(16).expect("16-bit space"),
            seed: 0,
            max_retransmissions: 3,
            ack_timeout_ms: None,
        }
    }
}

/// Next hop for a downward packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hop {
    Local,
    Child(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteError {
    /// The node holds no address range.
    NotAddressed,
    /// Destination outside every allocated child range (reserve, gap or foreign).
    NoRoute,
    /// Upward forwarding from the root or from a node without a parent.
    NoParent,
}

impl fmt::Display for RouteError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RouteError::NotAddressed => "node not addressed",
            RouteError::NoRoute => "no route to destination",
            RouteError::NoParent => "no parent",
        })
    }
}

impl core::error::Error for RouteError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ChildState {
    /// Last reported subtree size; 0 until the child reports one.
    subtree: u16,
    last_seq: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Pending {
    msg: MhclMessage,
    transmissions: u8,
}

/// Protocol state machine of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeEngine {
    cfg: EngineConfig,
    rng: ChaCha8Rng,
    started: bool,

    dag: ParentSelector,
    parent_defined: bool,
    parent_timer: TrickleTimer,

    children: BTreeMap<NodeId, ChildState>,
    membership_changed: bool,
    counts_changed: bool,
    children_timer: TrickleTimer,
    children_defined: bool,
    agg_timer: TrickleTimer,
    agg_stable: bool,
    descendants_defined: bool,
    dao_sent: Option<u16>,

    assigned: Option<AddressRange>,
    own: Option<HostAddress>,
    reserve: Option<AddressRange>,
    distributed: bool,
    allocations: BTreeMap<NodeId, AddressRange>,
    routing: RoutingTable,

    next_seq: u16,
    pending: BTreeMap<u16, Pending>,
}

fn seq_newer(a: u16, b: u16) -> bool {
    (a.wrapping_sub(b) as i16) > 0
}

impl NodeEngine {
    pub fn new(cfg: EngineConfig) -> Self {
        let base = cfg.params.base_interval_ms();
        let p = cfg.params;
        let agg_sp = match cfg.role {
            Role::Root => p.sp_root,
            Role::NonRoot => p.sp_leaf,
        };
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (cfg.id.0 as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        NodeEngine {
            rng,
            started: false,
            dag: ParentSelector::new(),
            parent_defined: false,
            parent_timer: TrickleTimer::new(base, p.sp_child),
            children: BTreeMap::new(),
            membership_changed: false,
            counts_changed: false,
            children_timer: TrickleTimer::new(base, p.sp_parent),
            children_defined: false,
            agg_timer: TrickleTimer::new(base, agg_sp),
            agg_stable: false,
            descendants_defined: false,
            dao_sent: None,
            assigned: None,
            own: None,
            reserve: None,
            distributed: false,
            allocations: BTreeMap::new(),
            routing: RoutingTable::new(),
            next_seq: 1,
            pending: BTreeMap::new(),
            cfg,
        }
    }

    pub fn handle(&mut self, input: Input) -> Vec<Command> {
        let mut out = Vec::new();
        match input {
            Input::Start => self.on_start(&mut out),
            _ if !self.started => {}
            Input::Timer(t) => self.on_timer(t, &mut out),
            Input::Beacon(b) => self.on_beacon(b, &mut out),
            Input::Message(m) if m.dst != self.cfg.id => {}
            Input::Message(m) => match m.body {
                Body::Dio { first, size } => self.on_dio(m.src, m.seq, first, size, &mut out),
                Body::Dao { count } => self.on_dao(m.src, m.seq, count, &mut out),
                Body::DioAck { acked_seq } | Body::DaoAck { acked_seq } => self.on_ack(m.src, acked_seq, &mut out),
                // Data forwarding is driven by the host through `forward_down` / `forward_up`.
                Body::AppData { .. } => {}
            },
        }
        out
    }

    // ----- accessors -----

    pub fn id(&self) -> NodeId {
        self.cfg.id
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn is_root(&self) -> bool {
        self.cfg.role == Role::Root
    }

    pub fn parent_defined(&self) -> bool {
        self.parent_defined
    }

    pub fn preferred_parent(&self) -> Option<NodeId> {
        self.dag.parent()
    }

    pub fn rank(&self) -> Option<u16> {
        self.dag.rank()
    }

    pub fn children_defined(&self) -> bool {
        self.children_defined
    }

    pub fn descendants_defined(&self) -> bool {
        self.descendants_defined
    }

    pub fn children(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.children.keys().copied()
    }

    /// Subtree size last reported by `child` (0 if unknown).
    pub fn child_subtree(&self, child: NodeId) -> Option<u16> {
        self.children.get(&child).map(|c| c.subtree)
    }

    /// Sum of the subtree sizes reported by direct children.
    pub fn descendant_count(&self) -> u32 {
        self.children.values().map(|c| c.subtree as u32).sum()
    }

    /// Address range held by this node (the configured space for the root).
    pub fn range(&self) -> Option<AddressRange> {
        match self.cfg.role {
            Role::Root => self.distributed.then_some(self.cfg.root_range),
            Role::NonRoot => self.assigned,
        }
    }

    pub fn own_address(&self) -> Option<HostAddress> {
        self.own
    }

    pub fn reserve(&self) -> Option<AddressRange> {
        self.reserve
    }

    pub fn has_distributed(&self) -> bool {
        self.distributed
    }

    pub fn allocation(&self, child: NodeId) -> Option<AddressRange> {
        self.allocations.get(&child).copied()
    }

    pub fn allocations(&self) -> impl Iterator<Item = (NodeId, AddressRange)> + '_ {
        self.allocations.iter().map(|(&c, &r)| (c, r))
    }

    pub fn routing_table(&self) -> &RoutingTable {
        &self.routing
    }

    pub fn is_neighbor(&self, id: NodeId) -> bool {
        self.dag.is_neighbor(id)
    }

    // ----- forwarding -----

    /// Next hop towards `dest` on the downward path.
    pub fn forward_down(&self, dest: HostAddress) -> Result<Hop, RouteError> {
        let own = self.own.ok_or(RouteError::NotAddressed)?;
        if dest == own {
            return Ok(Hop::Local);
        }
        let range = self.range().ok_or(RouteError::NotAddressed)?;
        if !range.contains(dest) {
            return Err(RouteError::NoRoute);
        }
        self.routing.lookup(dest).map(Hop::Child).ok_or(RouteError::NoRoute)
    }

    /// Preferred parent for upward traffic.
    pub fn forward_up(&self) -> Result<NodeId, RouteError> {
        if self.is_root() || !self.parent_defined {
            return Err(RouteError::NoParent);
        }
        self.dag.parent().ok_or(RouteError::NoParent)
    }

    // ----- helpers -----

    fn base(&self) -> u64 {
        self.cfg.params.base_interval_ms()
    }

    fn ack_timeout(&self) -> u64 {
        self.cfg.ack_timeout_ms.unwrap_or_else(|| self.base())
    }

    fn take_seq(&mut self) -> u16 {
        let s = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        s
    }

    fn message(&mut self, dst: NodeId, body: Body) -> MhclMessage {
        let seq = self.take_seq();
        MhclMessage { src: self.cfg.id, dst, seq, body }
    }

    fn send_reliable(&mut self, dst: NodeId, body: Body, retransmission: bool, out: &mut Vec<Command>) {
        let msg = self.message(dst, body);
        self.pending.insert(msg.seq, Pending { msg, transmissions: 1 });
        out.push(Command::Send { msg, retransmission });
        out.push(Command::ArmTimer { timer: TimerId::Ack(msg.seq), after_ms: self.ack_timeout() });
    }

    /// Acks echo the acknowledged sequence number and consume none of their own.
    fn ack(&self, dst: NodeId, acked_seq: u16, body: Body, out: &mut Vec<Command>) {
        let msg = MhclMessage { src: self.cfg.id, dst, seq: acked_seq, body };
        out.push(Command::Send { msg, retransmission: false });
    }

    fn arm(out: &mut Vec<Command>, timer: TimerId, after_ms: u64) {
        out.push(Command::ArmTimer { timer, after_ms });
    }

    fn cancel_pending_dao(&mut self, out: &mut Vec<Command>) {
        let stale: Vec<u16> =
            self.pending.iter().filter(|(_, p)| matches!(p.msg.body, Body::Dao { .. })).map(|(&s, _)| s).collect();
        for s in stale {
            self.pending.remove(&s);
            out.push(Command::CancelTimer(TimerId::Ack(s)));
        }
    }

    fn has_pending_dao(&self) -> bool {
        self.pending.values().any(|p| matches!(p.msg.body, Body::Dao { .. }))
    }

    fn send_dao(&mut self, count: u16, retransmission: bool, out: &mut Vec<Command>) {
        let Some(parent) = self.dag.parent() else {
            return;
        };
        self.cancel_pending_dao(out);
        self.dao_sent = Some(count);
        self.send_reliable(parent, Body::Dao { count }, retransmission, out);
    }

    fn counts_complete(&self) -> bool {
        self.children.values().all(|c| c.subtree >= 1)
    }

    /// Subtree size this node reports upward, or 0 while it is still unknown.
    fn report_value(&self) -> u16 {
        if self.agg_stable && self.counts_complete() {
            (1 + self.descendant_count()).min(u16::MAX as u32) as u16
        } else {
            0
        }
    }

    // ----- lifecycle -----

    fn on_start(&mut self, out: &mut Vec<Command>) {
        if self.started {
            return;
        }
        self.started = true;
        match self.cfg.role {
            Role::Root => {
                self.dag.set_root();
                self.parent_defined = true;
                out.push(Command::Broadcast(RankBeacon::Advert { src: self.cfg.id, rank: 0 }));
                match self.cfg.mode {
                    Mode::Greedy => {
                        let d = self.children_timer.reset(&mut self.rng);
                        Self::arm(out, TimerId::Children, d);
                    }
                    Mode::Aggregate => {
                        let d = self.agg_timer.reset(&mut self.rng);
                        Self::arm(out, TimerId::Aggregation, d);
                    }
                }
            }
            Role::NonRoot => {
                out.push(Command::Broadcast(RankBeacon::Solicit { src: self.cfg.id }));
                let d = self.parent_timer.reset(&mut self.rng);
                Self::arm(out, TimerId::Parent, d);
            }
        }
    }

    fn on_beacon(&mut self, beacon: RankBeacon, out: &mut Vec<Command>) {
        match beacon {
            RankBeacon::Advert { src, rank } => {
                if src == self.cfg.id {
                    return;
                }
                if let Some(new_rank) = self.dag.on_advert(src, rank) {
                    out.push(Command::Broadcast(RankBeacon::Advert { src: self.cfg.id, rank: new_rank }));
                }
            }
            RankBeacon::Solicit { src } => {
                if src == self.cfg.id {
                    return;
                }
                if let Some(rank) = self.dag.rank() {
                    out.push(Command::Broadcast(RankBeacon::Advert { src: self.cfg.id, rank }));
                }
            }
        }
    }

    fn on_timer(&mut self, timer: TimerId, out: &mut Vec<Command>) {
        match timer {
            TimerId::Parent => self.on_parent_timer(out),
            TimerId::Children => self.on_children_timer(out),
            TimerId::Aggregation => match self.cfg.role {
                Role::Root => self.on_root_agg_timer(out),
                Role::NonRoot => self.on_leaf_agg_timer(out),
            },
            TimerId::Ack(seq) => self.on_ack_timeout(seq, out),
            TimerId::JoinRetry => self.on_join_retry(out),
        }
    }

    fn on_parent_timer(&mut self, out: &mut Vec<Command>) {
        if self.is_root() || self.parent_defined {
            return;
        }
        if self.dag.best().is_none() {
            out.push(Command::Broadcast(RankBeacon::Solicit { src: self.cfg.id }));
            let d = self.parent_timer.reset(&mut self.rng);
            Self::arm(out, TimerId::Parent, d);
            return;
        }
        if self.dag.take_best_changed() {
            let d = self.parent_timer.reset(&mut self.rng);
            Self::arm(out, TimerId::Parent, d);
            return;
        }
        match self.parent_timer.expire() {
            Expiry::Doubled(d) => Self::arm(out, TimerId::Parent, d),
            Expiry::AtMax => self.define_parent(out),
        }
    }

    fn define_parent(&mut self, out: &mut Vec<Command>) {
        let Some(parent) = self.dag.freeze() else {
            return;
        };
        self.parent_defined = true;
        out.push(Command::Notify(Notice::ParentDefined { parent, rank: self.dag.rank().unwrap_or(0) }));
        match self.cfg.mode {
            Mode::Greedy => {
                self.send_dao(0, false, out);
                let d = self.children_timer.reset(&mut self.rng);
                Self::arm(out, TimerId::Children, d);
            }
            Mode::Aggregate => {
                let d = self.agg_timer.reset(&mut self.rng);
                Self::arm(out, TimerId::Aggregation, d);
            }
        }
    }

    fn on_children_timer(&mut self, out: &mut Vec<Command>) {
        if self.cfg.mode != Mode::Greedy || self.children_defined {
            return;
        }
        if core::mem::take(&mut self.membership_changed) {
            let d = self.children_timer.reset(&mut self.rng);
            Self::arm(out, TimerId::Children, d);
            return;
        }
        match self.children_timer.expire() {
            Expiry::Doubled(d) => Self::arm(out, TimerId::Children, d),
            // A root without children has nothing to hand out yet.
            Expiry::AtMax if self.is_root() && self.children.is_empty() => {
                Self::arm(out, TimerId::Children, self.children_timer.max())
            }
            Expiry::AtMax => {
                self.children_defined = true;
                out.push(Command::Notify(Notice::ChildrenDefined { children: self.children.len() }));
                self.try_distribute(out);
            }
        }
    }

    /// Non-root aggregation loop; runs until the node receives its range.
    fn on_leaf_agg_timer(&mut self, out: &mut Vec<Command>) {
        if self.cfg.mode != Mode::Aggregate || self.assigned.is_some() {
            return;
        }
        self.counts_changed = false;
        if core::mem::take(&mut self.membership_changed) {
            self.agg_stable = false;
            let d = self.agg_timer.reset(&mut self.rng);
            Self::arm(out, TimerId::Aggregation, d);
        } else {
            match self.agg_timer.expire() {
                Expiry::Doubled(d) => Self::arm(out, TimerId::Aggregation, d),
                Expiry::AtMax => {
                    self.agg_stable = true;
                    Self::arm(out, TimerId::Aggregation, self.agg_timer.max());
                }
            }
        }
        self.maybe_report(true, out);
    }

    fn on_root_agg_timer(&mut self, out: &mut Vec<Command>) {
        if self.cfg.mode != Mode::Aggregate || self.descendants_defined {
            return;
        }
        let changed = core::mem::take(&mut self.membership_changed) | core::mem::take(&mut self.counts_changed);
        if changed {
            self.agg_stable = false;
            let d = self.agg_timer.reset(&mut self.rng);
            Self::arm(out, TimerId::Aggregation, d);
            return;
        }
        match self.agg_timer.expire() {
            Expiry::Doubled(d) => Self::arm(out, TimerId::Aggregation, d),
            Expiry::AtMax if self.counts_complete() && !self.children.is_empty() => {
                self.agg_stable = true;
                self.descendants_defined = true;
                out.push(Command::Notify(Notice::DescendantsDefined { descendants: self.descendant_count() }));
                self.try_distribute(out);
            }
            // Quiet, but no child yet or some child has not reported its subtree.
            Expiry::AtMax => Self::arm(out, TimerId::Aggregation, self.agg_timer.max()),
        }
    }

    /// Sends the first DAO_MHCL (at a timer firing) or an updated subtree size.
    fn maybe_report(&mut self, at_fire: bool, out: &mut Vec<Command>) {
        if self.is_root() || self.cfg.mode != Mode::Aggregate || !self.parent_defined || self.assigned.is_some() {
            return;
        }
        let value = self.report_value();
        match self.dao_sent {
            None if at_fire => self.send_dao(value, false, out),
            None => {}
            Some(prev) if value != 0 && value != prev => self.send_dao(value, false, out),
            Some(_) => {}
        }
    }

    fn on_ack_timeout(&mut self, seq: u16, out: &mut Vec<Command>) {
        let Some(p) = self.pending.get_mut(&seq) else {
            return;
        };
        if p.transmissions <= self.cfg.max_retransmissions {
            p.transmissions += 1;
            let msg = p.msg;
            out.push(Command::Send { msg, retransmission: true });
            Self::arm(out, TimerId::Ack(seq), self.ack_timeout());
            return;
        }
        let p = self.pending.remove(&seq).expect("present");
        match p.msg.body {
            Body::Dio { .. } => out.push(Command::Notify(Notice::ChildUnaddressed { child: p.msg.dst })),
            Body::Dao { .. } => {
                out.push(Command::Notify(Notice::DaoGaveUp));
                if self.assigned.is_none() {
                    let backoff = self.base() * self.cfg.params.sp_child as u64;
                    Self::arm(out, TimerId::JoinRetry, backoff);
                }
            }
            _ => {}
        }
    }

    fn on_join_retry(&mut self, out: &mut Vec<Command>) {
        if self.is_root() || !self.parent_defined || self.assigned.is_some() || self.has_pending_dao() {
            return;
        }
        let value = match self.cfg.mode {
            Mode::Greedy => 0,
            Mode::Aggregate => self.report_value(),
        };
        self.send_dao(value, true, out);
    }

    // ----- messages -----

    fn on_ack(&mut self, from: NodeId, acked: u16, out: &mut Vec<Command>) {
        if self.pending.get(&acked).is_some_and(|p| p.msg.dst == from) {
            self.pending.remove(&acked);
            out.push(Command::CancelTimer(TimerId::Ack(acked)));
        }
    }

    fn on_dao(&mut self, from: NodeId, seq: u16, count: u16, out: &mut Vec<Command>) {
        self.ack(from, seq, Body::DaoAck { acked_seq: seq }, out);
        if self.dag.parent() == Some(from) {
            out.push(Command::Notify(Notice::StaleChild { child: from }));
            return;
        }
        match self.children.get_mut(&from) {
            Some(st) => {
                if !seq_newer(seq, st.last_seq) {
                    return;
                }
                st.last_seq = seq;
                if st.subtree != count {
                    st.subtree = count;
                    self.counts_changed = true;
                }
            }
            None => {
                self.children.insert(from, ChildState { subtree: count, last_seq: seq });
                if self.distributed {
                    self.connect_delayed(from, out);
                    return;
                }
                self.membership_changed = true;
                self.counts_changed |= count > 0;
            }
        }
        self.maybe_report(false, out);
    }

    fn connect_delayed(&mut self, child: NodeId, out: &mut Vec<Command>) {
        let pool = self.reserve.unwrap_or(AddressRange::empty(0));
        match allocate_delayed(&pool, &[child], self.cfg.reserve) {
            Ok(p) => {
                let range = p.children[0].1;
                self.reserve = Some(p.reserve);
                out.push(Command::Notify(Notice::DelayedConnection { child, range }));
                self.grant(child, range, out);
            }
            Err(error) => out.push(Command::Notify(Notice::AllocationFailure { child, error })),
        }
    }

    fn grant(&mut self, child: NodeId, range: AddressRange, out: &mut Vec<Command>) {
        let (Some(first), Some(last)) = (range.first(), range.last()) else {
            return;
        };
        self.allocations.insert(child, range);
        self.routing.insert(child, last);
        self.send_reliable(child, Body::Dio { first, size: range.len() as u16 }, false, out);
    }

    fn on_dio(&mut self, from: NodeId, seq: u16, first: HostAddress, size: u16, out: &mut Vec<Command>) {
        self.ack(from, seq, Body::DioAck { acked_seq: seq }, out);
        let Some(offered) = AddressRange::new(first.0 as u32, size as u32) else {
            return;
        };
        if self.is_root() || self.dag.parent() != Some(from) {
            out.push(Command::Notify(Notice::UnexpectedGrant { from }));
            return;
        }
        if let Some(current) = self.assigned {
            if current != offered {
                out.push(Command::Notify(Notice::RangeConflict { current, offered }));
            }
            return;
        }
        self.assigned = Some(offered);
        self.own = Some(first);
        out.push(Command::Notify(Notice::Addressed { range: offered }));
        self.cancel_pending_dao(out);
        out.push(Command::CancelTimer(TimerId::JoinRetry));
        if self.cfg.mode == Mode::Aggregate {
            out.push(Command::CancelTimer(TimerId::Aggregation));
        }
        self.try_distribute(out);
    }

    // ----- address distribution -----

    fn partition(&self, range: &AddressRange, ids: &[NodeId]) -> Result<PartitionResult, AllocError> {
        match self.cfg.mode {
            Mode::Greedy => partition_greedy(range, ids, self.cfg.reserve),
            Mode::Aggregate => {
                let sizes: Vec<(NodeId, u32)> =
                    ids.iter().map(|id| (*id, self.children.get(id).map_or(1, |c| c.subtree.max(1) as u32))).collect();
                partition_aggregate(range, &sizes, self.cfg.reserve)
            }
        }
    }

    fn try_distribute(&mut self, out: &mut Vec<Command>) {
        if self.distributed {
            return;
        }
        let stable = match self.cfg.mode {
            Mode::Greedy => self.children_defined,
            Mode::Aggregate => self.descendants_defined || !self.is_root(),
        };
        let range = match self.cfg.role {
            Role::Root => Some(self.cfg.root_range),
            Role::NonRoot => self.assigned,
        };
        let (true, Some(range)) = (stable, range) else {
            return;
        };

        let ids: Vec<NodeId> = self.children.keys().copied().collect();
        let (partition, unplaced) = match self.partition(&range, &ids) {
            Ok(p) => (p, &[][..]),
            Err(error @ AllocError::InsufficientSpace { usable, .. }) => {
                // Address as many children as there are usable addresses.
                let fit = (usable as usize).min(ids.len());
                let p = self.partition(&range, &ids[..fit]).expect("one address per fitting child");
                for &child in &ids[fit..] {
                    out.push(Command::Notify(Notice::AllocationFailure { child, error }));
                }
                (p, &ids[fit..])
            }
        };
        let _ = unplaced;
        self.distributed = true;
        self.own = partition.own;
        self.reserve = Some(partition.reserve);
        if self.is_root() {
            out.push(Command::Notify(Notice::Addressed { range }));
        }
        for (child, r) in partition.children {
            self.grant(child, r, out);
        }
    }
}
