//! Per-node protocol engine.
//!
//! A [`NodeEngine`] never touches a clock or a radio. The host feeds it
//! [`Input`]s (start, timer expiry, received message or beacon) and executes
//! the returned [`Command`]s (send, broadcast, arm or cancel a timer). Arming a
//! [`TimerId`] that is already armed replaces the earlier deadline.

mod dag;
mod engine;
mod routing;
mod timer;

use alloc::vec::Vec;

pub use dag::ParentSelector;
pub use engine::{EngineConfig, Hop, NodeEngine, RouteError};
pub use routing::{RouteEntry, RoutingTable};
pub use timer::{Expiry, TrickleTimer};

use crate::addrspace::{AddressRange, AllocError};
use crate::messages::{MhclMessage, RankBeacon};
use crate::NodeId;

/// Address-space partition policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Equal split among direct children; one-hop information only.
    Greedy,
    /// Split proportional to subtree sizes gathered by a convergecast.
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Root,
    NonRoot,
}

/// Stabilization multipliers and the base interval exponent.
///
/// Every timer starts in `(I/2, I]` with `I = 2^dio_min_exp` ms and is capped
/// at `sp * I` for its routine's multiplier `sp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StabilizationParams {
    pub sp_child: u32,
    pub sp_parent: u32,
    pub sp_leaf: u32,
    pub sp_root: u32,
    pub dio_min_exp: u32,
}

impl Default for StabilizationParams {
    fn default() -> Self {
        StabilizationParams { sp_child: 2, sp_parent: 4, sp_leaf: 4, sp_root: 8, dio_min_exp: 6 }
    }
}

impl StabilizationParams {
    /// `I = 2^dio_min_exp` milliseconds.
    pub fn base_interval_ms(&self) -> u64 {
        1u64 << self.dio_min_exp.min(40)
    }

    pub fn is_valid(&self) -> bool {
        [self.sp_child, self.sp_parent, self.sp_leaf, self.sp_root].iter().all(|&v| v >= 1)
            && self.dio_min_exp >= 1
            && self.dio_min_exp <= 40
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerId {
    /// Preferred-parent stabilization.
    Parent,
    /// Children counting (greedy).
    Children,
    /// Descendant aggregation (aggregate; leaf loop or root).
    Aggregation,
    /// Acknowledgement timeout for the message with this sequence number.
    Ack(u16),
    /// Backoff before re-announcing to the parent after a DAO exchange gave up.
    JoinRetry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Input {
    Start,
    Timer(TimerId),
    Message(MhclMessage),
    Beacon(RankBeacon),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Command {
    Send { msg: MhclMessage, retransmission: bool },
    Broadcast(RankBeacon),
    ArmTimer { timer: TimerId, after_ms: u64 },
    CancelTimer(TimerId),
    Notify(Notice),
}

/// State transitions and anomalies worth logging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Notice {
    ParentDefined {
        parent: NodeId,
        rank: u16,
    },
    ChildrenDefined {
        children: usize,
    },
    DescendantsDefined {
        descendants: u32,
    },
    Addressed {
        range: AddressRange,
    },
    DelayedConnection {
        child: NodeId,
        range: AddressRange,
    },
    AllocationFailure {
        child: NodeId,
        error: AllocError,
    },
    /// Every DIO_MHCL transmission to `child` went unacknowledged.
    ChildUnaddressed {
        child: NodeId,
    },
    /// Every DAO_MHCL transmission went unacknowledged; a retry is scheduled.
    DaoGaveUp,
    RangeConflict {
        current: AddressRange,
        offered: AddressRange,
    },
    StaleChild {
        child: NodeId,
    },
    UnexpectedGrant {
        from: NodeId,
    },
}

/// Feeds `inputs` to a fresh engine and returns it with the commands emitted
/// for each input.
pub fn replay<I>(config: EngineConfig, inputs: I) -> (NodeEngine, Vec<Vec<Command>>)
where
    I: IntoIterator<Item = Input>,
{
    let mut engine = NodeEngine::new(config);
    let out = inputs.into_iter().map(|i| engine.handle(i)).collect();
    (engine, out)
}
