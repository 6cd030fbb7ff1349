//! Multi-hop host configuration for 6LoWPAN trees.
//!
//! Every node in a routing tree receives a contiguous block of 16-bit host
//! addresses from its parent, keeps the first address for itself and splits
//! the remainder among its children, either equally (greedy mode) or in
//! proportion to subtree sizes (aggregate mode). Downward routing then needs
//! one table entry per direct child.
//!
//! The crate is `no_std` (it needs `alloc`) and performs no I/O:
//!
//! * [`addrspace`] holds the partition arithmetic,
//! * [`messages`] defines the control messages and their wire format,
//! * [`node`] is the per-node protocol engine, driven by injected inputs and
//!   emitting commands,
//! * `oracle` (feature `oracle`) recomputes global address plans for tests
//!   and inspection tools.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

pub mod addrspace;
pub mod messages;
pub mod node;
#[cfg(feature = "oracle")]
pub mod oracle;

use core::fmt;

pub use addrspace::{AddressRange, AllocError, HostAddress, PartitionResult, ReserveFraction};
pub use messages::{Body, Direction, MhclMessage, RankBeacon};
pub use node::{Command, EngineConfig, Input, Mode, NodeEngine, Role, StabilizationParams, TimerId};

/// Link-level identity of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub u16);

impl NodeId {
    /// Well-known identity used for the border router in generated topologies.
    pub const ROOT: NodeId = NodeId(0);
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u16> for NodeId {
    fn from(v: u16) -> Self {
        NodeId(v)
    }
}
