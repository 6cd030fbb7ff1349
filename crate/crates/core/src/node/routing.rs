use alloc::vec::Vec;

use crate::addrspace::HostAddress;
use crate::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteEntry {
    pub child: NodeId,
    /// Last address of the child's range.
    pub final_addr: HostAddress,
}

/// Downward routing table: one entry per addressed child, sorted by the
/// final address of each child's range.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoutingTable {
    entries: Vec<RouteEntry>,
}

impl RoutingTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the entry for `child`.
    pub fn insert(&mut self, child: NodeId, final_addr: HostAddress) {
        self.entries.retain(|e| e.child != child);
        let at = self.entries.partition_point(|e| e.final_addr < final_addr);
        self.entries.insert(at, RouteEntry { child, final_addr });
    }

    /// Linear scan for the first entry whose final address is `>= dest`.
    ///
    /// Child ranges are contiguous from the owner's second address, so the
    /// hit is the child whose range contains `dest`, provided `dest` lies
    /// between the owner's address and the last allocated address.
    pub fn lookup(&self, dest: HostAddress) -> Option<NodeId> {
        let mut i = 0;
        while i < self.entries.len() && dest > self.entries[i].final_addr {
            i += 1;
        }
        self.entries.get(i).map(|e| e.child)
    }

    pub fn entries(&self) -> &[RouteEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_picks_containing_child() {
        let mut t = RoutingTable::new();
        t.insert(NodeId(3), HostAddress(237));
        t.insert(NodeId(1), HostAddress(79));
        t.insert(NodeId(2), HostAddress(158));
        let finals: Vec<u16> = t.entries().iter().map(|e| e.final_addr.0).collect();
        assert_eq!(finals, [79, 158, 237]);
        assert_eq!(t.lookup(HostAddress(100)), Some(NodeId(2)));
        assert_eq!(t.lookup(HostAddress(79)), Some(NodeId(1)));
        assert_eq!(t.lookup(HostAddress(80)), Some(NodeId(2)));
        assert_eq!(t.lookup(HostAddress(240)), None);
    }

    #[test]
    fn one_entry_per_child() {
        let mut t = RoutingTable::new();
        t.insert(NodeId(1), HostAddress(10));
        t.insert(NodeId(1), HostAddress(20));
        assert_eq!(t.len(), 1);
    }
}
