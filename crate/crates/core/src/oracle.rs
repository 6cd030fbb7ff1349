//! Global address plans computed in one pass over a known tree.
//!
//! The protocol reaches the same plan through message exchange when every
//! node has joined before its parent distributes and no grant is lost.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::addrspace::{partition_aggregate, partition_greedy, AddressRange, AllocError, HostAddress, ReserveFraction};
use crate::node::Mode;
use crate::NodeId;

/// Rooted tree given as child -> parent links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParentMap {
    root: NodeId,
    parent: BTreeMap<NodeId, NodeId>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeError {
    /// A node lists itself, the root has a parent, or a link closes a cycle.
    Cycle(NodeId),
    /// A parent that is neither the root nor any node's child.
    Detached(NodeId),
}

impl fmt::Display for TreeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeError::Cycle(n) => write!(f, "node {n} is on a cycle"),
            TreeError::Detached(n) => write!(f, "node {n} is not connected to the root"),
        }
    }
}

impl core::error::Error for TreeError {}

impl ParentMap {
    pub fn new<I>(root: NodeId, links: I) -> Result<Self, TreeError>
    where
        I: IntoIterator<Item = (NodeId, NodeId)>,
    {
        let parent: BTreeMap<NodeId, NodeId> = links.into_iter().collect();
        if parent.contains_key(&root) {
            return Err(TreeError::Cycle(root));
        }
        for (&child, &p) in &parent {
            if p != root && !parent.contains_key(&p) {
                return Err(TreeError::Detached(p));
            }
            let mut cur = child;
            let mut steps = 0usize;
            while cur != root {
                cur = parent[&cur];
                steps += 1;
                if steps > parent.len() {
                    return Err(TreeError::Cycle(child));
                }
            }
        }
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for (&c, &p) in &parent {
            children.entry(p).or_default().push(c);
        }
        Ok(ParentMap { root, parent, children })
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn parent_of(&self, n: NodeId) -> Option<NodeId> {
        self.parent.get(&n).copied()
    }

    /// Direct children in ascending id order.
    pub fn children_of(&self, n: NodeId) -> &[NodeId] {
        self.children.get(&n).map_or(&[], |v| v.as_slice())
    }

    /// All nodes, root included.
    pub fn len(&self) -> usize {
        self.parent.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        core::iter::once(self.root).chain(self.parent.keys().copied())
    }

    pub fn depth(&self, mut n: NodeId) -> usize {
        let mut d = 0;
        while let Some(p) = self.parent_of(n) {
            n = p;
            d += 1;
        }
        d
    }

    /// Maximum depth over all nodes.
    pub fn height(&self) -> usize {
        self.nodes().map(|n| self.depth(n)).max().unwrap_or(0)
    }

    /// Nodes in breadth-first order from the root.
    fn bfs(&self) -> Vec<NodeId> {
        let mut order = vec![self.root];
        let mut i = 0;
        while i < order.len() {
            order.extend_from_slice(self.children_of(order[i]));
            i += 1;
        }
        order
    }
}

/// Subtree size (node included) for every node.
pub fn oracle_subtree_sizes(tree: &ParentMap) -> BTreeMap<NodeId, u32> {
    let mut sizes = BTreeMap::new();
    for &n in tree.bfs().iter().rev() {
        let s = 1 + tree.children_of(n).iter().map(|c| sizes[c]).sum::<u32>();
        sizes.insert(n, s);
    }
    sizes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanError {
    InsufficientSpace { node: NodeId, error: AllocError },
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanError::InsufficientSpace { node, error } => write!(f, "node {node}: {error}"),
        }
    }
}

impl core::error::Error for PlanError {}

/// Per-node address and range.
pub type Plan = BTreeMap<NodeId, (HostAddress, AddressRange)>;

/// Computes every node's address and range top-down.
pub fn oracle_plan(
    tree: &ParentMap,
    root_range: AddressRange,
    mode: Mode,
    r: ReserveFraction,
) -> Result<Plan, PlanError> {
    let sizes = match mode {
        Mode::Aggregate => oracle_subtree_sizes(tree),
        Mode::Greedy => BTreeMap::new(),
    };
    let mut ranges: BTreeMap<NodeId, AddressRange> = BTreeMap::new();
    ranges.insert(tree.root, root_range);
    let mut plan = Plan::new();
    for n in tree.bfs() {
        let range = ranges[&n];
        let kids = tree.children_of(n);
        let result = match mode {
            Mode::Greedy => partition_greedy(&range, kids, r),
            Mode::Aggregate => {
                let s: Vec<(NodeId, u32)> = kids.iter().map(|c| (*c, sizes[c])).collect();
                partition_aggregate(&range, &s, r)
            }
        }
        .map_err(|error| PlanError::InsufficientSpace { node: n, error })?;
        let own = result.own.expect("partition of an assigned range yields an own address");
        plan.insert(n, (own, range));
        for (c, cr) in result.children {
            ranges.insert(c, cr);
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RouteLookupError {
    /// No node owns the destination address.
    NoSuchAddress(HostAddress),
}

/// Path from the root to the owner of `dest` by range containment.
pub fn oracle_route(tree: &ParentMap, plan: &Plan, dest: HostAddress) -> Result<Vec<NodeId>, RouteLookupError> {
    let mut path = vec![tree.root];
    let mut cur = tree.root;
    loop {
        match plan.get(&cur) {
            Some((own, _)) if *own == dest => return Ok(path),
            Some((_, range)) if range.contains(dest) => {}
            _ => return Err(RouteLookupError::NoSuchAddress(dest)),
        }
        let next = tree
            .children_of(cur)
            .iter()
            .copied()
            .find(|c| plan.get(c).is_some_and(|(_, r)| r.contains(dest)))
            .ok_or(RouteLookupError::NoSuchAddress(dest))?;
        path.push(next);
        cur = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(start: u32, end: u32) -> AddressRange {
        AddressRange::from_bounds(start, end).unwrap()
    }

    #[test]
    fn chain_zero_reserve() {
        let t = ParentMap::new(NodeId(0), [(NodeId(1), NodeId(0)), (NodeId(2), NodeId(1))]).unwrap();
        let p = oracle_plan(&t, r(0, 256), Mode::Greedy, ReserveFraction::ZERO).unwrap();
        assert_eq!(p[&NodeId(0)], (HostAddress(0), r(0, 256)));
        assert_eq!(p[&NodeId(1)], (HostAddress(1), r(1, 256)));
        assert_eq!(p[&NodeId(2)], (HostAddress(2), r(2, 256)));
        assert_eq!(oracle_route(&t, &p, HostAddress(2)).unwrap(), [NodeId(0), NodeId(1), NodeId(2)]);
        assert_eq!(oracle_route(&t, &p, HostAddress(9)), Err(RouteLookupError::NoSuchAddress(HostAddress(9))));
    }

    #[test]
    fn star_in_small_space() {
        let t = ParentMap::new(NodeId(0), [(NodeId(1), NodeId(0)), (NodeId(2), NodeId(0))]).unwrap();
        let p = oracle_plan(&t, r(0, 8), Mode::Greedy, ReserveFraction::DEFAULT).unwrap();
        assert_eq!(p[&NodeId(1)].1, r(1, 4));
        assert_eq!(p[&NodeId(2)].1, r(4, 7));
        assert_eq!(oracle_route(&t, &p, HostAddress(7)), Err(RouteLookupError::NoSuchAddress(HostAddress(7))));
    }

    #[test]
    fn subtree_sizes_and_errors() {
        let t = ParentMap::new(
            NodeId(0),
            [(NodeId(1), NodeId(0)), (NodeId(2), NodeId(1)), (NodeId(3), NodeId(1)), (NodeId(4), NodeId(0))],
        )
        .unwrap();
        let s = oracle_subtree_sizes(&t);
        assert_eq!(s[&NodeId(0)], 5);
        assert_eq!(s[&NodeId(1)], 3);
        assert_eq!(t.height(), 2);
        assert_eq!(
            ParentMap::new(NodeId(0), [(NodeId(1), NodeId(2)), (NodeId(2), NodeId(1))]),
            Err(TreeError::Cycle(NodeId(1)))
        );
        assert_eq!(ParentMap::new(NodeId(0), [(NodeId(1), NodeId(7))]), Err(TreeError::Detached(NodeId(7))));
        let tiny = oracle_plan(&t, r(0, 2), Mode::Greedy, ReserveFraction::ZERO);
        assert!(matches!(tiny, Err(PlanError::InsufficientSpace { node: NodeId(0), .. })));
    }
}
