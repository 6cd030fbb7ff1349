use alloc::collections::BTreeMap;

use crate::NodeId;

/// Hop-count preferred-parent selection.
///
/// Candidates are neighbours that advertised a rank; the best one has the
/// smallest rank, then the smallest id. Once frozen the parent (and the
/// node's own rank) no longer change.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParentSelector {
    candidates: BTreeMap<NodeId, u16>,
    rank: Option<u16>,
    parent: Option<NodeId>,
    frozen: bool,
    last_best: Option<NodeId>,
}

impl ParentSelector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Root: rank 0, no parent, frozen.
    pub fn set_root(&mut self) {
        self.rank = Some(0);
        self.frozen = true;
    }

    pub fn best(&self) -> Option<(NodeId, u16)> {
        self.candidates.iter().map(|(&id, &rank)| (id, rank)).min_by_key(|&(id, rank)| (rank, id))
    }

    /// Records an advertisement. Returns the new own rank when it changed.
    ///
    /// Keeps the lowest rank heard from each neighbour, so the own rank
    /// never increases.
    pub fn on_advert(&mut self, from: NodeId, rank: u16) -> Option<u16> {
        let heard = self.candidates.entry(from).or_insert(rank);
        *heard = (*heard).min(rank);
        if self.frozen {
            return None;
        }
        let new_rank = self.best().map(|(_, r)| r.saturating_add(1));
        if new_rank != self.rank {
            self.rank = new_rank;
            new_rank
        } else {
            None
        }
    }

    /// Whether the best candidate differs from the one seen at the previous call.
    pub fn take_best_changed(&mut self) -> bool {
        let best = self.best().map(|(id, _)| id);
        let changed = best != self.last_best;
        self.last_best = best;
        changed
    }

    /// Freezes the current best candidate as parent.
    pub fn freeze(&mut self) -> Option<NodeId> {
        if let Some((id, rank)) = self.best() {
            self.parent = Some(id);
            self.rank = Some(rank.saturating_add(1));
        }
        self.frozen = true;
        self.parent
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn rank(&self) -> Option<u16> {
        self.rank
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn is_neighbor(&self, id: NodeId) -> bool {
        self.candidates.contains_key(&id)
    }

    pub fn neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.candidates.keys().copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lowest_rank_then_lowest_id() {
        let mut p = ParentSelector::new();
        assert_eq!(p.on_advert(NodeId(9), 2), Some(3));
        assert_eq!(p.on_advert(NodeId(4), 2), None);
        assert_eq!(p.best(), Some((NodeId(4), 2)));
        assert_eq!(p.on_advert(NodeId(12), 1), Some(2));
        assert_eq!(p.best(), Some((NodeId(12), 1)));
    }

    #[test]
    fn change_detection_and_freeze() {
        let mut p = ParentSelector::new();
        assert!(!p.take_best_changed());
        p.on_advert(NodeId(3), 0);
        assert!(p.take_best_changed());
        assert!(!p.take_best_changed());
        assert_eq!(p.freeze(), Some(NodeId(3)));
        assert_eq!(p.on_advert(NodeId(1), 0), None);
        assert_eq!(p.parent(), Some(NodeId(3)));
        assert_eq!(p.rank(), Some(1));
    }
}
