//! Node placement, radio adjacency and the plain-text topology format.

use std::collections::VecDeque;
use std::fmt::Write as _;

use mhcl_core::oracle::ParentMap;
use mhcl_core::NodeId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Distance between grid neighbours, in metres.
pub const GRID_SPACING: f64 = 35.0;
/// Grid radio range: reaches the four axis neighbours (35 m) but not the
/// diagonals (49.5 m).
pub const GRID_TX_RANGE: f64 = 45.0;
pub const UNIFORM_TX_RANGE: f64 = 50.0;
pub const UNIFORM_MAX_ATTEMPTS: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TopologyError {
    #[error("{0} is not a perfect square")]
    NotASquare(usize),
    #[error("uniform topologies need at least 9 nodes, got {0}")]
    TooSmall(usize),
    #[error("at most 65535 nodes are supported, got {0}")]
    TooLarge(usize),
    #[error("no connected placement after {attempts} attempts")]
    DisconnectedAfterRetries { attempts: u32 },
    #[error("topology is not connected: node {0} cannot reach the root")]
    Disconnected(NodeId),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Immutable node placement with precomputed adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    positions: Vec<Position>,
    root: NodeId,
    tx_range: f64,
    adjacency: Vec<Vec<NodeId>>,
}

impl Topology {
    /// Nodes get ids `0..positions.len()`.
    pub fn new(positions: Vec<Position>, root: NodeId, tx_range: f64) -> Result<Self, TopologyError> {
        if positions.len() > u16::MAX as usize {
            return Err(TopologyError::TooLarge(positions.len()));
        }
        if root.0 as usize >= positions.len() {
            return Err(TopologyError::Parse { line: 0, msg: format!("root {root} is not a node") });
        }
        let n = positions.len();
        let mut adjacency = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if positions[i].distance(&positions[j]) <= tx_range {
                    adjacency[i].push(NodeId(j as u16));
                    adjacency[j].push(NodeId(i as u16));
                }
            }
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        Ok(Topology { positions, root, tx_range, adjacency })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn tx_range(&self) -> f64 {
        self.tx_range
    }

    pub fn position(&self, id: NodeId) -> Position {
        self.positions[id.0 as usize]
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.positions.len() as u16).map(NodeId)
    }

    /// Neighbours in ascending id order.
    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.adjacency[id.0 as usize]
    }

    /// Hop distance from the root; `None` for unreachable nodes.
    pub fn bfs_depths(&self) -> Vec<Option<usize>> {
        let mut depth = vec![None; self.len()];
        let mut queue = VecDeque::new();
        depth[self.root.0 as usize] = Some(0);
        queue.push_back(self.root);
        while let Some(u) = queue.pop_front() {
            let d = depth[u.0 as usize].unwrap();
            for v in self.neighbors(u) {
                if depth[v.0 as usize].is_none() {
                    depth[v.0 as usize] = Some(d + 1);
                    queue.push_back(*v);
                }
            }
        }
        depth
    }

    pub fn is_connected(&self) -> bool {
        self.bfs_depths().iter().all(Option::is_some)
    }

    /// Height of the hop-count tree.
    pub fn depth(&self) -> usize {
        self.bfs_depths().into_iter().flatten().max().unwrap_or(0)
    }

    /// Shortest-path tree choosing the smallest-id parent among equally
    /// close neighbours.
    pub fn bfs_parent_map(&self) -> Result<ParentMap, TopologyError> {
        let depth = self.bfs_depths();
        let mut links = Vec::with_capacity(self.len());
        for v in self.ids().filter(|v| *v != self.root) {
            let dv = depth[v.0 as usize].ok_or(TopologyError::Disconnected(v))?;
            let p = self
                .neighbors(v)
                .iter()
                .copied()
                .find(|u| depth[u.0 as usize] == Some(dv - 1))
                .expect("a BFS predecessor exists");
            links.push((v, p));
        }
        Ok(ParentMap::new(self.root, links).expect("BFS links form a tree"))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "root {}", self.root).unwrap();
        writeln!(s, "tx_range {}", self.tx_range).unwrap();
        for (i, p) in self.positions.iter().enumerate() {
            writeln!(s, "{i} {} {}", p.x, p.y).unwrap();
        }
        s
    }

    /// Parses `root <id>`, `tx_range <m>` and `<id> <x> <y>` lines. Ids must
    /// cover `0..n`; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, TopologyError> {
        let mut root = None;
        let mut tx_range = None;
        let mut nodes: Vec<(usize, u16, Position)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |msg: String| TopologyError::Parse { line, msg };
            let body = raw.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            match fields.as_slice() {
                ["root", id] => root = Some(NodeId(id.parse().map_err(|_| err(format!("bad root id {id:?}")))?)),
                ["tx_range", m] => {
                    let m: f64 = m.parse().map_err(|_| err(format!("bad range {m:?}")))?;
                    if !(m.is_finite() && m > 0.0) {
                        return Err(err("range must be positive".into()));
                    }
                    tx_range = Some(m);
                }
                [id, x, y] => {
                    let id: u16 = id.parse().map_err(|_| err(format!("bad node id {id:?}")))?;
                    let x: f64 = x.parse().map_err(|_| err(format!("bad x {x:?}")))?;
                    let y: f64 = y.parse().map_err(|_| err(format!("bad y {y:?}")))?;
                    if !(x.is_finite() && y.is_finite()) {
                        return Err(err("coordinates must be finite".into()));
                    }
                    nodes.push((line, id, Position { x, y }));
                }
                _ => return Err(err(format!("unrecognised line {body:?}"))),
            }
        }
        nodes.sort_by_key(|(_, id, _)| *id);
        for (k, (line, id, _)) in nodes.iter().enumerate() {
            if *id as usize != k {
                return Err(TopologyError::Parse { line: *line, msg: format!("expected node id {k}, found {id}") });
            }
        }
        let positions = nodes.into_iter().map(|(_, _, p)| p).collect();
        Topology::new(positions, root.unwrap_or(NodeId::ROOT), tx_range.unwrap_or(UNIFORM_TX_RANGE))
    }
}

fn square_side(n: usize) -> Option<usize> {
    let s = (n as f64).sqrt().round() as usize;
    (s * s == n).then_some(s)
}

/// `sqrt(n) x sqrt(n)` grid, row-major ids, root in the corner at the origin.
pub fn make_grid(n: usize) -> Result<Topology, TopologyError> {
    let side = square_side(n).filter(|&s| s > 0).ok_or(TopologyError::NotASquare(n))?;
    let positions =
        (0..n).map(|i| Position { x: (i % side) as f64 * GRID_SPACING, y: (i / side) as f64 * GRID_SPACING }).collect();
    Topology::new(positions, NodeId::ROOT, GRID_TX_RANGE)
}

/// Side of the uniform deployment square: `(sqrt(n) - 2) * 35` metres.
pub fn uniform_side(n: usize) -> f64 {
    ((n as f64).sqrt() - 2.0) * GRID_SPACING
}

/// Uniform placement; the node nearest the centre becomes node 0 (the root).
/// Disconnected placements are redrawn from derived seeds.
pub fn make_uniform(n: usize, seed: u64) -> Result<Topology, TopologyError> {
    if n < 9 {
        return Err(TopologyError::TooSmall(n));
    }
    let side = uniform_side(n);
    for attempt in 0..UNIFORM_MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt as u64));
        let mut pts: Vec<Position> =
            (0..n).map(|_| Position { x: rng.random_range(0.0..=side), y: rng.random_range(0.0..=side) }).collect();
        let centre = Position { x: side / 2.0, y: side / 2.0 };
        let nearest = (0..n)
            .min_by(|&a, &b| pts[a].distance(&centre).total_cmp(&pts[b].distance(&centre)).then(a.cmp(&b)))
            .unwrap();
        pts.swap(0, nearest);
        let t = Topology::new(pts, NodeId::ROOT, UNIFORM_TX_RANGE)?;
        if t.is_connected() {
            return Ok(t);
        }
    }
    Err(TopologyError::DisconnectedAfterRetries { attempts: UNIFORM_MAX_ATTEMPTS })
}

/// SplitMix64 step over `seed ^ stream`, for independent derived streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn degrees(t: &Topology) -> Vec<usize> {
        t.ids().map(|i| t.neighbors(i).len()).collect()
    }

    #[test]
    fn grid_of_nine() {
        let t = make_grid(9).unwrap();
        assert_eq!(degrees(&t), [2, 3, 2, 3, 4, 3, 2, 3, 2]);
        assert_eq!(t.depth(), 4);
        assert_eq!(t.root(), NodeId(0));
    }

    #[test]
    fn grid_of_four() {
        assert_eq!(degrees(&make_grid(4).unwrap()), [2, 2, 2, 2]);
        assert_eq!(make_grid(10), Err(TopologyError::NotASquare(10)));
    }

    #[test]
    fn grid_is_four_neighbourhood() {
        for n in [9usize, 25, 49, 81, 121, 169] {
            let t = make_grid(n).unwrap();
            let s = square_side(n).unwrap();
            for v in t.ids() {
                let (r, c) = (v.0 as usize / s, v.0 as usize % s);
                let mut want = Vec::new();
                for (dr, dc) in [(-1i64, 0i64), (0, -1), (0, 1), (1, 0)] {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if (0..s as i64).contains(&rr) && (0..s as i64).contains(&cc) {
                        want.push(NodeId((rr as usize * s + cc as usize) as u16));
                    }
                }
                want.sort_unstable();
                assert_eq!(t.neighbors(v), want.as_slice());
            }
            assert_eq!(t.depth(), 2 * (s - 1));
        }
    }

    #[test]
    fn uniform_side_formula() {
        assert_eq!(uniform_side(121), 315.0);
    }

    #[test]
    fn uniform_is_reproducible_and_connected() {
        let a = make_uniform(49, 7).unwrap();
        let b = make_uniform(49, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.is_connected());
        assert_ne!(a, make_uniform(49, 8).unwrap());
        assert_eq!(make_uniform(4, 1).unwrap_err(), TopologyError::TooSmall(4));
        let side = uniform_side(49);
        let c = Position { x: side / 2.0, y: side / 2.0 };
        let d0 = a.position(NodeId(0)).distance(&c);
        assert!(a.ids().all(|i| a.position(i).distance(&c) >= d0));
    }

    #[test]
    fn text_round_trip() {
        let t = make_uniform(25, 3).unwrap();
        let back = Topology::from_text(&t.to_text()).unwrap();
        assert_eq!(back, t);
        let err = Topology::from_text("root 0\n0 0 0\n2 1 1\n").unwrap_err();
        assert!(matches!(err, TopologyError::Parse { line: 3, .. }), "{err:?}");
        let err = Topology::from_text("# c\nroot 0\n0 0 zero\n").unwrap_err();
        assert!(matches!(err, TopologyError::Parse { line: 3, .. }));
    }

    #[test]
    fn bfs_parent_prefers_smallest_id() {
        let t = make_grid(9).unwrap();
        let p = t.bfs_parent_map().unwrap();
        // Node 4 (centre) is two hops away via 1 or 3.
        assert_eq!(p.parent_of(NodeId(4)), Some(NodeId(1)));
        assert_eq!(p.parent_of(NodeId(8)), Some(NodeId(5)));
    }
}
