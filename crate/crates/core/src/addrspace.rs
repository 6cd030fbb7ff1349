//! Address-space partitioning.
//!
//! A node owns a half-open range of host addresses. It keeps the first address
//! for itself, hands contiguous sub-ranges to its children in ascending child
//! id order, and leaves the tail as a reserve pool for late joiners.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::NodeId;

/// Largest supported host-address width in bits (the compressed 6LoWPAN host part).
pub const MAX_ADDRESS_WIDTH: u8 = 16;

/// A host address (the low-order, compressible part of an IPv6 address).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct HostAddress(pub u16);

impl fmt::Display for HostAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Contiguous half-open interval `[start, start + len)` of host addresses.
///
/// Bounds are kept as `u32` so that a range may end at `2^16`. Only reserve
/// pools may be empty; every allocated range holds at least one address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AddressRange {
    start: u32,
    len: u32,
}

impl AddressRange {
    /// Non-empty range. Returns `None` when `len == 0` or the range leaves the 16-bit space.
    pub fn new(start: u32, len: u32) -> Option<Self> {
        if len == 0 || start as u64 + len as u64 > 1 << MAX_ADDRESS_WIDTH {
            return None;
        }
        Some(AddressRange { start, len })
    }

    /// The whole space of a `width`-bit address, `[0, 2^width)`.
    pub fn full(width: u8) -> Option<Self> {
        if width == 0 || width > MAX_ADDRESS_WIDTH {
            return None;
        }
        Some(AddressRange { start: 0, len: 1 << width })
    }

    /// Empty range positioned at `at`.
    pub fn empty(at: u32) -> Self {
        AddressRange { start: at.min(1 << MAX_ADDRESS_WIDTH), len: 0 }
    }

    /// `[start, end)`; `None` if `end <= start` or out of space.
    pub fn from_bounds(start: u32, end: u32) -> Option<Self> {
        if end <= start {
            return None;
        }
        Self::new(start, end - start)
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    pub fn end(&self) -> u32 {
        self.start + self.len
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// First address; `None` for an empty range.
    pub fn first(&self) -> Option<HostAddress> {
        (!self.is_empty()).then_some(HostAddress(self.start as u16))
    }

    /// Last address; `None` for an empty range.
    pub fn last(&self) -> Option<HostAddress> {
        (!self.is_empty()).then(|| HostAddress((self.end() - 1) as u16))
    }

    pub fn contains(&self, addr: HostAddress) -> bool {
        let a = addr.0 as u32;
        self.start <= a && a < self.end()
    }

    /// `other` lies entirely inside `self`.
    pub fn covers(&self, other: &AddressRange) -> bool {
        self.start <= other.start && other.end() <= self.end()
    }

    pub fn overlaps(&self, other: &AddressRange) -> bool {
        !self.is_empty() && !other.is_empty() && self.start < other.end() && other.start < self.end()
    }
}

impl fmt::Display for AddressRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{})", self.start, self.end())
    }
}

/// `true` iff `addr` lies in `range`.
pub fn contains(range: &AddressRange, addr: HostAddress) -> bool {
    range.contains(addr)
}

/// Fraction `num/den` of a range withheld for delayed connections.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ReserveFraction {
    num: u32,
    den: u32,
}

impl ReserveFraction {
    /// 1/16, i.e. 6.25 %.
    pub const DEFAULT: ReserveFraction = ReserveFraction { num: 1, den: 16 };
    pub const ZERO: ReserveFraction = ReserveFraction { num: 0, den: 1 };

    /// Requires `0 <= num/den < 1`.
    pub fn new(num: u32, den: u32) -> Option<Self> {
        (den > 0 && num < den).then_some(ReserveFraction { num, den })
    }

    pub fn numerator(&self) -> u32 {
        self.num
    }

    pub fn denominator(&self) -> u32 {
        self.den
    }

    /// `floor(r * len)`.
    pub fn base_reserve(&self, len: u32) -> u32 {
        (len as u64 * self.num as u64 / self.den as u64) as u32
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Default for ReserveFraction {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for ReserveFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Error parsing a [`ReserveFraction`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseReserveError;

impl fmt::Display for ParseReserveError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("reserve must be `a/b`, a percentage like `6.25%`, or a decimal in [0,1)")
    }
}

impl core::error::Error for ParseReserveError {}

/// Parses a non-negative decimal into an exact fraction.
fn parse_decimal(s: &str) -> Option<(u64, u64)> {
    let (int, frac) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int.is_empty() && frac.is_empty() || frac.len() > 9 {
        return None;
    }
    let digits_ok = |t: &str| t.bytes().all(|b| b.is_ascii_digit());
    if !digits_ok(int) || !digits_ok(frac) {
        return None;
    }
    let den = 10u64.pow(frac.len() as u32);
    let int_v: u64 = if int.is_empty() { 0 } else { int.parse().ok()? };
    let frac_v: u64 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
    Some((int_v.checked_mul(den)?.checked_add(frac_v)?, den))
}

impl FromStr for ReserveFraction {
    type Err = ParseReserveError;

    /// Accepts `1/16`, `6.25%` or `0.0625`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (num, den) = if let Some((a, b)) = s.split_once('/') {
            let a: u64 = a.trim().parse().map_err(|_| ParseReserveError)?;
            let b: u64 = b.trim().parse().map_err(|_| ParseReserveError)?;
            (a, b)
        } else if let Some(p) = s.strip_suffix('%') {
            let (n, d) = parse_decimal(p.trim()).ok_or(ParseReserveError)?;
            (n, d * 100)
        } else {
            parse_decimal(s).ok_or(ParseReserveError)?
        };
        let g = gcd(num, den);
        let (num, den) = (num.checked_div(g).unwrap_or(num), den.checked_div(g).unwrap_or(den));
        let num = u32::try_from(num).map_err(|_| ParseReserveError)?;
        let den = u32::try_from(den).map_err(|_| ParseReserveError)?;
        ReserveFraction::new(num, den).ok_or(ParseReserveError)
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

/// Allocation failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocError {
    /// Fewer usable addresses than children that need one each.
    InsufficientSpace { usable: u32, children: usize },
}

impl fmt::Display for AllocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AllocError::InsufficientSpace { usable, children } => {
                write!(f, "insufficient address space: {usable} usable addresses for {children} children")
            }
        }
    }
}

impl core::error::Error for AllocError {}

/// Outcome of splitting a range among children.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionResult {
    /// The node's own address; `None` when carving from a reserve pool.
    pub own: Option<HostAddress>,
    /// Child allocations in ascending child id order.
    pub children: Vec<(NodeId, AddressRange)>,
    /// Remaining tail of the range (may be empty).
    pub reserve: AddressRange,
}

impl PartitionResult {
    pub fn range_of(&self, child: NodeId) -> Option<AddressRange> {
        self.children.iter().find(|(c, _)| *c == child).map(|(_, r)| *r)
    }
}

fn sorted_ids(ids: &[NodeId]) -> Vec<NodeId> {
    let mut v = ids.to_vec();
    v.sort_unstable();
    v
}

/// Lays out `lengths` contiguously from `from`, reserve after, up to `end`.
fn layout(own: Option<HostAddress>, from: u32, end: u32, parts: Vec<(NodeId, u32)>) -> PartitionResult {
    let mut cursor = from;
    let children = parts
        .into_iter()
        .map(|(id, len)| {
            let r = AddressRange { start: cursor, len };
            cursor += len;
            (id, r)
        })
        .collect();
    PartitionResult { own, children, reserve: AddressRange { start: cursor, len: end - cursor } }
}

fn equal_split(
    own: Option<HostAddress>,
    from: u32,
    end: u32,
    base_reserve: u32,
    child_ids: &[NodeId],
) -> Result<PartitionResult, AllocError> {
    let usable = end - from - base_reserve;
    let k = child_ids.len();
    if (usable as usize) < k {
        return Err(AllocError::InsufficientSpace { usable, children: k });
    }
    let each = if k == 0 { 0 } else { usable / k as u32 };
    let parts = sorted_ids(child_ids).into_iter().map(|c| (c, each)).collect();
    Ok(layout(own, from, end, parts))
}

/// Greedy split: the node keeps `range.start`, the reserve takes
/// `floor(r * len)` plus every rounding remainder, and each child receives
/// `floor((len - 1 - floor(r * len)) / k)` addresses.
pub fn partition_greedy(
    range: &AddressRange,
    child_ids: &[NodeId],
    r: ReserveFraction,
) -> Result<PartitionResult, AllocError> {
    debug_assert!(!range.is_empty());
    equal_split(range.first(), range.start + 1, range.end(), r.base_reserve(range.len), child_ids)
}

/// Proportional split by subtree size.
///
/// With `U = len - 1 - floor(r * len)` usable addresses and `k` children,
/// every child first receives one address; the other `U - k` are shared in
/// proportion to the subtree sizes by the largest-remainder method. Children
/// whose remainders tie are served as a group or not at all, and unserved
/// leftovers join the reserve, so equal sizes reproduce the greedy split.
pub fn partition_aggregate(
    range: &AddressRange,
    subtree_sizes: &[(NodeId, u32)],
    r: ReserveFraction,
) -> Result<PartitionResult, AllocError> {
    debug_assert!(!range.is_empty());
    let end = range.end();
    let from = range.start + 1;
    let usable = end - from - r.base_reserve(range.len);
    let k = subtree_sizes.len();
    if (usable as usize) < k {
        return Err(AllocError::InsufficientSpace { usable, children: k });
    }
    let mut sizes = subtree_sizes.to_vec();
    sizes.sort_unstable_by_key(|(id, _)| *id);
    let lengths = proportional_lengths(usable, &sizes);
    let parts = sizes.iter().map(|(id, _)| *id).zip(lengths).collect();
    Ok(layout(range.first(), from, end, parts))
}

/// One address each, then largest-remainder shares of `usable - k`.
fn proportional_lengths(usable: u32, sizes: &[(NodeId, u32)]) -> Vec<u32> {
    let k = sizes.len();
    if k == 0 {
        return Vec::new();
    }
    let rest = (usable as u64) - k as u64;
    let total: u64 = sizes.iter().map(|(_, s)| (*s).max(1) as u64).sum();
    let mut lengths = Vec::with_capacity(k);
    let mut remainders = Vec::with_capacity(k);
    let mut assigned = 0u64;
    for (i, (_, s)) in sizes.iter().enumerate() {
        let quota = rest * (*s).max(1) as u64;
        let share = quota / total;
        assigned += share;
        lengths.push(1 + share as u32);
        remainders.push((quota % total, i));
    }
    let mut leftover = rest - assigned;
    // Descending remainder; stable on index so groups stay in id order.
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut i = 0;
    while leftover > 0 && i < k {
        let rem = remainders[i].0;
        let group_end = remainders[i..].iter().position(|(r, _)| *r != rem).map_or(k, |p| i + p);
        let group = group_end - i;
        if rem == 0 || group as u64 > leftover {
            break;
        }
        for &(_, idx) in &remainders[i..group_end] {
            lengths[idx] += 1;
        }
        leftover -= group as u64;
        i = group_end;
    }
    lengths
}

/// Carves ranges for late joiners out of a reserve pool, with the greedy
/// layout but without consuming an own address. A fresh reserve of
/// `floor(r * reserve.len)` addresses (plus remainders) stays at the tail.
pub fn allocate_delayed(
    reserve: &AddressRange,
    new_child_ids: &[NodeId],
    r: ReserveFraction,
) -> Result<PartitionResult, AllocError> {
    equal_split(None, reserve.start, reserve.end(), r.base_reserve(reserve.len), new_child_ids)
}
