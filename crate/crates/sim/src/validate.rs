//! Invariant checks over finished runs.

use std::collections::BTreeSet;
use std::fmt;

use mhcl_core::oracle::{oracle_plan, oracle_route, ParentMap};
use mhcl_core::{Mode, NodeId};
use rayon::prelude::*;

use crate::simcore::{RunOutput, SimConfig};
use crate::sweep::{RunError, Scenario};
use crate::topology::Topology;
use crate::trace;

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub scenario: String,
    pub seed: u64,
    pub check: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} seed {}: {}: {}", self.scenario, self.seed, self.check, self.detail)
    }
}

/// Collects violations for one run.
struct Checker {
    scenario: String,
    seed: u64,
    found: Vec<Violation>,
}

impl Checker {
    fn fail(&mut self, check: &'static str, detail: impl Into<String>) {
        self.found.push(Violation { scenario: self.scenario.clone(), seed: self.seed, check, detail: detail.into() });
    }

    fn ensure(&mut self, ok: bool, check: &'static str, detail: impl FnOnce() -> String) {
        if !ok {
            self.fail(check, detail());
        }
    }
}

/// Message budget per non-root node in a loss-free run.
pub fn message_bound(mode: Mode) -> u64 {
    match mode {
        Mode::Greedy => 4,
        Mode::Aggregate => 6,
    }
}

/// Checks every invariant that applies to `out`, a run of `cfg` on `topo`.
pub fn check_run(id: &str, cfg: &SimConfig, topo: &Topology, out: &RunOutput) -> Vec<Violation> {
    let mut c = Checker { scenario: id.to_string(), seed: cfg.seed, found: Vec::new() };
    let m = &out.metrics;
    let root = topo.root();

    for (name, r) in [("addr_rate", m.addr_rate), ("up_rate", m.up_rate), ("down_rate", m.down_rate)] {
        c.ensure((0.0..=1.0).contains(&r), "rate-bounds", || format!("{name} = {r}"));
    }
    for (name, s) in [("up", m.up), ("down", m.down)] {
        c.ensure(s.sent == s.resolved(), "conservation", || {
            format!("{name}: sent {} resolved {}", s.sent, s.resolved())
        });
    }
    c.ensure(m.down.sent <= m.up.delivered, "conservation", || "more replies than delivered requests".into());
    c.ensure(m.address_log.windows(2).all(|w| w[0].time_ms <= w[1].time_ms), "event-order", || {
        "address log out of time order".into()
    });
    c.ensure(trace_ordered(&out.trace), "event-order", || "trace timestamps decrease".into());

    for r in &out.nodes {
        if let Some(p) = r.parent {
            c.ensure(topo.neighbors(r.id).contains(&p), "parent-adjacent", || format!("{} -> {p} is not a link", r.id));
        }
    }
    let tree = match ParentMap::new(root, out.nodes.iter().filter_map(|r| r.parent.map(|p| (r.id, p)))) {
        Ok(t) => t,
        Err(e) => {
            c.fail("parent-tree", format!("{e:?}"));
            return c.found;
        }
    };
    c.ensure(tree.height() == m.dag_depth, "dag-depth", || format!("metrics {} tree {}", m.dag_depth, tree.height()));

    if let Some(mode) = cfg.mode.mhcl() {
        check_mhcl(&mut c, cfg, mode, topo, &tree, out);
    }
    c.found
}

fn trace_ordered(t: &[trace::TraceRecord]) -> bool {
    t.windows(2).all(|w| w[0].time_ms <= w[1].time_ms)
}

fn check_mhcl(c: &mut Checker, cfg: &SimConfig, mode: Mode, topo: &Topology, tree: &ParentMap, out: &RunOutput) {
    let m = &out.metrics;
    let root = topo.root();
    let n = topo.len() as u64;

    let addressed: Vec<_> = out.nodes.iter().filter(|r| r.id != root && r.own.is_some()).collect();
    c.ensure(addressed.len() == m.addressed, "addressed-count", || {
        format!("metrics {} nodes {}", m.addressed, addressed.len())
    });

    let mut seen = BTreeSet::new();
    for r in out.nodes.iter().filter(|r| r.own.is_some()) {
        let a = r.own.unwrap();
        c.ensure(seen.insert(a), "unique-address", || format!("{a} assigned twice"));
    }

    for e in &out.engines {
        let Some(range) = e.range() else { continue };
        if let Some(own) = e.own_address() {
            c.ensure(range.contains(own), "containment", || format!("{} owns {own} outside {range}", e.id()));
        }
        let allocs: Vec<_> = e.allocations().collect();
        for (i, &(child, cr)) in allocs.iter().enumerate() {
            c.ensure(range.covers(&cr), "containment", || format!("{} gave {child} {cr} outside {range}", e.id()));
            if let Some(own) = e.own_address() {
                c.ensure(!cr.contains(own), "disjoint", || format!("{child} range {cr} holds parent address"));
            }
            for &(other, or) in &allocs[i + 1..] {
                c.ensure(!cr.overlaps(&or), "disjoint", || format!("{child} {cr} overlaps {other} {or}"));
            }
            let ce = &out.engines[child.0 as usize];
            if let Some(held) = ce.range() {
                c.ensure(held == cr, "containment", || format!("{child} holds {held}, parent granted {cr}"));
            }
        }
        c.ensure(e.routing_table().len() == allocs.len(), "routing-table", || {
            format!("{}: {} entries for {} allocations", e.id(), e.routing_table().len(), allocs.len())
        });
    }

    for r in &addressed {
        let own = r.own.unwrap();
        let expected: Vec<NodeId> = {
            let mut p = vec![r.id];
            let mut at = r.id;
            while let Some(up) = tree.parent_of(at) {
                p.push(up);
                at = up;
            }
            p.reverse();
            p
        };
        match out.route_down(root, own) {
            Ok(path) => c.ensure(path == expected, "forwarding", || format!("to {own}: {path:?} vs tree {expected:?}")),
            Err(e) => c.fail("forwarding", format!("to {own}: {e}")),
        }
        c.ensure(out.engines[r.id.0 as usize].forward_up().ok() == r.parent, "forwarding", || {
            format!("{} forwards up to a non-parent", r.id)
        });
    }

    if !cfg.failure.is_lossless() {
        return;
    }
    let exhausted = m.allocation_failures > 0;
    c.ensure(exhausted || m.addr_rate == 1.0, "zero-loss-complete", || format!("addr_rate {}", m.addr_rate));
    c.ensure(m.retransmissions == 0, "zero-loss-retransmissions", || format!("{}", m.retransmissions));
    let total = m.dio_count + m.dao_count - m.retransmissions;
    let bound = message_bound(mode) * n.saturating_sub(1);
    // Late joiners make aggregate counts change after they were reported,
    // so the aggregate budget only holds for a synchronized start.
    if mode == Mode::Greedy || cfg.start_jitter_ms == 0 {
        c.ensure(total <= bound, "message-bound", || format!("{total} > {bound}"));
    }
    if mode == Mode::Aggregate && !exhausted {
        let root_engine = &out.engines[root.0 as usize];
        c.ensure(root_engine.descendant_count() as u64 == n - 1, "aggregate-count", || {
            format!("root counts {} of {}", root_engine.descendant_count(), n - 1)
        });
    }
    if !exhausted && m.delayed_connections == 0 {
        match oracle_plan(tree, cfg.root_range(), mode, cfg.reserve) {
            Ok(plan) => {
                let got = out.plan();
                c.ensure(got == plan, "oracle-plan", || first_plan_difference(&plan, &got));
                for (id, (own, _)) in &plan {
                    let want = oracle_route(tree, &plan, *own).ok();
                    let have = out.route_down(root, *own).ok();
                    c.ensure(want == have, "oracle-route", || format!("to {id}: {have:?} vs oracle {want:?}"));
                }
            }
            Err(e) => c.fail("oracle-plan", format!("oracle cannot plan a run that did not exhaust: {e}")),
        }
    }
}

fn first_plan_difference(want: &mhcl_core::oracle::Plan, got: &mhcl_core::oracle::Plan) -> String {
    for (id, w) in want {
        match got.get(id) {
            Some(g) if g == w => {}
            g => return format!("node {id}: run {g:?} oracle {w:?}"),
        }
    }
    format!("run has {} entries, oracle {}", got.len(), want.len())
}

/// Runs one scenario and seed twice (with tracing) and checks invariants
/// plus reproducibility.
pub fn validate_one(s: &Scenario, seed: u64) -> Result<Vec<Violation>, RunError> {
    let traced = Scenario { config: SimConfig { trace: true, ..s.config.clone() }, ..s.clone() };
    let (topo, a) = traced.run(seed)?;
    let (_, b) = traced.run(seed)?;
    let cfg = SimConfig { seed, ..traced.config.clone() };
    let mut v = check_run(&s.id(), &cfg, &topo, &a);
    if a.metrics != b.metrics || a.trace != b.trace {
        v.push(Violation { scenario: s.id(), seed, check: "determinism", detail: "repeated run differs".into() });
    }
    Ok(v)
}

/// Outcome of validating one (scenario, seed) pair.
pub type Report = (String, u64, Result<Vec<Violation>, RunError>);

pub fn validate_all(scenarios: &[Scenario], seeds: &[u64]) -> Vec<Report> {
    let jobs: Vec<(usize, u64)> = (0..scenarios.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let mut out: Vec<(usize, Report)> =
        jobs.par_iter().map(|&(i, seed)| (i, (scenarios[i].id(), seed, validate_one(&scenarios[i], seed)))).collect();
    out.sort_by_key(|(i, r)| (*i, r.1));
    out.into_iter().map(|(_, r)| r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::{FailureKind, FailureModel};
    use crate::simcore::ProtocolMode;
    use crate::sweep::TopologySpec;

    fn scen(topo: TopologySpec, n: usize, mode: ProtocolMode, failure: FailureModel) -> Scenario {
        Scenario::new(topo, n, mode, failure, &SimConfig::default())
    }

    #[test]
    fn clean_runs_have_no_violations() {
        for mode in [ProtocolMode::Greedy, ProtocolMode::Aggregate, ProtocolMode::Baseline] {
            for (t, n) in [(TopologySpec::Grid, 25), (TopologySpec::Uniform, 36)] {
                let v = validate_one(&scen(t, n, mode, FailureModel::NONE), 3).unwrap();
                assert!(v.is_empty(), "{v:?}");
            }
        }
    }

    #[test]
    fn lossy_runs_have_no_violations() {
        for kind in [FailureKind::Tx, FailureKind::Rx] {
            let s = scen(TopologySpec::Grid, 49, ProtocolMode::Aggregate, FailureModel::new(kind, 0.2));
            let v = validate_one(&s, 5).unwrap();
            assert!(v.is_empty(), "{v:?}");
        }
    }

    #[test]
    fn tampering_is_detected() {
        let s = scen(TopologySpec::Grid, 9, ProtocolMode::Greedy, FailureModel::NONE);
        let (topo, mut out) = s.run(1).unwrap();
        let cfg = SimConfig { seed: 1, ..s.config.clone() };
        assert!(check_run(&s.id(), &cfg, &topo, &out).is_empty());
        out.nodes[4].own = out.nodes[3].own;
        out.metrics.up.delivered += 1;
        let checks: BTreeSet<&str> = check_run(&s.id(), &cfg, &topo, &out).iter().map(|v| v.check).collect();
        assert!(checks.contains("unique-address"), "{checks:?}");
        assert!(checks.contains("conservation"), "{checks:?}");
        assert!(checks.contains("oracle-plan"), "{checks:?}");
    }
}
