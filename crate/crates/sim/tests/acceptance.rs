//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the lines always reach stdout. A
//! failing sub-case fails the target unless the reference planner shows that
//! no assignment exists for that tree in the configured address space.

use std::collections::BTreeMap;
use std::time::Instant;

use mhcl_core::addrspace::{allocate_delayed, partition_aggregate, partition_greedy};
use mhcl_core::oracle::{oracle_plan, oracle_route, ParentMap};
use mhcl_core::{AddressRange, Body, Direction, HostAddress, MhclMessage, Mode, NodeId, ReserveFraction};
use mhcl_sim::sweep::{self, Scenario, TopologySpec};
use mhcl_sim::{make_grid, make_uniform, FailureKind, FailureModel, ProtocolMode, RunOutput, SimConfig, Topology};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rayon::prelude::*;

const SIZES: [usize; 6] = [9, 25, 49, 81, 121, 169];
const UNIFORM_SEEDS: [u64; 3] = [1, 2, 3];

/// A failing sub-case, with the reason when the failure is unattainable.
struct Case {
    label: String,
    infeasible: Option<String>,
}

impl Case {
    fn hard(label: impl Into<String>) -> Case {
        Case { label: label.into(), infeasible: None }
    }
}

struct Gate {
    unexpected: Vec<String>,
}

impl Gate {
    fn report(&mut self, id: &str, title: &str, cases: &[Case], detail: &str, secs: f64) {
        let status = if cases.is_empty() { "PASS" } else { "FAIL" };
        println!("[{status}] {id} {title}: {detail} ({secs:.1}s)");
        for c in cases {
            match &c.infeasible {
                Some(why) => println!("       infeasible: {}: {why}", c.label),
                None => println!("       case:       {}", c.label),
            }
        }
        if cases.iter().any(|c| c.infeasible.is_none()) {
            self.unexpected.push(id.to_string());
        }
    }
}

fn zero_loss(mode: ProtocolMode, seed: u64) -> SimConfig {
    SimConfig { mode, seed, start_jitter_ms: 0, ..SimConfig::default() }
}

fn topologies() -> Vec<(String, Topology)> {
    let mut v = Vec::new();
    for n in SIZES {
        v.push((format!("grid-n{n}"), make_grid(n).unwrap()));
        for s in UNIFORM_SEEDS {
            v.push((format!("uniform-n{n}-s{s}"), make_uniform(n, s).unwrap()));
        }
    }
    v
}

struct ZeroLossRun {
    label: String,
    mode: Mode,
    topo: Topology,
    out: RunOutput,
    /// Why the reference planner cannot address this tree, if it cannot.
    infeasible: Option<String>,
}

impl ZeroLossRun {
    fn case(&self, id: &str) -> Case {
        Case { label: format!("{id} {}", self.label), infeasible: self.infeasible.clone() }
    }
}

fn zero_loss_runs() -> Vec<ZeroLossRun> {
    let jobs: Vec<(String, Topology, ProtocolMode)> = topologies()
        .into_iter()
        .flat_map(|(l, t)| [ProtocolMode::Greedy, ProtocolMode::Aggregate].map(|m| (l.clone(), t.clone(), m)))
        .collect();
    jobs.into_par_iter()
        .map(|(l, topo, m)| {
            let cfg = zero_loss(m, 1);
            let out = mhcl_sim::run(&cfg, &topo).unwrap();
            let mode = m.mhcl().unwrap();
            let tree = topo.bfs_parent_map().unwrap();
            let infeasible = oracle_plan(&tree, cfg.root_range(), mode, cfg.reserve)
                .err()
                .map(|e| format!("reference planner: {e}; run addressed {}/{}", out.metrics.addressed, topo.len() - 1));
            ZeroLossRun { label: format!("{l}-{m}"), mode, topo, out, infeasible }
        })
        .collect()
}

/// Plan and every downward path agree with the oracle on the hop-count tree.
fn c1(runs: &[ZeroLossRun]) -> (Vec<Case>, String) {
    let mut fails = Vec::new();
    let mut routes = 0;
    for r in runs {
        let tree = r.topo.bfs_parent_map().unwrap();
        let cfg = SimConfig::default();
        let ok = r.out.parent_map(r.topo.root()) == tree
            && match oracle_plan(&tree, cfg.root_range(), r.mode, cfg.reserve) {
                Ok(plan) => {
                    r.out.plan() == plan
                        && plan.iter().filter(|(id, _)| **id != tree.root()).all(|(_, (own, _))| {
                            routes += 1;
                            r.out.route_down(r.topo.root(), *own).ok() == oracle_route(&tree, &plan, *own).ok()
                        })
                }
                Err(_) => false,
            };
        if !ok {
            fails.push(r.case("C1"));
        }
    }
    (fails, format!("{} runs, {routes} downward paths compared", runs.len()))
}

fn c2(runs: &[ZeroLossRun]) -> (Vec<Case>, String) {
    let fails: Vec<Case> = runs.iter().filter(|r| r.out.metrics.addr_rate != 1.0).map(|r| r.case("C2")).collect();
    let worst = runs.iter().map(|r| r.out.metrics.addr_rate).fold(1.0, f64::min);
    (fails, format!("{} runs, lowest addr_rate {worst:.4}", runs.len()))
}

fn control_total(out: &RunOutput) -> u64 {
    let m = &out.metrics;
    m.dio_count + m.dao_count - m.retransmissions
}

/// Least squares `y = a + b x`: (a, b, R², ||residual|| / ||y||).
fn fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let norm: f64 = ys.iter().map(|y| y * y).sum();
    (a, b, 1.0 - ss_res / ss_tot, (ss_res / norm).sqrt())
}

fn c3(runs: &[ZeroLossRun]) -> (Vec<Case>, String) {
    let mut fails = Vec::new();
    for r in runs {
        let per = match r.mode {
            Mode::Greedy => 4,
            Mode::Aggregate => 6,
        };
        let bound = per * (r.topo.len() as u64 - 1);
        if control_total(&r.out) > bound || r.out.metrics.retransmissions != 0 {
            fails.push(Case::hard(format!("C3 {} total {} > {bound}", r.label, control_total(&r.out))));
        }
    }
    let mut detail = String::new();
    for (mode, tag) in [(Mode::Greedy, "greedy"), (Mode::Aggregate, "aggregate")] {
        let grid: Vec<&ZeroLossRun> = runs.iter().filter(|r| r.mode == mode && r.label.starts_with("grid")).collect();
        let xs: Vec<f64> = grid.iter().map(|r| r.topo.len() as f64).collect();
        let ys: Vec<f64> = grid.iter().map(|r| control_total(&r.out) as f64).collect();
        let (a, b, _, rel) = fit(&xs, &ys);
        if rel >= 0.05 {
            fails.push(Case::hard(format!("C3 {tag} fit residual {rel:.4}")));
        }
        detail += &format!("{tag} count = {b:.3} n {a:+.1} (rel. residual {rel:.4}); ");
    }
    // With staggered starts, late joiners change aggregate counts already
    // reported, which costs extra DAO/DAOACK pairs. Reported, not gated.
    let jittered: Vec<(ProtocolMode, f64)> = [ProtocolMode::Greedy, ProtocolMode::Aggregate]
        .into_par_iter()
        .flat_map(|m| (1..=10u64).into_par_iter().map(move |s| (m, s)))
        .map(|(m, s)| {
            let topo = make_grid(81).unwrap();
            let out = mhcl_sim::run(&SimConfig { mode: m, seed: s, ..SimConfig::default() }, &topo).unwrap();
            (m, control_total(&out) as f64 / 80.0)
        })
        .collect();
    for m in [ProtocolMode::Greedy, ProtocolMode::Aggregate] {
        let v: Vec<f64> = jittered.iter().filter(|(k, _)| *k == m).map(|(_, x)| *x).collect();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let max = v.iter().cloned().fold(0.0, f64::max);
        detail += &format!("1 s start jitter, grid-81 {m}: mean {mean:.3}(n-1), max {max:.3}(n-1); ");
    }
    (fails, format!("{} zero-jitter runs within bound; {}", runs.len(), detail.trim_end_matches("; ")))
}

fn c4() -> (Vec<Case>, String) {
    const SEEDS: u64 = 100;
    let mut fails = Vec::new();
    let mut detail = Vec::new();
    for mode in [ProtocolMode::Greedy, ProtocolMode::Aggregate] {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for n in SIZES {
            let topo = make_grid(n).unwrap();
            let cfg = SimConfig { link: mhcl_sim::LinkDelay { base_ms: 5, jitter_ms: 0 }, ..zero_loss(mode, 0) };
            let setups: Vec<f64> = (1..=SEEDS)
                .into_par_iter()
                .map(|s| {
                    mhcl_sim::run(&SimConfig { seed: s, ..cfg.clone() }, &topo).unwrap().metrics.setup_ms.unwrap()
                        as f64
                })
                .collect();
            xs.push(topo.depth() as f64);
            ys.push(setups.iter().sum::<f64>() / setups.len() as f64);
        }
        let (a, b, r2, _) = fit(&xs, &ys);
        if r2 <= 0.95 {
            fails.push(Case::hard(format!("C4 {mode} R^2 {r2:.4}")));
        }
        detail.push(format!("{mode}: setup = {a:.0} + {b:.2} * depth ms, R^2 {r2:.4}"));
    }
    (fails, format!("{SEEDS} seeds per size; {}", detail.join("; ")))
}

/// Mean and variance of the addressed count when each hop of the tree
/// independently succeeds with probability `q`.
fn path_product_moments(tree: &ParentMap, q: f64) -> (f64, f64) {
    let nodes: Vec<NodeId> = tree.nodes().filter(|v| *v != tree.root()).collect();
    let ancestors = |v: NodeId| {
        let mut a = vec![v];
        let mut at = v;
        while let Some(p) = tree.parent_of(at) {
            a.push(p);
            at = p;
        }
        a
    };
    let paths: BTreeMap<NodeId, Vec<NodeId>> = nodes.iter().map(|v| (*v, ancestors(*v))).collect();
    let depth = |v: NodeId| paths[&v].len() as i32 - 1;
    let mean: f64 = nodes.iter().map(|v| q.powi(depth(*v))).sum();
    let mut second = 0.0;
    for u in &nodes {
        for v in &nodes {
            let lca = paths[u].iter().find(|a| paths[v].contains(a)).unwrap();
            let d_lca = if *lca == tree.root() { 0 } else { depth(*lca) };
            second += q.powi(depth(*u) + depth(*v) - d_lca);
        }
    }
    (mean, second - mean * mean)
}

fn c5() -> (Vec<Case>, String) {
    const SEEDS: u64 = 20;
    let topo = make_grid(81).unwrap();
    let tree = topo.bfs_parent_map().unwrap();
    let f: f64 = 0.1;
    let q = 1.0 - f.powi(4);
    let (mean_a, var_a) = path_product_moments(&tree, q);
    let non_root = 80.0;
    let expected = mean_a / non_root;
    let sigma = (var_a / SEEDS as f64).sqrt() / non_root;
    let sigma_binomial = (expected * (1.0 - expected) / (SEEDS as f64 * non_root)).sqrt();
    let bound = expected - 3.0 * sigma;
    let mut fails = Vec::new();
    let mut detail = vec![format!(
        "expected {expected:.5}, sigma {sigma:.5} (independent-node sigma {sigma_binomial:.5}), bound {bound:.5}"
    )];
    for mode in [ProtocolMode::Greedy, ProtocolMode::Aggregate] {
        for kind in [FailureKind::Tx, FailureKind::Rx] {
            let cfg = SimConfig { mode, failure: FailureModel::new(kind, f), ..SimConfig::default() };
            let rates: Vec<f64> = (1..=SEEDS)
                .into_par_iter()
                .map(|s| mhcl_sim::run(&SimConfig { seed: s, ..cfg.clone() }, &topo).unwrap().metrics.addr_rate)
                .collect();
            let mean = rates.iter().sum::<f64>() / rates.len() as f64;
            if mean < bound {
                fails.push(Case::hard(format!("C5 {mode}-{kind}10 mean {mean:.5} < {bound:.5}")));
            }
            detail.push(format!("{mode}-{kind}10 {mean:.5}"));
        }
    }
    (fails, detail.join("; "))
}

fn c6() -> (Vec<Case>, String) {
    let topo = make_grid(169).unwrap();
    let seeds = 1..=5u64;
    let down = |mode: ProtocolMode| {
        let v: Vec<f64> = seeds
            .clone()
            .into_par_iter()
            .map(|s| {
                let cfg = SimConfig { mode, seed: s, baseline_capacity: 20, ..SimConfig::default() };
                mhcl_sim::run(&cfg, &topo).unwrap().metrics.down_rate
            })
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let base = down(ProtocolMode::Baseline);
    let mut fails = Vec::new();
    let mut detail = vec![format!("baseline {base:.4}")];
    for mode in [ProtocolMode::Greedy, ProtocolMode::Aggregate] {
        let d = down(mode);
        if d < 2.0 * base {
            fails.push(Case::hard(format!("C6 {mode} {d:.4} < 2 x {base:.4}")));
        }
        detail.push(format!("{mode} {d:.4} ({:.2}x)", d / base));
    }
    (fails, format!("grid-169 down_rate over 5 seeds: {}", detail.join(", ")))
}

fn c7() -> (Vec<Case>, String) {
    let depths: Vec<(usize, usize)> = (1..=30u64)
        .into_par_iter()
        .map(|s| {
            let topo = make_uniform(121, s).unwrap();
            let out = mhcl_sim::run(&zero_loss(ProtocolMode::Greedy, s), &topo).unwrap();
            (topo.depth(), out.metrics.dag_depth)
        })
        .collect();
    let mean = depths.iter().map(|d| d.0 as f64).sum::<f64>() / depths.len() as f64;
    let grid = make_grid(121).unwrap();
    let grid_run = mhcl_sim::run(&zero_loss(ProtocolMode::Greedy, 1), &grid).unwrap().metrics.dag_depth;
    let mut fails = Vec::new();
    if !(5.0..=10.0).contains(&mean) {
        fails.push(Case::hard(format!("C7 uniform mean depth {mean:.2}")));
    }
    if depths.iter().any(|(t, r)| t != r) {
        fails.push(Case::hard("C7 uniform run depth differs from hop-count depth"));
    }
    if grid.depth() != 20 || grid_run != 20 {
        fails.push(Case::hard(format!("C7 grid depth {} / run {grid_run}", grid.depth())));
    }
    (fails, format!("uniform-121 mean depth {mean:.2} over 30 seeds; grid-121 depth {}", grid.depth()))
}

fn c8() -> (Vec<Case>, String) {
    let base = SimConfig::default();
    let mut scenarios = Vec::new();
    for topo in [TopologySpec::Grid, TopologySpec::Uniform] {
        for mode in [ProtocolMode::Greedy, ProtocolMode::Aggregate, ProtocolMode::Baseline] {
            for failure in
                [FailureModel::NONE, FailureModel::new(FailureKind::Tx, 0.1), FailureModel::new(FailureKind::Rx, 0.1)]
            {
                scenarios.push(Scenario::new(topo.clone(), 49, mode, failure, &base));
            }
        }
    }
    let seeds = [1, 2, 3];
    let csv = || sweep::csv_string(&sweep::rows(&scenarios, &sweep::run_all(&scenarios, &seeds)));
    let first = csv();
    let second = csv();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(csv);
    let mut fails = Vec::new();
    if first != second || first != single {
        fails.push(Case::hard("C8 CSV differs between invocations"));
    }
    let traces_equal = scenarios.par_iter().all(|s| {
        let traced = Scenario { config: SimConfig { trace: true, ..s.config.clone() }, ..s.clone() };
        let a = mhcl_sim::trace::render(&traced.run(7).unwrap().1.trace);
        let b = mhcl_sim::trace::render(&traced.run(7).unwrap().1.trace);
        a == b && !a.is_empty()
    });
    if !traces_equal {
        fails.push(Case::hard("C8 packet traces differ"));
    }
    (
        fails,
        format!(
            "{} scenarios x {} seeds, CSV {} bytes, identical across 3 invocations and thread counts",
            scenarios.len(),
            seeds.len(),
            first.len()
        ),
    )
}

fn arb_msg() -> impl Strategy<Value = MhclMessage> {
    let body = prop_oneof![
        (any::<u16>(), 1u16..).prop_map(|(f, s)| Body::Dio { first: HostAddress(f), size: s }),
        any::<u16>().prop_map(|a| Body::DioAck { acked_seq: a }),
        any::<u16>().prop_map(|c| Body::Dao { count: c }),
        any::<u16>().prop_map(|a| Body::DaoAck { acked_seq: a }),
        (any::<u16>(), any::<bool>()).prop_map(|(d, up)| Body::AppData {
            dest: HostAddress(d),
            direction: if up { Direction::Up } else { Direction::Down },
        }),
    ];
    (any::<u16>(), any::<u16>(), any::<u16>(), body).prop_map(|(s, d, q, body)| MhclMessage {
        src: NodeId(s),
        dst: NodeId(d),
        seq: q,
        body,
    })
}

fn arb_reserve() -> impl Strategy<Value = ReserveFraction> {
    (0u32..8, 8u32..64).prop_map(|(a, b)| ReserveFraction::new(a, b).unwrap())
}

/// Range covering `1..=65536` addresses somewhere in the 16-bit space.
fn arb_range() -> impl Strategy<Value = AddressRange> {
    (1u32..=65_536)
        .prop_flat_map(|len| (0..=65_536 - len).prop_map(move |start| AddressRange::new(start, len).unwrap()))
}

/// Pieces tile `range` exactly in order: own address, children, reserve.
fn tiles(range: &AddressRange, own: bool, p: &mhcl_core::PartitionResult) -> bool {
    let mut cursor = range.start();
    if own {
        if p.own != Some(HostAddress(range.start() as u16)) {
            return false;
        }
        cursor += 1;
    }
    for (_, r) in &p.children {
        if r.start() != cursor || r.is_empty() {
            return false;
        }
        cursor = r.end();
    }
    p.reserve.start() == cursor && p.reserve.end() == range.end()
}

fn c9() -> (Vec<Case>, String) {
    const CASES: u32 = 10_000;
    let mut fails = Vec::new();
    let mut run = |name: &str, f: &dyn Fn(&mut TestRunner) -> Result<(), String>| {
        let mut runner = TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() });
        if let Err(e) = f(&mut runner) {
            fails.push(Case::hard(format!("C9 {name}: {e}")));
        }
    };
    run("codec round-trip", &|r| {
        r.run(&arb_msg(), |m| {
            let bytes = m.encode();
            prop_assert_eq!(bytes.len(), m.kind().encoded_len());
            prop_assert_eq!(MhclMessage::decode(&bytes), Ok(m));
            Ok(())
        })
        .map_err(|e| e.to_string())
    });
    let ids = |k: usize| (1..=k as u16).map(NodeId).collect::<Vec<_>>();
    run("greedy tiling and disjointness", &|r| {
        r.run(&(arb_range(), 0usize..12, arb_reserve()), |(range, k, res)| {
            if let Ok(p) = partition_greedy(&range, &ids(k), res) {
                prop_assert!(tiles(&range, true, &p));
                prop_assert_eq!(p.children.len(), k);
                let lens: Vec<u32> = p.children.iter().map(|c| c.1.len()).collect();
                prop_assert!(lens.windows(2).all(|w| w[0] == w[1]));
            } else {
                prop_assert!(range.len() - 1 - res.base_reserve(range.len()) < k as u32);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    });
    run("aggregate tiling and disjointness", &|r| {
        let sizes = prop::collection::vec(1u32..500, 0..12);
        r.run(&(arb_range(), sizes, arb_reserve()), |(range, sizes, res)| {
            let with_ids: Vec<(NodeId, u32)> =
                sizes.iter().enumerate().map(|(i, s)| (NodeId(i as u16 + 1), *s)).collect();
            if let Ok(p) = partition_aggregate(&range, &with_ids, res) {
                prop_assert!(tiles(&range, true, &p));
                prop_assert_eq!(p.children.len(), sizes.len());
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    });
    run("delayed tiling", &|r| {
        r.run(&(arb_range(), 0usize..6, arb_reserve()), |(pool, k, res)| {
            if let Ok(p) = allocate_delayed(&pool, &ids(k), res) {
                prop_assert!(tiles(&pool, false, &p));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
    });
    run("greedy equals aggregate on equal sizes", &|r| {
        r.run(&(arb_range(), 0usize..12, 1u32..1000, arb_reserve()), |(range, k, s, res)| {
            let eq: Vec<(NodeId, u32)> = ids(k).into_iter().map(|i| (i, s)).collect();
            prop_assert_eq!(partition_greedy(&range, &ids(k), res), partition_aggregate(&range, &eq, res));
            Ok(())
        })
        .map_err(|e| e.to_string())
    });
    (fails, format!("5 properties x {CASES} cases"))
}

fn main() {
    let mut gate = Gate { unexpected: Vec::new() };
    let t = Instant::now();
    let runs = zero_loss_runs();
    let setup = t.elapsed().as_secs_f64();
    type Check<'a> = (&'a str, &'a str, Box<dyn Fn() -> (Vec<Case>, String) + 'a>);
    let checks: Vec<Check> = vec![
        ("C1", "oracle equivalence", Box::new(|| c1(&runs))),
        ("C2", "addressing completeness", Box::new(|| c2(&runs))),
        ("C3", "message bound", Box::new(|| c3(&runs))),
        ("C4", "setup time affine in depth", Box::new(c4)),
        ("C5", "failure resilience band", Box::new(c5)),
        ("C6", "delivery gap vs storing baseline", Box::new(c6)),
        ("C7", "topology depth statistics", Box::new(c7)),
        ("C8", "determinism", Box::new(c8)),
        ("C9", "codec and partition properties", Box::new(c9)),
    ];
    println!("zero-loss matrix: {} runs in {setup:.1}s", runs.len());
    for (id, title, check) in &checks {
        let t = Instant::now();
        let (fails, detail) = check();
        gate.report(id, title, &fails, &detail, t.elapsed().as_secs_f64());
    }
    if !gate.unexpected.is_empty() {
        println!("acceptance: unexpected failures in {}", gate.unexpected.join(", "));
        std::process::exit(1);
    }
    println!("acceptance: every failing case above is infeasible for its tree");
}
