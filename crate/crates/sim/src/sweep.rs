//! Batches of runs, CSV rows and summary statistics.

use std::fmt;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::link::FailureModel;
use crate::simcore::{run, Metrics, ProtocolMode, RunOutput, SimConfig, SimError};
use crate::topology::{make_grid, make_uniform, Topology, TopologyError};

#[derive(Debug, Clone, PartialEq)]
pub enum TopologySpec {
    Grid,
    /// Placement drawn from the run seed.
    Uniform,
    File(PathBuf),
}

impl TopologySpec {
    pub fn build(&self, n: usize, seed: u64) -> Result<Topology, RunError> {
        match self {
            TopologySpec::Grid => Ok(make_grid(n)?),
            TopologySpec::Uniform => Ok(make_uniform(n, seed)?),
            TopologySpec::File(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| RunError::Io(format!("{}: {e}", p.display())))?;
                Ok(Topology::from_text(&text)?)
            }
        }
    }

    pub fn label(&self) -> &str {
        match self {
            TopologySpec::Grid => "grid",
            TopologySpec::Uniform => "uniform",
            TopologySpec::File(_) => "file",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Io(String),
}

/// One point of the experiment matrix, to be run over several seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub topology: TopologySpec,
    pub n: usize,
    pub config: SimConfig,
}

impl Scenario {
    pub fn new(topology: TopologySpec, n: usize, mode: ProtocolMode, failure: FailureModel, base: &SimConfig) -> Self {
        Scenario { topology, n, config: SimConfig { mode, failure, ..base.clone() } }
    }

    /// Stable identifier, e.g. `grid-n81-greedy-tx10`.
    pub fn id(&self) -> String {
        format!("{}-n{}-{}-{}", self.topology.label(), self.n, self.config.mode, self.config.failure.label())
    }

    pub fn run(&self, seed: u64) -> Result<(Topology, RunOutput), RunError> {
        let topo = self.topology.build(self.n, seed)?;
        let cfg = SimConfig { seed, ..self.config.clone() };
        let out = run(&cfg, &topo)?;
        Ok((topo, out))
    }
}

/// Outcome of one (scenario, seed) pair.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub scenario: usize,
    pub seed: u64,
    pub result: Result<Metrics, RunError>,
}

/// Runs every scenario over every seed in parallel; records come back in
/// (scenario, seed) order.
pub fn run_all(scenarios: &[Scenario], seeds: &[u64]) -> Vec<RunRecord> {
    let jobs: Vec<(usize, u64)> = (0..scenarios.len()).flat_map(|s| seeds.iter().map(move |&k| (s, k))).collect();
    let mut records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(s, seed)| RunRecord { scenario: s, seed, result: scenarios[s].run(seed).map(|(_, o)| o.metrics) })
        .collect();
    records.sort_by_key(|r| (r.scenario, r.seed));
    records
}

pub const CSV_COLUMNS: [&str; 13] = [
    "scenario_id",
    "seed",
    "mode",
    "topology",
    "n",
    "dag_depth",
    "setup_ms",
    "dio_count",
    "dao_count",
    "addr_rate",
    "up_rate",
    "down_rate",
    "timed_out",
];

/// One CSV line. Numeric fields are preformatted so aggregate rows can
/// share the schema.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub scenario_id: String,
    pub seed: String,
    pub mode: String,
    pub topology: String,
    pub n: usize,
    pub dag_depth: String,
    pub setup_ms: String,
    pub dio_count: String,
    pub dao_count: String,
    pub addr_rate: String,
    pub up_rate: String,
    pub down_rate: String,
    pub timed_out: String,
}

fn f6(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        String::new()
    }
}

impl Row {
    fn base(s: &Scenario, seed: String) -> Row {
        Row {
            scenario_id: s.id(),
            seed,
            mode: s.config.mode.to_string(),
            topology: s.topology.label().to_string(),
            n: s.n,
            dag_depth: String::new(),
            setup_ms: String::new(),
            dio_count: String::new(),
            dao_count: String::new(),
            addr_rate: String::new(),
            up_rate: String::new(),
            down_rate: String::new(),
            timed_out: String::new(),
        }
    }

    pub fn from_record(s: &Scenario, r: &RunRecord) -> Row {
        let mut row = Row::base(s, r.seed.to_string());
        match &r.result {
            Ok(m) => {
                row.dag_depth = m.dag_depth.to_string();
                row.setup_ms = m.setup_ms.map(|t| t.to_string()).unwrap_or_default();
                row.dio_count = m.dio_count.to_string();
                row.dao_count = m.dao_count.to_string();
                row.addr_rate = f6(m.addr_rate);
                row.up_rate = f6(m.up_rate);
                row.down_rate = f6(m.down_rate);
                row.timed_out = m.timed_out.to_string();
            }
            Err(e) => row.timed_out = format!("error:{e}"),
        }
        row
    }
}

/// Mean and 95% confidence half-width (Student t). The half-width is NaN
/// for fewer than two samples.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let k = xs.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (k - 1) as f64).expect("dof >= 1").inverse_cdf(0.975);
    (mean, t * (var / k as f64).sqrt())
}

/// Column-wise statistics over the successful runs of one scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub errors: usize,
    pub dag_depth: (f64, f64),
    pub setup_ms: (f64, f64),
    pub dio_count: (f64, f64),
    pub dao_count: (f64, f64),
    pub addr_rate: (f64, f64),
    pub up_rate: (f64, f64),
    pub down_rate: (f64, f64),
    pub timed_out: f64,
}

pub fn summarize(records: &[&RunRecord]) -> Summary {
    let ok: Vec<&Metrics> = records.iter().filter_map(|r| r.result.as_ref().ok()).collect();
    let col = |f: &dyn Fn(&Metrics) -> Option<f64>| mean_ci95(&ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>());
    Summary {
        runs: records.len(),
        errors: records.len() - ok.len(),
        dag_depth: col(&|m| Some(m.dag_depth as f64)),
        setup_ms: col(&|m| m.setup_ms.map(|t| t as f64)),
        dio_count: col(&|m| Some(m.dio_count as f64)),
        dao_count: col(&|m| Some(m.dao_count as f64)),
        addr_rate: col(&|m| Some(m.addr_rate)),
        up_rate: col(&|m| Some(m.up_rate)),
        down_rate: col(&|m| Some(m.down_rate)),
        timed_out: if ok.is_empty() {
            f64::NAN
        } else {
            ok.iter().filter(|m| m.timed_out).count() as f64 / ok.len() as f64
        },
    }
}

fn aggregate_rows(s: &Scenario, sum: &Summary) -> [Row; 2] {
    let mut mean = Row::base(s, "mean".into());
    let mut ci = Row::base(s, "ci95".into());
    for (pair, m, c) in [
        (sum.dag_depth, &mut mean.dag_depth, &mut ci.dag_depth),
        (sum.setup_ms, &mut mean.setup_ms, &mut ci.setup_ms),
        (sum.dio_count, &mut mean.dio_count, &mut ci.dio_count),
        (sum.dao_count, &mut mean.dao_count, &mut ci.dao_count),
        (sum.addr_rate, &mut mean.addr_rate, &mut ci.addr_rate),
        (sum.up_rate, &mut mean.up_rate, &mut ci.up_rate),
        (sum.down_rate, &mut mean.down_rate, &mut ci.down_rate),
    ] {
        *m = f6(pair.0);
        *c = f6(pair.1);
    }
    mean.timed_out = f6(sum.timed_out);
    [mean, ci]
}

/// Per-seed rows of each scenario followed by its `mean` and `ci95` rows.
pub fn rows(scenarios: &[Scenario], records: &[RunRecord]) -> Vec<Row> {
    let mut out = Vec::with_capacity(records.len() + 2 * scenarios.len());
    for (i, s) in scenarios.iter().enumerate() {
        let mine: Vec<&RunRecord> = records.iter().filter(|r| r.scenario == i).collect();
        out.extend(mine.iter().map(|r| Row::from_record(s, r)));
        if !mine.is_empty() {
            out.extend(aggregate_rows(s, &summarize(&mine)));
        }
    }
    out
}

pub fn write_csv<W: std::io::Write>(w: W, rows: &[Row]) -> Result<(), csv::Error> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    if rows.is_empty() {
        wr.write_record(CSV_COLUMNS)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn csv_string(rows: &[Row]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("CSV is UTF-8")
}

/// Fixed-width table of means with 95% half-widths.
pub struct SummaryTable<'a> {
    pub scenarios: &'a [Scenario],
    pub records: &'a [RunRecord],
}

impl fmt::Display for SummaryTable<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pm = |(m, c): (f64, f64), prec: usize| {
            if c.is_finite() {
                format!("{m:.prec$} ± {c:.prec$}")
            } else {
                format!("{m:.prec$}")
            }
        };
        writeln!(
            f,
            "{:<30} {:>5} {:>12} {:>18} {:>14} {:>14} {:>16} {:>16} {:>16}",
            "scenario", "runs", "depth", "setup_ms", "dio", "dao", "addr_rate", "up_rate", "down_rate"
        )?;
        for (i, s) in self.scenarios.iter().enumerate() {
            let mine: Vec<&RunRecord> = self.records.iter().filter(|r| r.scenario == i).collect();
            if mine.is_empty() {
                continue;
            }
            let sm = summarize(&mine);
            let runs = if sm.errors > 0 { format!("{}!{}", sm.runs, sm.errors) } else { sm.runs.to_string() };
            writeln!(
                f,
                "{:<30} {:>5} {:>12} {:>18} {:>14} {:>14} {:>16} {:>16} {:>16}",
                s.id(),
                runs,
                pm(sm.dag_depth, 1),
                pm(sm.setup_ms, 0),
                pm(sm.dio_count, 0),
                pm(sm.dao_count, 0),
                pm(sm.addr_rate, 3),
                pm(sm.up_rate, 3),
                pm(sm.down_rate, 3),
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::link::FailureKind;

    #[test]
    fn ci_matches_t_table() {
        let (m, h) = mean_ci95(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        // t(0.975, 4) = 2.776; s = sqrt(2.5)
        assert!((h - 2.776445 * (2.5f64 / 5.0).sqrt()).abs() < 1e-4, "{h}");
        assert!(mean_ci95(&[1.0]).1.is_nan());
    }

    #[test]
    fn ids_and_rows() {
        let base = SimConfig::default();
        let s =
            Scenario::new(TopologySpec::Grid, 9, ProtocolMode::Greedy, FailureModel::new(FailureKind::Tx, 0.1), &base);
        assert_eq!(s.id(), "grid-n9-greedy-tx10");
        let recs = run_all(std::slice::from_ref(&s), &[2, 1]);
        assert_eq!(recs.iter().map(|r| r.seed).collect::<Vec<_>>(), [1, 2]);
        let rows = rows(std::slice::from_ref(&s), &recs);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2].seed, "mean");
        assert_eq!(rows[3].seed, "ci95");
        let csv = csv_string(&rows);
        assert_eq!(csv.lines().next().unwrap(), CSV_COLUMNS.join(","));
    }

    #[test]
    fn errors_become_tagged_rows() {
        let base = SimConfig::default();
        let s = Scenario::new(TopologySpec::Grid, 10, ProtocolMode::Greedy, FailureModel::NONE, &base);
        let recs = run_all(std::slice::from_ref(&s), &[0]);
        let row = Row::from_record(&s, &recs[0]);
        assert_eq!(row.timed_out, "error:10 is not a perfect square");
    }
}
