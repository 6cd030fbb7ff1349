use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mhcl_core::oracle::oracle_plan;
use mhcl_core::ReserveFraction;
use mhcl_sim::scenario::{ScenarioError, ScenarioFile};
use mhcl_sim::sweep::{self, RunError, Scenario, SummaryTable, TopologySpec};
use mhcl_sim::{trace, FailureKind, FailureModel, ProtocolMode, SimConfig, SimError};

#[derive(Parser)]
#[command(name = "mhcl", version, about = "Hierarchical address allocation simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and print a summary.
    Run(Common),
    /// Run every scenario of a sweep and write CSV.
    Sweep(Common),
    /// Print the address plan of the hop-count tree of a topology.
    Plan(Common),
    /// Run the invariant suite on a scenario.
    Validate(Common),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TopologyArg {
    Grid,
    Uniform,
    File,
}

#[derive(Args)]
struct Common {
    /// Scenario file; flags below are ignored when given.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "grid")]
    topology: TopologyArg,
    /// Node list for `--topology file`.
    #[arg(long, value_name = "PATH")]
    topology_file: Option<PathBuf>,
    #[arg(long, default_value_t = 25)]
    n: usize,
    #[arg(long, default_value = "greedy")]
    mode: ProtocolMode,
    #[arg(long, default_value = "none")]
    failure: FailureKind,
    /// Loss probability for `--failure tx|rx`.
    #[arg(long, default_value_t = 0.1)]
    rate: f64,
    /// Reserve fraction: `1/16`, `6.25%` or `0.0625`.
    #[arg(long, default_value = "1/16")]
    reserve: ReserveFraction,
    #[arg(long, default_value_t = 16)]
    addr_width: u8,
    /// Upper bound of the uniform node start times, in ms.
    #[arg(long)]
    start_jitter: Option<u64>,
    #[arg(long, env = "MHCL_SEED", default_value_t = 1)]
    seed: u64,
    /// Seed list such as `1..20` (inclusive) or `1,4,9`; overrides --seed.
    #[arg(long)]
    seeds: Option<SeedList>,
    /// CSV output path (stdout for `sweep` when absent).
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
    /// Packet trace output path (single run only).
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Write the node list of the (single) topology used.
    #[arg(long, value_name = "PATH")]
    save_topology: Option<PathBuf>,
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

impl FromStr for SeedList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("bad seed list {s:?}");
        if let Some((a, b)) = s.split_once("..") {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            return Ok(SeedList((a..=b).collect()));
        }
        s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>().map(SeedList)
    }
}

/// Error carrying its process exit code.
struct Failure {
    code: u8,
    msg: String,
}

const EXIT_IO: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_SIM: u8 = 3;
const EXIT_INVALID: u8 = 4;

impl Failure {
    fn new(code: u8, msg: impl fmt::Display) -> Self {
        Failure { code, msg: msg.to_string() }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        let code = if matches!(e, ScenarioError::Io { .. }) { EXIT_IO } else { EXIT_USAGE };
        Failure::new(code, e)
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = match &e {
            RunError::Io(_) => EXIT_IO,
            RunError::Topology(_) | RunError::Sim(SimError::InvalidConfig(_) | SimError::TooManyNodes(_)) => EXIT_USAGE,
            RunError::Sim(_) => EXIT_SIM,
        };
        Failure::new(code, e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

impl Common {
    fn seeds(&self) -> Vec<u64> {
        self.seeds.as_ref().map(|s| s.0.clone()).unwrap_or_else(|| vec![self.seed])
    }

    fn topology_spec(&self) -> Result<TopologySpec, Failure> {
        Ok(match self.topology {
            TopologyArg::Grid => TopologySpec::Grid,
            TopologyArg::Uniform => TopologySpec::Uniform,
            TopologyArg::File => TopologySpec::File(
                self.topology_file
                    .clone()
                    .ok_or_else(|| Failure::new(EXIT_USAGE, "--topology file needs --topology-file"))?,
            ),
        })
    }

    fn base_config(&self) -> SimConfig {
        let mut c = SimConfig { reserve: self.reserve, addr_width: self.addr_width, ..SimConfig::default() };
        if let Some(j) = self.start_jitter {
            c.start_jitter_ms = j;
        }
        c
    }

    /// Scenarios and seeds from the config file, or a single scenario from flags.
    fn scenarios(&self) -> Result<(Vec<Scenario>, Vec<u64>), Failure> {
        if let Some(path) = &self.config {
            let file = ScenarioFile::load(path)?;
            let dir = path.parent().unwrap_or(Path::new("."));
            let mut seeds = file.seeds();
            if self.seeds.is_some() {
                seeds = self.seeds();
            }
            return Ok((file.scenarios(&SimConfig::default(), dir)?, seeds));
        }
        let failure = match self.failure {
            FailureKind::None => FailureModel::NONE,
            k => FailureModel::new(k, self.rate),
        };
        let spec = self.topology_spec()?;
        let n = match &spec {
            TopologySpec::File(p) => {
                let text = fs::read_to_string(p).map_err(io_err(p))?;
                mhcl_sim::Topology::from_text(&text).map_err(|e| Failure::new(EXIT_USAGE, e))?.len()
            }
            _ => self.n,
        };
        let cfg = self.base_config();
        let s = Scenario::new(spec, n, self.mode, failure, &cfg);
        s.config.validate().map_err(|e| Failure::new(EXIT_USAGE, e))?;
        Ok((vec![s], self.seeds()))
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(io_err(path))
}

fn cmd_run(a: &Common) -> Result<(), Failure> {
    let (scenarios, seeds) = a.scenarios()?;
    if scenarios.len() == 1 && seeds.len() == 1 {
        let mut s = scenarios[0].clone();
        s.config.trace = a.trace.is_some();
        let (topo, out) = s.run(seeds[0])?;
        if let Some(p) = &a.save_topology {
            write_file(p, &topo.to_text())?;
        }
        let m = &out.metrics;
        let setup = m.setup_ms.map(|t| t.to_string()).unwrap_or_else(|| "-".into());
        let mut o = io::stdout().lock();
        let _ = writeln!(o, "scenario     {}", s.id());
        let _ = writeln!(o, "seed         {}", seeds[0]);
        let _ = writeln!(o, "dag_depth    {}", m.dag_depth);
        let _ = writeln!(o, "setup_ms     {setup}");
        let _ = writeln!(o, "dio_count    {}", m.dio_count);
        let _ = writeln!(o, "dao_count    {}", m.dao_count);
        let _ = writeln!(o, "retransmits  {}", m.retransmissions);
        let _ = writeln!(o, "addressed    {}/{}", m.addressed, m.n.saturating_sub(1));
        let _ = writeln!(o, "addr_rate    {:.6}", m.addr_rate);
        let _ = writeln!(o, "up_rate      {:.6}", m.up_rate);
        let _ = writeln!(o, "down_rate    {:.6}", m.down_rate);
        let _ = writeln!(o, "timed_out    {}", m.timed_out);
        if let Some(p) = &a.trace {
            write_file(p, &trace::render(&out.trace))?;
        }
        if let Some(p) = &a.out {
            let rec = sweep::RunRecord { scenario: 0, seed: seeds[0], result: Ok(out.metrics.clone()) };
            write_file(p, &sweep::csv_string(&sweep::rows(&scenarios, &[rec])))?;
        }
        return Ok(());
    }
    if a.trace.is_some() || a.save_topology.is_some() {
        return Err(Failure::new(EXIT_USAGE, "--trace and --save-topology need a single scenario and seed"));
    }
    let records = sweep::run_all(&scenarios, &seeds);
    let _ = write!(io::stdout(), "{}", SummaryTable { scenarios: &scenarios, records: &records });
    if let Some(p) = &a.out {
        write_file(p, &sweep::csv_string(&sweep::rows(&scenarios, &records)))?;
    }
    first_error(&records)
}

fn first_error(records: &[sweep::RunRecord]) -> Result<(), Failure> {
    match records.iter().find_map(|r| r.result.as_ref().err().map(|e| (r.seed, e))) {
        Some((seed, e)) => {
            let f = Failure::from(e.clone());
            Err(Failure::new(f.code, format!("seed {seed}: {}", f.msg)))
        }
        None => Ok(()),
    }
}

fn cmd_sweep(a: &Common) -> Result<(), Failure> {
    let (scenarios, seeds) = a.scenarios()?;
    let records = sweep::run_all(&scenarios, &seeds);
    let csv = sweep::csv_string(&sweep::rows(&scenarios, &records));
    match &a.out {
        Some(p) => {
            write_file(p, &csv)?;
            let _ = write!(io::stdout(), "{}", SummaryTable { scenarios: &scenarios, records: &records });
        }
        None => {
            let _ = io::stdout().write_all(csv.as_bytes());
            let _ = write!(io::stderr(), "{}", SummaryTable { scenarios: &scenarios, records: &records });
        }
    }
    first_error(&records)
}

fn cmd_plan(a: &Common) -> Result<(), Failure> {
    let mode = a.mode.mhcl().ok_or_else(|| Failure::new(EXIT_USAGE, "plan needs --mode greedy or aggregate"))?;
    let cfg = a.base_config();
    cfg.validate().map_err(|e| Failure::new(EXIT_USAGE, e))?;
    let topo = a.topology_spec()?.build(a.n, a.seed)?;
    if let Some(p) = &a.save_topology {
        write_file(p, &topo.to_text())?;
    }
    let tree = topo.bfs_parent_map().map_err(|e| Failure::new(EXIT_USAGE, e))?;
    let plan = oracle_plan(&tree, cfg.root_range(), mode, cfg.reserve).map_err(|e| Failure::new(EXIT_SIM, e))?;
    let mut o = io::stdout().lock();
    for (id, (own, range)) in &plan {
        let parent = tree.parent_of(*id).map(|p| p.to_string()).unwrap_or_else(|| "-".into());
        let (id_s, own_s) = (id.to_string(), own.to_string());
        let _ = writeln!(
            o,
            "node {id_s:>5}  parent {parent:>5}  depth {:>3}  addr {own_s:>5}  range {range}",
            tree.depth(*id)
        );
    }
    Ok(())
}

fn cmd_validate(a: &Common) -> Result<(), Failure> {
    let (scenarios, seeds) = a.scenarios()?;
    let reports = mhcl_sim::validate::validate_all(&scenarios, &seeds);
    let mut violations = 0;
    for (id, seed, r) in &reports {
        match r {
            Ok(v) if v.is_empty() => {
                let _ = writeln!(io::stdout(), "ok    {id} seed {seed}");
            }
            Ok(v) => {
                violations += v.len();
                for x in v {
                    let _ = writeln!(io::stdout(), "FAIL  {x}");
                }
            }
            Err(e) => {
                violations += 1;
                let _ = writeln!(io::stdout(), "FAIL  {id} seed {seed}: {e}");
            }
        }
    }
    if violations > 0 {
        return Err(Failure::new(EXIT_INVALID, format!("{violations} invariant violation(s)")));
    }
    let _ = writeln!(io::stdout(), "{} run(s), all invariants hold", reports.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Plan(a) => cmd_plan(a),
        Cmd::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("mhcl: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
