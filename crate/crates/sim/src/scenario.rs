//! TOML scenario files: simulation settings plus sweep axes.
//!
//! ```toml
//! name = "example"
//!
//! [sim]                      # every key optional; defaults shown
//! reserve = "1/16"
//! addr_width = 16
//! start_jitter_ms = 1000
//!
//! [sim.stabilization]
//! sp_child = 2
//!
//! [sweep]
//! topologies = ["grid"]      # "grid", "uniform" or "file:<path>"
//! sizes = [9, 25]
//! modes = ["greedy", "aggregate"]
//! failures = ["none", "tx10"]
//! seeds = { first = 1, count = 10 }   # or an explicit list
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use mhcl_core::{ReserveFraction, StabilizationParams};
use serde::Deserialize;

use crate::link::{FailureKind, FailureModel, LinkDelay};
use crate::simcore::{ProtocolMode, SimConfig, TablePolicy};
use crate::sweep::{Scenario, TopologySpec};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    #[serde(default)]
    pub sim: SimSection,
    pub sweep: SweepSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub reserve: Option<String>,
    pub addr_width: Option<u8>,
    pub start_jitter_ms: Option<u64>,
    pub link_delay_ms: Option<u64>,
    pub link_jitter_ms: Option<u64>,
    pub max_retransmissions: Option<u8>,
    pub app_start_ms: Option<u64>,
    pub app_spread_ms: Option<u64>,
    pub count_window_ms: Option<u64>,
    pub horizon_ms: Option<u64>,
    pub collision_rate: Option<f64>,
    pub baseline_capacity: Option<usize>,
    pub baseline_policy: Option<TablePolicy>,
    pub baseline_refresh_ms: Option<u64>,
    #[serde(default)]
    pub stabilization: StabilizationSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilizationSection {
    pub sp_child: Option<u32>,
    pub sp_parent: Option<u32>,
    pub sp_leaf: Option<u32>,
    pub sp_root: Option<u32>,
    pub dio_min_exp: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "default_topologies")]
    pub topologies: Vec<String>,
    #[serde(default)]
    pub sizes: Vec<usize>,
    pub modes: Vec<ProtocolMode>,
    #[serde(default = "default_failures")]
    pub failures: Vec<String>,
    pub seeds: Seeds,
}

fn default_topologies() -> Vec<String> {
    vec!["grid".into()]
}

fn default_failures() -> Vec<String> {
    vec!["none".into()]
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    List(Vec<u64>),
    Range { first: u64, count: u64 },
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::List(vec![0])
    }
}

impl Seeds {
    pub fn to_vec(&self) -> Vec<u64> {
        match self {
            Seeds::List(v) => v.clone(),
            Seeds::Range { first, count } => (*first..first + count).collect(),
        }
    }
}

/// Parses `none`, `tx10`, `rx5` and the like (rate in percent).
pub fn parse_failure_label(s: &str) -> Result<FailureModel, String> {
    let s = s.trim();
    if s == "none" {
        return Ok(FailureModel::NONE);
    }
    let split = s.find(|c: char| c.is_ascii_digit() || c == '.').ok_or_else(|| format!("bad failure label {s:?}"))?;
    let kind = FailureKind::from_str(&s[..split])?;
    let pct: f64 = s[split..].parse().map_err(|_| format!("bad failure rate in {s:?}"))?;
    let model = FailureModel::new(kind, pct / 100.0);
    if !model.is_valid() {
        return Err(format!("failure rate out of range in {s:?}"));
    }
    Ok(model)
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text).map_err(|e| match e {
            ScenarioError::Parse(m) => ScenarioError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Applies the `[sim]` overrides on top of `base`.
    pub fn sim_config(&self, base: &SimConfig) -> Result<SimConfig, ScenarioError> {
        let s = &self.sim;
        let mut c = base.clone();
        if let Some(r) = &s.reserve {
            c.reserve =
                ReserveFraction::from_str(r).map_err(|e| ScenarioError::Invalid(format!("sim.reserve: {e}")))?;
        }
        macro_rules! set {
            ($($field:ident => $dst:expr),* $(,)?) => { $( if let Some(v) = s.$field { $dst = v; } )* };
        }
        set! {
            addr_width => c.addr_width,
            start_jitter_ms => c.start_jitter_ms,
            max_retransmissions => c.max_retransmissions,
            app_start_ms => c.app_start_ms,
            app_spread_ms => c.app_spread_ms,
            count_window_ms => c.count_window_ms,
            horizon_ms => c.horizon_ms,
            collision_rate => c.failure.collision_rate,
            baseline_capacity => c.baseline_capacity,
            baseline_policy => c.baseline_policy,
            baseline_refresh_ms => c.baseline_refresh_ms,
        }
        c.link = LinkDelay {
            base_ms: s.link_delay_ms.unwrap_or(c.link.base_ms),
            jitter_ms: s.link_jitter_ms.unwrap_or(c.link.jitter_ms),
        };
        let st = &s.stabilization;
        let p = c.params;
        c.params = StabilizationParams {
            sp_child: st.sp_child.unwrap_or(p.sp_child),
            sp_parent: st.sp_parent.unwrap_or(p.sp_parent),
            sp_leaf: st.sp_leaf.unwrap_or(p.sp_leaf),
            sp_root: st.sp_root.unwrap_or(p.sp_root),
            dio_min_exp: st.dio_min_exp.unwrap_or(p.dio_min_exp),
        };
        c.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(c)
    }

    /// Expands the sweep axes in file order: topology, size, mode, failure.
    /// File topologies are resolved against `base_dir`.
    pub fn scenarios(&self, base: &SimConfig, base_dir: &Path) -> Result<Vec<Scenario>, ScenarioError> {
        let cfg = self.sim_config(base)?;
        let w = &self.sweep;
        if w.modes.is_empty() {
            return Err(ScenarioError::Invalid("sweep.modes is empty".into()));
        }
        let failures = w
            .failures
            .iter()
            .map(|f| {
                parse_failure_label(f).map(|mut m| {
                    m.collision_rate = cfg.failure.collision_rate;
                    m
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ScenarioError::Invalid(format!("sweep.failures: {e}")))?;
        let mut out = Vec::new();
        for t in &w.topologies {
            let (spec, sizes) = if let Some(p) = t.strip_prefix("file:") {
                let path: PathBuf = base_dir.join(p);
                let text = std::fs::read_to_string(&path)
                    .map_err(|source| ScenarioError::Io { path: path.display().to_string(), source })?;
                let topo = crate::topology::Topology::from_text(&text)
                    .map_err(|e| ScenarioError::Invalid(format!("{}: {e}", path.display())))?;
                (TopologySpec::File(path), vec![topo.len()])
            } else {
                let spec = match t.as_str() {
                    "grid" => TopologySpec::Grid,
                    "uniform" => TopologySpec::Uniform,
                    other => return Err(ScenarioError::Invalid(format!("unknown topology {other:?}"))),
                };
                if w.sizes.is_empty() {
                    return Err(ScenarioError::Invalid("sweep.sizes is empty".into()));
                }
                (spec, w.sizes.clone())
            };
            for &n in &sizes {
                for &mode in &w.modes {
                    for &failure in &failures {
                        out.push(Scenario::new(spec.clone(), n, mode, failure, &cfg));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.sweep.seeds.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
name = "t"
[sim]
reserve = "6.25%"
start_jitter_ms = 0
[sim.stabilization]
sp_root = 4
[sweep]
sizes = [9, 25]
modes = ["greedy", "baseline"]
failures = ["none", "rx5"]
seeds = { first = 3, count = 2 }
"#;

    #[test]
    fn expands_axes_in_order() {
        let f = ScenarioFile::parse(SMALL).unwrap();
        let sc = f.scenarios(&SimConfig::default(), Path::new(".")).unwrap();
        let ids: Vec<String> = sc.iter().map(|s| s.id()).collect();
        assert_eq!(
            ids,
            [
                "grid-n9-greedy-none",
                "grid-n9-greedy-rx5",
                "grid-n9-baseline-none",
                "grid-n9-baseline-rx5",
                "grid-n25-greedy-none",
                "grid-n25-greedy-rx5",
                "grid-n25-baseline-none",
                "grid-n25-baseline-rx5",
            ]
        );
        assert_eq!(f.seeds(), [3, 4]);
        let c = &sc[0].config;
        assert_eq!(c.reserve, ReserveFraction::DEFAULT);
        assert_eq!(c.start_jitter_ms, 0);
        assert_eq!(c.params.sp_root, 4);
        assert_eq!(c.params.sp_child, 2);
    }

    #[test]
    fn unknown_keys_rejected_with_line() {
        let text = "[sweep]\nmodes = [\"greedy\"]\nseeds = [1]\nsizez = [9]\n";
        let err = ScenarioFile::parse(text).unwrap_err().to_string();
        assert!(err.contains("line 4"), "{err}");
        assert!(err.contains("sizez"), "{err}");
        let nested = "[sim]\nfoo = 1\n[sweep]\nmodes = [\"greedy\"]\nseeds = [1]\n";
        assert!(ScenarioFile::parse(nested).unwrap_err().to_string().contains("line 2"));
    }

    #[test]
    fn failure_labels() {
        assert_eq!(parse_failure_label("tx10").unwrap(), FailureModel::new(FailureKind::Tx, 0.1));
        assert_eq!(parse_failure_label("rx5").unwrap(), FailureModel::new(FailureKind::Rx, 0.05));
        assert_eq!(parse_failure_label("none").unwrap(), FailureModel::NONE);
        assert!(parse_failure_label("tx").is_err());
        assert!(parse_failure_label("zz5").is_err());
        assert!(parse_failure_label("tx150").is_err());
    }

    #[test]
    fn invalid_values_reported() {
        let text = "[sim]\naddr_width = 40\n[sweep]\nsizes=[9]\nmodes = [\"greedy\"]\nseeds = [1]\n";
        let f = ScenarioFile::parse(text).unwrap();
        assert!(matches!(f.scenarios(&SimConfig::default(), Path::new(".")), Err(ScenarioError::Invalid(_))));
    }
}
