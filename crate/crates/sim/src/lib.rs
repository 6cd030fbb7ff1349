//! Simulation, experiment sweeps and tooling around `mhcl-core`.

pub mod baseline;
pub mod link;
pub mod queue;
pub mod scenario;
pub mod simcore;
pub mod sweep;
pub mod topology;
pub mod trace;
pub mod validate;

pub use link::{FailureKind, FailureModel, LinkDelay};
pub use simcore::{run, Metrics, ProtocolMode, RunOutput, SimConfig, SimError};
pub use topology::{make_grid, make_uniform, Topology};
