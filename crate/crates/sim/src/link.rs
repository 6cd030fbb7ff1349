//! Link delay and transient loss.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    None,
    /// Nobody receives the transmission.
    Tx,
    /// Only the addressed receiver misses it.
    Rx,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailureKind::None => "none",
            FailureKind::Tx => "tx",
            FailureKind::Rx => "rx",
        })
    }
}

impl FromStr for FailureKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(FailureKind::None),
            "tx" => Ok(FailureKind::Tx),
            "rx" => Ok(FailureKind::Rx),
            other => Err(format!("unknown failure kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureModel {
    pub kind: FailureKind,
    pub rate: f64,
    /// Extra per-receiver loss standing in for collisions; 0 by default.
    #[serde(default)]
    pub collision_rate: f64,
}

impl FailureModel {
    pub const NONE: FailureModel = FailureModel { kind: FailureKind::None, rate: 0.0, collision_rate: 0.0 };

    pub fn new(kind: FailureKind, rate: f64) -> Self {
        FailureModel { kind, rate, collision_rate: 0.0 }
    }

    pub fn is_lossless(&self) -> bool {
        (self.kind == FailureKind::None || self.rate == 0.0) && self.collision_rate == 0.0
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.rate) && (0.0..=1.0).contains(&self.collision_rate)
    }

    /// Short label such as `tx10` or `none`.
    pub fn label(&self) -> String {
        match self.kind {
            FailureKind::None => "none".to_string(),
            k => format!("{k}{}", (self.rate * 100.0).round() as u32),
        }
    }
}

impl Default for FailureModel {
    fn default() -> Self {
        FailureModel::NONE
    }
}

/// Per-transmission loss decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossOutcome {
    DeliverAll,
    DropAll,
    DropDestOnly,
}

/// Draws the loss outcome of one transmission under `model`.
pub fn sample_loss<R: Rng + ?Sized>(model: &FailureModel, rng: &mut R) -> LossOutcome {
    match model.kind {
        FailureKind::None => LossOutcome::DeliverAll,
        FailureKind::Tx if rng.random_bool(model.rate.clamp(0.0, 1.0)) => LossOutcome::DropAll,
        FailureKind::Rx if rng.random_bool(model.rate.clamp(0.0, 1.0)) => LossOutcome::DropDestOnly,
        _ => LossOutcome::DeliverAll,
    }
}

/// Constant delay plus uniform integer jitter, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkDelay {
    pub base_ms: u64,
    pub jitter_ms: u64,
}

impl Default for LinkDelay {
    fn default() -> Self {
        LinkDelay { base_ms: 5, jitter_ms: 2 }
    }
}

impl LinkDelay {
    /// Uniform in `[base - jitter, base + jitter]`, floored at 0.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.jitter_ms == 0 {
            return self.base_ms;
        }
        let lo = self.base_ms.saturating_sub(self.jitter_ms);
        rng.random_range(lo..=self.base_ms + self.jitter_ms)
    }
}
