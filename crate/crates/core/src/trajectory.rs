//! Per-iteration records shared by the four algorithms.

use std::time::Instant;

use crate::kkt::KktResidual;
use crate::model::ViolationMetrics;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IterationRecord {
    pub k: usize,
    pub objective: f64,
    pub metrics: ViolationMetrics,
    /// Step size used to reach this iterate (`0` at `k = 0`).
    pub step: f64,
    /// Distance moved from the previous iterate, infinity norm.
    pub displacement: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Trajectory {
    pub records: Vec<IterationRecord>,
    pub final_kkt: Option<KktResidual>,
    pub converged: Option<bool>,
    pub failure: Option<String>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }
    /// Number of outer iterations performed (the initial point is record 0).
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }
}

/// Wall clock started when a run begins.
#[derive(Debug, Clone, Copy)]
pub struct Clock(Instant);

impl Clock {
    pub fn start() -> Self {
        Self(Instant::now())
    }
    pub fn elapsed(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

pub(crate) fn inf_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
