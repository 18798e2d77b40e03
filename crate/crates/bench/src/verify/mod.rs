//! Invariant suites behind `ncdecomp verify` and the acceptance test. Each suite
//! compares library output with an oracle computed independently here: finite
//! differences, dense grids or direct sampling.

use std::fmt;
use std::time::{Duration, Instant};

mod envelope;
mod oracle;
mod schedule;
mod surrogate;
mod transforms;
mod trials;

pub use envelope::{dual_envelope, primal_envelope};
pub use oracle::closed_form_oracle;
pub use schedule::schedules;
pub use surrogate::surrogates;
pub use transforms::transforms;
pub use trials::{determinism, proportions, stationarity};

/// One verified property.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    /// Reported checks are informational and never fail a suite.
    pub asserted: bool,
    pub detail: String,
}

impl Check {
    pub fn asserted(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, asserted: true, detail: detail.into() }
    }

    pub fn reported(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, asserted: false, detail: detail.into() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match (self.asserted, self.passed) {
            (true, true) => "ok",
            (true, false) => "FAIL",
            (false, true) => "info ok",
            (false, false) => "info",
        };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub name: &'static str,
    pub checks: Vec<Check>,
    pub elapsed: Duration,
}

impl Suite {
    pub fn timed(name: &'static str, body: impl FnOnce() -> Vec<Check>) -> Self {
        let start = Instant::now();
        let checks = body();
        Self { name, checks, elapsed: start.elapsed() }
    }

    pub fn asserted(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| c.asserted)
    }

    pub fn passed(&self) -> bool {
        self.asserted().all(|c| c.passed)
    }

    pub fn pass_count(&self) -> (usize, usize) {
        (self.asserted().filter(|c| c.passed).count(), self.asserted().count())
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (ok, total) = self.pass_count();
        writeln!(f, "{}: {ok}/{total} checks passed in {:.1} s", self.name, self.elapsed.as_secs_f64())?;
        for c in &self.checks {
            writeln!(f, "  {c}")?;
        }
        Ok(())
    }
}

/// `|a − b| / max(|b|, 1)`: relative for large values, absolute near zero.
pub fn scaled_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// The suites that need no full algorithm runs.
pub fn quick_suites() -> Vec<Suite> {
    vec![primal_envelope(), dual_envelope(), closed_form_oracle(), transforms(), surrogates(), schedules()]
}

/// Everything `ncdecomp verify` runs.
pub fn all_suites() -> Vec<Suite> {
    let mut s = quick_suites();
    s.extend([stationarity(), proportions(), determinism()]);
    s
}
