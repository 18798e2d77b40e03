use std::time::Instant;

use ncdecomp::examples::{Algorithm, AlgorithmParams, Variant};

use super::{Check, Suite};
use crate::experiment::{run_experiment, Experiment, RunReport};
use crate::report::render_csv;

pub const STATIONARITY_BLOCKS: usize = 50;
pub const KKT_TOL: f64 = 1e-3;
pub const PROPORTION_BLOCKS: usize = 100;
pub const PROPORTION_TARGET: f64 = 0.9;
pub const PROPORTION_BUDGET_S: f64 = 300.0;
const SEED: u64 = 2024;

pub fn applicable_pairs() -> Vec<(Algorithm, Variant)> {
    Algorithm::ALL
        .into_iter()
        .flat_map(|a| Variant::ALL.into_iter().filter(move |v| a.applies_to(*v)).map(move |v| (a, v)))
        .collect()
}

pub fn threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn experiment(a: Algorithm, v: Variant, blocks: usize, samples: usize, inits: usize, parallelism: usize) -> Option<Experiment> {
    Some(Experiment {
        variant: v,
        algorithm: a,
        params: AlgorithmParams::tuned(a, v)?,
        blocks,
        samples,
        inits,
        seed: SEED,
        max_iters: 10,
        parallelism,
    })
}

/// Convergent runs at desk scale must end near a KKT point of the full problem.
pub fn stationarity() -> Suite {
    Suite::timed("stationarity of convergent runs", || {
        applicable_pairs()
            .into_iter()
            .map(|(a, v)| {
                let name = format!("{a} {v}");
                let Some(e) = experiment(a, v, STATIONARITY_BLOCKS, 3, 5, threads()) else {
                    return Check::asserted(name, false, "no tuned parameters");
                };
                let rows = run_experiment(&e);
                let kkt: Vec<f64> =
                    rows.iter().filter(|r| r.converged).map(|r| r.final_kkt.as_ref().map_or(f64::INFINITY, |k| k.total())).collect();
                let good = kkt.iter().filter(|k| **k <= KKT_TOL).count();
                let worst = kkt.iter().copied().fold(0.0, f64::max);
                Check::asserted(
                    name,
                    !kkt.is_empty() && good == kkt.len(),
                    format!("{good}/{} convergent runs with KKT ≤ {KKT_TOL:.0e} ({} trials), worst {worst:.2e}", kkt.len(), rows.len()),
                )
            })
            .collect()
    })
}

/// Convergence proportion of 10 samples × 10 initial points at I = 100.
pub fn proportions() -> Suite {
    Suite::timed("convergence proportions", || {
        applicable_pairs()
            .into_iter()
            .map(|(a, v)| {
                let name = format!("{a} {v}");
                let Some(e) = experiment(a, v, PROPORTION_BLOCKS, 10, 10, threads()) else {
                    return Check::asserted(name, false, "no tuned parameters");
                };
                let start = Instant::now();
                let report = RunReport { rows: run_experiment(&e), timing: false };
                let secs = start.elapsed().as_secs_f64();
                let p = report.proportion().unwrap_or(0.0);
                Check::asserted(
                    name,
                    p >= PROPORTION_TARGET && secs <= PROPORTION_BUDGET_S,
                    format!("{}/{} convergent ({:.0}%) in {secs:.1} s", report.converged(), report.rows.len(), 100.0 * p),
                )
            })
            .collect()
    })
}

/// Rendered CSVs must match byte for byte across thread counts and repeated runs.
pub fn determinism() -> Suite {
    Suite::timed("determinism", || {
        applicable_pairs()
            .into_iter()
            .map(|(a, v)| {
                let name = format!("{a} {v}");
                let render = |parallelism: usize| {
                    experiment(a, v, 20, 2, 3, parallelism)
                        .and_then(|e| render_csv(&RunReport { rows: run_experiment(&e), timing: false }).ok())
                };
                let runs: Vec<_> = [1, 4, 8, 1].into_iter().map(render).collect();
                let identical = runs[0].is_some() && runs.iter().all(|r| *r == runs[0]);
                Check::asserted(name, identical, "parallelism 1, 4, 8 and a repeat".to_string())
            })
            .collect()
    })
}
