//! Runs every (sample, initial point) trial of a configuration.

use ncdecomp::examples::{run_trial, sample_example, sample_initial_points, Algorithm, AlgorithmParams, ExampleParams, Variant};
use ncdecomp::kkt::KktResidual;
use ncdecomp::rng::stream_key;
use rayon::prelude::*;
use rayon::ThreadPoolBuilder;

use crate::config::ValidConfig;

const SAMPLE_TAG: u64 = 0x5A;
const INIT_TAG: u64 = 0x1A;

/// One line of the report.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub sample: usize,
    pub init: usize,
    pub converged: bool,
    pub best_objective: Option<f64>,
    pub time_to_best_s: Option<f64>,
    pub iterations: usize,
    pub final_kkt: Option<KktResidual>,
    /// `(k, objective)` for every recorded iterate.
    pub objectives: Vec<(usize, f64)>,
    /// Set when the trial could not be started.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: Vec<TrialRow>,
    pub timing: bool,
}

impl RunReport {
    pub fn converged(&self) -> usize {
        self.rows.iter().filter(|r| r.converged).count()
    }

    pub fn proportion(&self) -> Option<f64> {
        (!self.rows.is_empty()).then(|| self.converged() as f64 / self.rows.len() as f64)
    }
}

/// Seed of instance `sample` under the experiment seed.
pub fn sample_seed(seed: u64, sample: usize) -> u64 {
    stream_key(seed, &[SAMPLE_TAG, sample as u64])
}

/// Seed of the initial points drawn for instance `sample`.
pub fn init_seed(seed: u64, sample: usize) -> u64 {
    stream_key(seed, &[INIT_TAG, sample as u64])
}

/// Plain description of an experiment, independent of output settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experiment {
    pub variant: Variant,
    pub algorithm: Algorithm,
    pub params: AlgorithmParams,
    pub blocks: usize,
    pub samples: usize,
    pub inits: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub parallelism: usize,
}

impl From<&ValidConfig> for Experiment {
    fn from(v: &ValidConfig) -> Self {
        let c = &v.config;
        Self {
            variant: v.variant,
            algorithm: c.algorithm,
            params: v.params,
            blocks: c.blocks,
            samples: c.samples,
            inits: c.inits,
            seed: c.seed,
            max_iters: c.max_iters,
            parallelism: c.parallelism,
        }
    }
}

fn trial(e: &Experiment, instance: &ExampleParams, sample: usize, init: usize, point: &ncdecomp::examples::InitialPoint) -> TrialRow {
    let mut row = TrialRow {
        sample,
        init,
        converged: false,
        best_objective: None,
        time_to_best_s: None,
        iterations: 0,
        final_kkt: None,
        objectives: Vec::new(),
        error: None,
    };
    match run_trial(instance, e.algorithm, &e.params, point, e.max_iters, e.parallelism > 1) {
        Ok(outcome) => {
            row.converged = outcome.converged;
            row.best_objective = outcome.best.map(|b| b.value);
            row.time_to_best_s = outcome.best.map(|b| b.elapsed_s);
            row.iterations = outcome.iterations;
            row.final_kkt = outcome.final_kkt;
            row.objectives = outcome.trajectory.records.iter().map(|r| (r.k, r.objective)).collect();
        }
        Err(err) => row.error = Some(err.to_string()),
    }
    row
}

/// Rows come back ordered by sample then init whatever the thread count.
pub fn run_experiment(e: &Experiment) -> Vec<TrialRow> {
    let instances: Vec<_> = (0..e.samples)
        .map(|s| {
            let instance = sample_example(e.variant, e.blocks, sample_seed(e.seed, s));
            let points = sample_initial_points(&instance, e.inits, init_seed(e.seed, s));
            (instance, points)
        })
        .collect();
    let jobs: Vec<(usize, usize)> = (0..e.samples).flat_map(|s| (0..e.inits).map(move |j| (s, j))).collect();
    let work = || {
        jobs.par_iter()
            .map(|&(s, j)| trial(e, &instances[s].0, s, j, &instances[s].1[j]))
            .collect()
    };
    match ThreadPoolBuilder::new().num_threads(e.parallelism).build() {
        Ok(pool) => pool.install(work),
        Err(_) => work(),
    }
}

pub fn run_config(config: &ValidConfig) -> RunReport {
    RunReport { rows: run_experiment(&Experiment::from(config)), timing: config.config.timing }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(parallelism: usize) -> Experiment {
        Experiment {
            variant: Variant::Ex4,
            algorithm: Algorithm::Dd,
            params: AlgorithmParams::tuned(Algorithm::Dd, Variant::Ex4).unwrap(),
            blocks: 8,
            samples: 2,
            inits: 2,
            seed: 3,
            max_iters: 10,
            parallelism,
        }
    }

    #[test]
    fn rows_are_ordered_and_complete() {
        let rows = run_experiment(&small(3));
        let order: Vec<_> = rows.iter().map(|r| (r.sample, r.init)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert!(rows.iter().all(|r| r.iterations == 10 && r.objectives.len() == 11));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let strip = |rows: Vec<TrialRow>| -> Vec<_> { rows.into_iter().map(|r| (r.converged, r.best_objective, r.objectives)).collect() };
        assert_eq!(strip(run_experiment(&small(1))), strip(run_experiment(&small(4))));
    }

    #[test]
    fn seeds_differ_per_sample() {
        assert_ne!(sample_seed(1, 0), sample_seed(1, 1));
        assert_ne!(sample_seed(1, 0), init_seed(1, 0));
    }
}
