use serde::{Deserialize, Serialize};

use crate::dd::{run_dd, DdConfig};
use crate::kkt::KktResidual;
use crate::pd::{run_pd, PdConfig};
use crate::sdd::{run_sdd, SddConfig};
use crate::spd::{run_spd, SpdConfig};
use crate::trajectory::Trajectory;

use super::{best_objective, check_convergence, Algorithm, AlgorithmParams, BestObjective, ConvergenceCriterion, ExampleError, ExampleParams, InitialPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub converged: bool,
    pub best: Option<BestObjective>,
    pub iterations: usize,
    pub final_kkt: Option<KktResidual>,
    pub trajectory: Trajectory,
}

/// Runs one algorithm from one starting point. Algorithm failures end up in the
/// trajectory and make the trial non-convergent; only setup errors are returned.
pub fn run_trial(
    params: &ExampleParams,
    algorithm: Algorithm,
    tuning: &AlgorithmParams,
    init: &InitialPoint,
    max_iters: usize,
    parallel: bool,
) -> Result<TrialOutcome, ExampleError> {
    let schedule = tuning.schedule()?;
    let mut trajectory = match algorithm {
        Algorithm::Pd => {
            let problem = params.pd_problem()?;
            let config = PdConfig { max_iters, parallel, ..PdConfig::new(schedule, tuning.tau) };
            run_pd(&problem, &init.y, &config).trajectory
        }
        Algorithm::Spd => {
            let problem = params.spd_problem()?;
            let builder = params.spd_builder(tuning)?;
            let config = SpdConfig { schedule, inner: tuning.inner()?, max_iters, parallel };
            run_spd(&problem, &builder, init.x.clone(), &init.y, &config).trajectory
        }
        Algorithm::Dd => {
            let problem = params.dd_problem()?;
            let config = DdConfig { max_iters, parallel, ..DdConfig::new(schedule, tuning.tau) };
            run_dd(&problem, &init.mu, &init.lambda, Some(&init.x), &config).trajectory
        }
        Algorithm::Sdd => {
            let problem = params.sdd_problem()?;
            let builder = params.sdd_builder(tuning)?;
            let config = SddConfig { schedule, inner: tuning.inner()?, max_iters, parallel };
            run_sdd(&problem, &builder, init.x.clone(), &init.mu, &init.lambda, &config).trajectory
        }
    };
    let criterion = ConvergenceCriterion::for_variant(params.variant);
    let converged = trajectory.failure.is_none() && check_convergence(&trajectory, &criterion).unwrap_or(false);
    trajectory.converged = Some(converged);
    Ok(TrialOutcome {
        converged,
        best: best_objective(&trajectory, params.variant),
        iterations: trajectory.iterations(),
        final_kkt: trajectory.final_kkt,
        trajectory,
    })
}
