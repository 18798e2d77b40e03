//! Successive dual decomposition.
//!
//! The outer loop builds a convex approximation of the coupling-constraint problem
//! at `x(k)`. The inner loop runs projected gradient ascent on the approximation's
//! dual, where every block subproblem has a unique minimizer. The outer update
//! smooths `x` towards the block solutions at the final inner duals.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::dd::FullDdNlp;
use crate::kkt::{fit_multipliers, kkt_residual, KktError, KktResidual};
use crate::model::{BlockVector, BoxSet, Matrix, ModelError, ProblemSDD, Vector};
use crate::sca::{smooth_update, ScaError, StepSchedule};
use crate::spd::InnerConfig;
use crate::trajectory::{inf_dist, Clock, IterationRecord, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SddError {
    #[error("surrogate specification is not usable: {0}")]
    SpecViolation(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScaError),
    #[error(transparent)]
    Kkt(#[from] KktError),
}

/// Strongly convex approximation of one block.
pub trait SddBlockApprox: Send + Sync {
    /// Unique minimizer of `F_i + μ̃ᵀG̃_i + λ̃ᵀA_i x` over the block's approximate
    /// local constraints and box. `a_t_lambda` is `A_iᵀλ̃`.
    fn solve(&self, mu: &[f64], a_t_lambda: &[f64]) -> Vec<f64>;
    /// `F_i(x)`.
    fn objective(&self, x: &[f64]) -> f64;
    /// `G̃_i(x)`; empty when the problem has no coupled inequalities.
    fn coupled_ineq(&self, x: &[f64]) -> Vec<f64>;
}

#[derive(Clone)]
pub struct SddApprox {
    pub blocks: Vec<Arc<dyn SddBlockApprox>>,
}

/// Builds the approximation anchored at `x`.
pub trait SddApproxBuilder: Send + Sync {
    fn build(&self, x: &BlockVector) -> Result<SddApprox, SddError>;
}

/// Proximal-Taylor approximation `F_i = ∇f_i(x(k))ᵀ(x − x(k)) + τ/2‖x − x(k)‖²` for
/// problems without coupled or local inequalities.
pub struct TaylorSdd<'a> {
    pub problem: &'a ProblemSDD,
    pub tau: f64,
}

struct TaylorBlock {
    set: BoxSet,
    anchor: Vec<f64>,
    grad: Vec<f64>,
    tau: f64,
}

impl SddBlockApprox for TaylorBlock {
    fn solve(&self, _mu: &[f64], a_t_lambda: &[f64]) -> Vec<f64> {
        let step: Vec<f64> = self
            .anchor
            .iter()
            .zip(&self.grad)
            .enumerate()
            .map(|(j, (a, g))| a - (g + a_t_lambda.get(j).copied().unwrap_or(0.0)) / self.tau)
            .collect();
        self.set.project(&step)
    }
    fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.anchor)
            .zip(&self.grad)
            .map(|((xi, ai), g)| g * (xi - ai) + 0.5 * self.tau * (xi - ai).powi(2))
            .sum()
    }
    fn coupled_ineq(&self, _x: &[f64]) -> Vec<f64> {
        Vec::new()
    }
}

impl SddApproxBuilder for TaylorSdd<'_> {
    fn build(&self, x: &BlockVector) -> Result<SddApprox, SddError> {
        build_sdd_approx(self.problem, x, self.tau)
    }
}

/// See [`TaylorSdd`].
pub fn build_sdd_approx(problem: &ProblemSDD, x: &BlockVector, tau: f64) -> Result<SddApprox, SddError> {
    if !(tau > 0.0) {
        return Err(SddError::SpecViolation("tau must be positive"));
    }
    let blocks = problem
        .blocks
        .iter()
        .zip(x.blocks())
        .map(|(b, xi)| {
            if b.coupled_ineq.is_some() || b.local_ineq.is_some() {
                return Err(SddError::SpecViolation("inequalities need a problem-specific majorant"));
            }
            Ok(Arc::new(TaylorBlock { set: b.set.clone(), anchor: xi.to_vec(), grad: b.objective.gradient(xi), tau })
                as Arc<dyn SddBlockApprox>)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SddApprox { blocks })
}

fn a_t_lambda(a: Option<&Matrix>, lambda: &[f64], dim: usize) -> Vec<f64> {
    match a {
        Some(a) if !lambda.is_empty() => (a.transpose() * Vector::from_column_slice(lambda)).as_slice().to_vec(),
        _ => vec![0.0; dim],
    }
}

/// Minimizer of block `i` of the approximation at `(μ̃, λ̃)`.
pub fn solve_subproblem_sdd(approx: &SddApprox, problem: &ProblemSDD, i: usize, mu: &[f64], lambda: &[f64]) -> Vec<f64> {
    let b = &problem.blocks[i];
    approx.blocks[i].solve(mu, &a_t_lambda(b.coupled_eq.as_ref(), lambda, b.set.dim()))
}

fn solve_all(approx: &SddApprox, problem: &ProblemSDD, mu: &[f64], lambda: &[f64], parallel: bool) -> BlockVector {
    let solve = |i: usize| solve_subproblem_sdd(approx, problem, i, mu, lambda);
    let xs: Vec<Vec<f64>> = if parallel {
        (0..approx.blocks.len()).into_par_iter().map(solve).collect()
    } else {
        (0..approx.blocks.len()).map(solve).collect()
    };
    BlockVector::new(xs)
}

/// Dual value `q = Σ (F_i + μ̃ᵀG̃_i + λ̃ᵀA_i x_i) + λ̃ᵀb` and gradients
/// `(Σ G̃_i, Σ A_i x_i + b)`, all in block order.
pub fn dual_value_and_gradient(
    approx: &SddApprox,
    problem: &ProblemSDD,
    x: &BlockVector,
    mu: &[f64],
    lambda: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    let mut grad_mu = vec![0.0; problem.n_coupled_ineq];
    let mut grad_lambda = problem.offset.as_slice().to_vec();
    let mut value = 0.0;
    for ((a, b), xi) in approx.blocks.iter().zip(&problem.blocks).zip(x.blocks()) {
        value += a.objective(xi);
        for (g, v) in grad_mu.iter_mut().zip(a.coupled_ineq(xi)) {
            *g += v;
        }
        if let Some(m) = &b.coupled_eq {
            for (g, v) in grad_lambda.iter_mut().zip((m * Vector::from_column_slice(xi)).iter()) {
                *g += v;
            }
        }
    }
    value += mu.iter().zip(&grad_mu).map(|(m, g)| m * g).sum::<f64>();
    value += lambda.iter().zip(&grad_lambda).map(|(l, g)| l * g).sum::<f64>();
    (value, grad_mu, grad_lambda)
}

#[derive(Debug, Clone)]
pub struct InnerDualResult {
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Block solutions at the final duals.
    pub x: BlockVector,
    /// Dual value after each ascent step, starting with the initial duals.
    pub trace: Vec<f64>,
    pub steps: usize,
}

/// Projected gradient ascent on the dual of the approximation.
pub fn inner_dual_ascent(
    approx: &SddApprox,
    problem: &ProblemSDD,
    mu0: &[f64],
    lambda0: &[f64],
    config: &InnerConfig,
    parallel: bool,
) -> InnerDualResult {
    let mut mu: Vec<f64> = mu0.iter().map(|m| m.max(0.0)).collect();
    let mut lambda = lambda0.to_vec();
    let mut x = solve_all(approx, problem, &mu, &lambda, parallel);
    let (q0, mut gm, mut gl) = dual_value_and_gradient(approx, problem, &x, &mu, &lambda);
    let mut trace = vec![q0];
    let mut steps = 0;
    for gamma in config.schedule.steps().take(config.max_steps) {
        mu = mu.iter().zip(&gm).map(|(m, g)| (m + gamma * g).max(0.0)).collect();
        lambda = lambda.iter().zip(&gl).map(|(l, g)| l + gamma * g).collect();
        x = solve_all(approx, problem, &mu, &lambda, parallel);
        let (q, m2, l2) = dual_value_and_gradient(approx, problem, &x, &mu, &lambda);
        gm = m2;
        gl = l2;
        let prev = *trace.last().unwrap();
        trace.push(q);
        steps += 1;
        if (q - prev).abs() <= config.sigma * prev.abs() {
            break;
        }
    }
    InnerDualResult { mu, lambda, x, trace, steps }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SddConfig {
    pub schedule: StepSchedule,
    pub inner: InnerConfig,
    pub max_iters: usize,
    pub parallel: bool,
}

#[derive(Debug, Clone)]
pub struct SddState {
    pub k: usize,
    pub x: BlockVector,
    /// Final inner duals of the last outer iteration (warm start for the next).
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub trajectory: Trajectory,
    clock: Clock,
}

fn record(problem: &ProblemSDD, state: &SddState, step: f64, displacement: f64) -> Result<IterationRecord, SddError> {
    Ok(IterationRecord {
        k: state.k,
        objective: problem.objective(&state.x)?,
        metrics: problem.violation_metrics(&state.x)?,
        step,
        displacement,
        elapsed_s: state.clock.elapsed(),
    })
}

pub fn sdd_init(problem: &ProblemSDD, x0: BlockVector, mu0: &[f64], lambda0: &[f64], config: &SddConfig) -> Result<SddState, SddError> {
    config.schedule.validate()?;
    config.inner.schedule.validate()?;
    crate::model::check_dim("coupled inequality duals", problem.n_coupled_ineq, mu0.len())?;
    crate::model::check_dim("coupled equality duals", problem.n_coupled_eq(), lambda0.len())?;
    let mut state = SddState {
        k: 0,
        x: x0,
        mu: mu0.iter().map(|m| m.max(0.0)).collect(),
        lambda: lambda0.to_vec(),
        trajectory: Trajectory::default(),
        clock: Clock::start(),
    };
    let rec = record(problem, &state, 0.0, 0.0)?;
    state.trajectory.records.push(rec);
    Ok(state)
}

/// One outer iteration: approximate at `x(k)`, warm-started dual ascent, smoothing.
pub fn sdd_iterate(
    mut state: SddState,
    problem: &ProblemSDD,
    builder: &dyn SddApproxBuilder,
    config: &SddConfig,
) -> Result<SddState, SddError> {
    let approx = builder.build(&state.x)?;
    let inner = inner_dual_ascent(&approx, problem, &state.mu, &state.lambda, &config.inner, config.parallel);
    let gamma = config.schedule.outer_step(state.k);
    let x = BlockVector::new(
        state.x.blocks().iter().zip(inner.x.blocks()).map(|(a, b)| smooth_update(a, b, gamma)).collect(),
    );
    let displacement = inf_dist(&x.flatten(), &state.x.flatten());
    state.x = x;
    state.mu = inner.mu;
    state.lambda = inner.lambda;
    state.k += 1;
    let rec = record(problem, &state, gamma, displacement)?;
    state.trajectory.records.push(rec);
    Ok(state)
}

/// Full-problem KKT residual at `x` with best-fit multipliers.
pub fn point_residual(problem: &ProblemSDD, x: &BlockVector, band: f64) -> Result<KktResidual, SddError> {
    let dd = problem.to_dd()?;
    let nlp = FullDdNlp::new(&dd);
    let v = x.flatten();
    Ok(kkt_residual(&nlp, &v, &fit_multipliers(&nlp, &v, band))?)
}

#[derive(Debug, Clone)]
pub struct SddRun {
    pub state: Option<SddState>,
    pub trajectory: Trajectory,
}

pub fn run_sdd(
    problem: &ProblemSDD,
    builder: &dyn SddApproxBuilder,
    x0: BlockVector,
    mu0: &[f64],
    lambda0: &[f64],
    config: &SddConfig,
) -> SddRun {
    let mut state = match sdd_init(problem, x0, mu0, lambda0, config) {
        Ok(s) => s,
        Err(e) => {
            return SddRun { state: None, trajectory: Trajectory { failure: Some(e.to_string()), ..Default::default() } }
        }
    };
    for _ in 0..config.max_iters {
        let snapshot = state.clone();
        match sdd_iterate(state, problem, builder, config) {
            Ok(s) => state = s,
            Err(e) => {
                let mut trajectory = snapshot.trajectory.clone();
                trajectory.failure = Some(e.to_string());
                return SddRun { state: Some(snapshot), trajectory };
            }
        }
    }
    let mut trajectory = state.trajectory.clone();
    trajectory.final_kkt = point_residual(problem, &state.x, 1e-6).ok();
    SddRun { state: Some(state), trajectory }
}

/// `Σ F_i(x_i)`.
pub fn approx_objective(approx: &SddApprox, x: &BlockVector) -> f64 {
    approx.blocks.iter().zip(x.blocks()).map(|(b, xi)| b.objective(xi)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnOracle, SddBlock};
    use crate::sca::InnerStepSchedule;

    fn sum_to_zero() -> ProblemSDD {
        // min Σ (x_i - t_i)² s.t. Σ x_i = 0 on [-1, 1]
        let blocks = [0.4, 0.2]
            .into_iter()
            .map(|t| SddBlock {
                set: BoxSet::uniform(1, -1.0, 1.0).unwrap(),
                objective: FnOracle::new(1, move |x| (x[0] - t).powi(2), move |x| vec![2.0 * (x[0] - t)]).shared(),
                coupled_ineq: None,
                coupled_eq: Some(Matrix::from_element(1, 1, 1.0)),
                local_ineq: None,
            })
            .collect();
        ProblemSDD::new(0, Vector::zeros(1), blocks).unwrap()
    }

    #[test]
    fn satisfied_coupling_leaves_duals_unchanged() {
        let p = sum_to_zero();
        let x = BlockVector::new(vec![vec![0.1], vec![-0.1]]);
        let approx = build_sdd_approx(&p, &x, 1e6).unwrap();
        let cfg = InnerConfig { schedule: InnerStepSchedule::new(1.0, 0.5).unwrap(), sigma: 0.0, max_steps: 5 };
        let r = inner_dual_ascent(&approx, &p, &[], &[0.0], &cfg, false);
        assert!(r.lambda[0].abs() < 1e-5);
    }

    #[test]
    fn dual_ascent_balances_coupling() {
        let p = sum_to_zero();
        let x = BlockVector::new(vec![vec![0.0], vec![0.0]]);
        let approx = build_sdd_approx(&p, &x, 2.0).unwrap();
        let cfg = InnerConfig { schedule: InnerStepSchedule::new(0.5, 0.001).unwrap(), sigma: 0.0, max_steps: 200 };
        let r = inner_dual_ascent(&approx, &p, &[], &[0.0], &cfg, false);
        let total: f64 = r.x.blocks().iter().map(|b| b[0]).sum();
        assert!(total.abs() < 1e-6);
        for w in r.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-10);
        }
    }

    #[test]
    fn zero_duals_give_plain_surrogate_minimizer() {
        let p = sum_to_zero();
        let x = BlockVector::new(vec![vec![0.0], vec![0.0]]);
        let approx = build_sdd_approx(&p, &x, 4.0).unwrap();
        assert_eq!(solve_subproblem_sdd(&approx, &p, 0, &[], &[0.0]), vec![0.2]);
    }
}
