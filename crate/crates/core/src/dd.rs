//! Dual decomposition for coupling-constraint problems.
//!
//! The coupling constraints are priced by `(μ̃, λ̃)`. Each iteration solves the
//! block partial-Lagrangian subproblems, uses the summed coupling values as the dual
//! gradient, maximizes a proximal model of the dual in closed form and smooths the
//! duals towards that maximizer.

use rayon::prelude::*;
use thiserror::Error;

use crate::kkt::{self, fit_multipliers, kkt_residual, KktError, KktResidual, MultiplierSet, Nlp};
use crate::local::{solve_local, LocalOptions};
use crate::model::{BlockVector, BoxSet, DdBlock, Matrix, ModelError, ProblemDD};
use crate::pd::select_candidate;
use crate::sca::{smooth_update, ScaError, StepSchedule};
use crate::trajectory::{inf_dist, Clock, IterationRecord, Trajectory};

/// Dual norm beyond which a run is abandoned as unbounded.
pub const DUAL_GUARD: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DdError {
    #[error("block {block} has no stationary point")]
    NoStationaryPoint { block: usize },
    #[error("multiplier recovery failed for block {block}: {source}")]
    Multipliers { block: usize, source: KktError },
    #[error("dual variables diverged (norm {norm:e})")]
    DualRunaway { norm: f64 },
    #[error("dual proximal weight must be positive")]
    InvalidTau,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScaError),
}

/// Problem-specific stationary points of a block's partial Lagrangian.
pub trait DdBlockSolver: Send + Sync {
    /// All candidate stationary points at the given duals.
    fn candidates(&self, mu: &[f64], lambda: &[f64]) -> Vec<Vec<f64>>;

    /// The stationary point on the branch containing `warm`, when the solver can track one.
    fn tracked(&self, _mu: &[f64], _lambda: &[f64], _warm: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

/// `f_i + μ̃ᵀg̃_i + λ̃ᵀh̃_i` over `{g_i ≤ 0} ∩ X_i` as an [`Nlp`].
pub struct LagrangianSubproblem<'a> {
    pub block: &'a DdBlock,
    pub mu: &'a [f64],
    pub lambda: &'a [f64],
}

impl Nlp for LagrangianSubproblem<'_> {
    fn dim(&self) -> usize {
        self.block.dim()
    }
    fn n_ineq(&self) -> usize {
        self.block.local_ineq.as_ref().map_or(0, |g| g.dim_out())
    }
    fn n_eq(&self) -> usize {
        0
    }
    fn objective(&self, x: &[f64]) -> f64 {
        partial_lagrangian(self.block, x, self.mu, self.lambda)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.block.objective.gradient(x);
        let mut add = |jt: Matrix, w: &[f64]| {
            for (c, wc) in w.iter().enumerate() {
                for (r, gr) in g.iter_mut().enumerate() {
                    *gr += jt[(r, c)] * wc;
                }
            }
        };
        if let Some(o) = &self.block.coupled_ineq {
            add(o.jacobian_t(x), self.mu);
        }
        if let Some(o) = &self.block.coupled_eq {
            add(o.jacobian_t(x), self.lambda);
        }
        g
    }
    fn ineq(&self, x: &[f64]) -> Vec<f64> {
        self.block.local_ineq.as_ref().map_or_else(Vec::new, |g| g.eval(x))
    }
    fn eq(&self, _x: &[f64]) -> Vec<f64> {
        Vec::new()
    }
    fn ineq_jacobian_t(&self, x: &[f64]) -> Matrix {
        self.block.local_ineq.as_ref().map_or_else(|| Matrix::zeros(self.dim(), 0), |g| g.jacobian_t(x))
    }
    fn eq_jacobian_t(&self, _x: &[f64]) -> Matrix {
        Matrix::zeros(self.dim(), 0)
    }
    fn bounds(&self) -> &BoxSet {
        &self.block.set
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn partial_lagrangian(block: &DdBlock, x: &[f64], mu: &[f64], lambda: &[f64]) -> f64 {
    let mut v = block.objective.value(x);
    if let Some(g) = &block.coupled_ineq {
        v += dot(mu, &g.eval(x));
    }
    if let Some(h) = &block.coupled_eq {
        v += dot(lambda, &h.eval(x));
    }
    v
}

/// Selected block stationary point with the multipliers of its local constraints.
#[derive(Debug, Clone, PartialEq)]
pub struct DdBlockSolution {
    pub x: Vec<f64>,
    pub local_multipliers: MultiplierSet,
    pub value: f64,
}

/// Stationary point of block `i` at `(μ̃, λ̃)`. With `warm` the solution on the
/// branch through `warm` is returned; otherwise the lowest-value candidate.
pub fn solve_subproblem_dd(
    problem: &ProblemDD,
    i: usize,
    mu: &[f64],
    lambda: &[f64],
    warm: Option<&[f64]>,
) -> Result<DdBlockSolution, DdError> {
    let block = &problem.blocks[i];
    let nlp = LagrangianSubproblem { block, mu, lambda };
    let candidates = match (&block.solver, warm) {
        (Some(s), Some(w)) => s.tracked(mu, lambda, w).map_or_else(|| s.candidates(mu, lambda), |x| vec![x]),
        (Some(s), None) => s.candidates(mu, lambda),
        (None, Some(w)) => {
            let sol = solve_local(&nlp, w, &LocalOptions::default());
            if sol.feasible {
                vec![sol.x]
            } else {
                vec![]
            }
        }
        (None, None) => {
            let set = &block.set;
            let mid: Vec<f64> = set
                .lower()
                .iter()
                .zip(set.upper())
                .map(|(&l, &u)| if l.is_finite() && u.is_finite() { 0.5 * (l + u) } else { 0.0 })
                .collect();
            let starts = [set.project(&mid), set.project(set.lower()), set.project(set.upper())];
            starts
                .iter()
                .map(|s| solve_local(&nlp, s, &LocalOptions::default()))
                .filter(|s| s.feasible)
                .map(|s| s.x)
                .collect()
        }
    };
    match select_candidate(&nlp, candidates) {
        None => Err(DdError::NoStationaryPoint { block: i }),
        Some(Ok(s)) => Ok(DdBlockSolution { x: s.x, local_multipliers: s.multipliers, value: s.value }),
        Some(Err(source)) => Err(DdError::Multipliers { block: i, source }),
    }
}

/// `(Σ g̃_i(x_i†), Σ h̃_i(x_i†))` summed in block order.
pub fn dual_gradients(problem: &ProblemDD, blocks: &[DdBlockSolution]) -> Result<(Vec<f64>, Vec<f64>), DdError> {
    let x = BlockVector::new(blocks.iter().map(|b| b.x.clone()).collect());
    Ok(problem.coupling_sums(&x)?)
}

/// Maximizer of the proximal dual model:
/// `μ̃* = [μ̃ + ∇_μ̃/τ_μ̃]₊`, `λ̃* = λ̃ + ∇_λ̃/τ_λ̃`.
pub fn closed_form_dual_update(
    mu: &[f64],
    lambda: &[f64],
    grad_mu: &[f64],
    grad_lambda: &[f64],
    tau_mu: f64,
    tau_lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let m = mu.iter().zip(grad_mu).map(|(m, g)| (m + g / tau_mu).max(0.0)).collect();
    let l = lambda.iter().zip(grad_lambda).map(|(l, g)| l + g / tau_lambda).collect();
    (m, l)
}

/// How a block's stationary point is chosen when several exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum BranchSelection {
    /// Lowest partial-Lagrangian value.
    Lowest,
    /// Continue the branch of the previous iterate's block point.
    Tracked,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DdConfig {
    pub schedule: StepSchedule,
    pub tau_mu: f64,
    pub tau_lambda: f64,
    pub selection: BranchSelection,
    pub max_iters: usize,
    pub parallel: bool,
}

impl DdConfig {
    pub fn new(schedule: StepSchedule, tau: f64) -> Self {
        Self { schedule, tau_mu: tau, tau_lambda: tau, selection: BranchSelection::Tracked, max_iters: 10, parallel: true }
    }
}

#[derive(Debug, Clone)]
pub struct DdState {
    pub k: usize,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub blocks: Vec<DdBlockSolution>,
    pub grad_mu: Vec<f64>,
    pub grad_lambda: Vec<f64>,
    pub trajectory: Trajectory,
    clock: Clock,
}

impl DdState {
    pub fn x(&self) -> BlockVector {
        BlockVector::new(self.blocks.iter().map(|b| b.x.clone()).collect())
    }
}

fn solve_all(
    problem: &ProblemDD,
    mu: &[f64],
    lambda: &[f64],
    warm: Option<&BlockVector>,
    parallel: bool,
) -> Result<Vec<DdBlockSolution>, DdError> {
    let solve = |i: usize| solve_subproblem_dd(problem, i, mu, lambda, warm.map(|w| w.block(i)));
    let results: Vec<Result<DdBlockSolution, DdError>> = if parallel {
        (0..problem.block_count()).into_par_iter().map(solve).collect()
    } else {
        (0..problem.block_count()).map(solve).collect()
    };
    results.into_iter().collect()
}

fn dual_norm(mu: &[f64], lambda: &[f64]) -> f64 {
    mu.iter().chain(lambda).map(|v| v * v).sum::<f64>().sqrt()
}

fn record(problem: &ProblemDD, state: &DdState, step: f64, displacement: f64) -> Result<IterationRecord, DdError> {
    let x = state.x();
    Ok(IterationRecord {
        k: state.k,
        objective: problem.objective(&x)?,
        metrics: problem.violation_metrics(&x)?,
        step,
        displacement,
        elapsed_s: state.clock.elapsed(),
    })
}

/// Solves the blocks at the initial duals. Under branch tracking `x0` seeds the branches.
pub fn dd_init(
    problem: &ProblemDD,
    mu0: &[f64],
    lambda0: &[f64],
    x0: Option<&BlockVector>,
    config: &DdConfig,
) -> Result<DdState, DdError> {
    config.schedule.validate()?;
    if !(config.tau_mu > 0.0 && config.tau_lambda > 0.0) {
        return Err(DdError::InvalidTau);
    }
    crate::model::check_dim("coupled inequality duals", problem.n_coupled_ineq, mu0.len())?;
    crate::model::check_dim("coupled equality duals", problem.n_coupled_eq, lambda0.len())?;
    let clock = Clock::start();
    let warm = match config.selection {
        BranchSelection::Tracked => x0,
        BranchSelection::Lowest => None,
    };
    let mu0: Vec<f64> = mu0.iter().map(|m| m.max(0.0)).collect();
    let blocks = solve_all(problem, &mu0, lambda0, warm, config.parallel)?;
    let (grad_mu, grad_lambda) = dual_gradients(problem, &blocks)?;
    let mut state = DdState {
        k: 0,
        mu: mu0,
        lambda: lambda0.to_vec(),
        blocks,
        grad_mu,
        grad_lambda,
        trajectory: Trajectory::default(),
        clock,
    };
    let rec = record(problem, &state, 0.0, 0.0)?;
    state.trajectory.records.push(rec);
    Ok(state)
}

/// One outer iteration; the displacement recorded is the dual displacement.
pub fn dd_iterate(mut state: DdState, problem: &ProblemDD, config: &DdConfig) -> Result<DdState, DdError> {
    let gamma = config.schedule.outer_step(state.k);
    let (mu_t, lambda_t) = closed_form_dual_update(
        &state.mu,
        &state.lambda,
        &state.grad_mu,
        &state.grad_lambda,
        config.tau_mu,
        config.tau_lambda,
    );
    let mu = smooth_update(&state.mu, &mu_t, gamma);
    let lambda = smooth_update(&state.lambda, &lambda_t, gamma);
    let norm = dual_norm(&mu, &lambda);
    if !(norm <= DUAL_GUARD) {
        return Err(DdError::DualRunaway { norm });
    }
    let prev = state.x();
    let warm = match config.selection {
        BranchSelection::Tracked => Some(&prev),
        BranchSelection::Lowest => None,
    };
    let blocks = solve_all(problem, &mu, &lambda, warm, config.parallel)?;
    let displacement = inf_dist(&mu, &state.mu).max(inf_dist(&lambda, &state.lambda));
    let (grad_mu, grad_lambda) = dual_gradients(problem, &blocks)?;
    state.mu = mu;
    state.lambda = lambda;
    state.blocks = blocks;
    state.grad_mu = grad_mu;
    state.grad_lambda = grad_lambda;
    state.k += 1;
    let rec = record(problem, &state, gamma, displacement)?;
    state.trajectory.records.push(rec);
    Ok(state)
}

/// The full problem over the stacked block variables.
///
/// Inequalities: the summed coupled ones, then each block's local ones.
/// Equalities: the summed coupled ones.
pub struct FullDdNlp<'a> {
    problem: &'a ProblemDD,
    offsets: Vec<usize>,
    bounds: BoxSet,
}

impl<'a> FullDdNlp<'a> {
    pub fn new(problem: &'a ProblemDD) -> Self {
        let mut offsets = vec![0];
        let mut bounds = BoxSet::unbounded(0);
        for b in &problem.blocks {
            offsets.push(offsets.last().unwrap() + b.dim());
            bounds = bounds.product(&b.set);
        }
        Self { problem, offsets, bounds }
    }

    pub fn split(&self, v: &[f64]) -> BlockVector {
        BlockVector::new(self.offsets.windows(2).map(|w| v[w[0]..w[1]].to_vec()).collect())
    }

    fn n_local(&self, i: usize) -> usize {
        self.problem.blocks[i].local_ineq.as_ref().map_or(0, |g| g.dim_out())
    }

    /// Full-problem multipliers from the duals and per-block local multipliers.
    pub fn assemble_multipliers(&self, mu: &[f64], lambda: &[f64], blocks: &[DdBlockSolution]) -> MultiplierSet {
        let mut m = MultiplierSet::zeros(0, 0, self.dim());
        m.ineq.extend_from_slice(mu);
        for b in blocks {
            m.ineq.extend_from_slice(&b.local_multipliers.ineq);
        }
        m.eq.extend_from_slice(lambda);
        m
    }
}

impl Nlp for FullDdNlp<'_> {
    fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    fn n_ineq(&self) -> usize {
        self.problem.n_coupled_ineq + (0..self.problem.block_count()).map(|i| self.n_local(i)).sum::<usize>()
    }
    fn n_eq(&self) -> usize {
        self.problem.n_coupled_eq
    }
    fn objective(&self, v: &[f64]) -> f64 {
        self.problem.objective(&self.split(v)).unwrap_or(f64::NAN)
    }
    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let x = self.split(v);
        self.problem.blocks.iter().zip(x.blocks()).flat_map(|(b, xi)| b.objective.gradient(xi)).collect()
    }
    fn ineq(&self, v: &[f64]) -> Vec<f64> {
        let x = self.split(v);
        let (mut out, _) = self.problem.coupling_sums(&x).unwrap_or_default();
        for (b, xi) in self.problem.blocks.iter().zip(x.blocks()) {
            if let Some(g) = &b.local_ineq {
                out.extend(g.eval(xi));
            }
        }
        out
    }
    fn eq(&self, v: &[f64]) -> Vec<f64> {
        self.problem.coupling_sums(&self.split(v)).map(|(_, h)| h).unwrap_or_default()
    }
    fn ineq_jacobian_t(&self, v: &[f64]) -> Matrix {
        let x = self.split(v);
        let rc = self.problem.n_coupled_ineq;
        let mut j = Matrix::zeros(self.dim(), self.n_ineq());
        let mut col = rc;
        for (i, (b, xi)) in self.problem.blocks.iter().zip(x.blocks()).enumerate() {
            let (o, d) = (self.offsets[i], b.dim());
            if let Some(g) = &b.coupled_ineq {
                j.view_mut((o, 0), (d, rc)).copy_from(&g.jacobian_t(xi));
            }
            if let Some(g) = &b.local_ineq {
                let r = g.dim_out();
                j.view_mut((o, col), (d, r)).copy_from(&g.jacobian_t(xi));
                col += r;
            }
        }
        j
    }
    fn eq_jacobian_t(&self, v: &[f64]) -> Matrix {
        let x = self.split(v);
        let m = self.problem.n_coupled_eq;
        let mut j = Matrix::zeros(self.dim(), m);
        for (i, (b, xi)) in self.problem.blocks.iter().zip(x.blocks()).enumerate() {
            if let Some(h) = &b.coupled_eq {
                j.view_mut((self.offsets[i], 0), (b.dim(), m)).copy_from(&h.jacobian_t(xi));
            }
        }
        j
    }
    fn bounds(&self) -> &BoxSet {
        &self.bounds
    }
}

/// Full-problem KKT residual at the current block points with the current duals.
pub fn assembled_residual(problem: &ProblemDD, state: &DdState) -> Result<KktResidual, KktError> {
    let nlp = FullDdNlp::new(problem);
    let v = state.x().flatten();
    kkt_residual(&nlp, &v, &nlp.assemble_multipliers(&state.mu, &state.lambda, &state.blocks))
}

/// Full-problem KKT residual at an arbitrary point with best-fit multipliers.
pub fn point_residual(problem: &ProblemDD, x: &BlockVector, band: f64) -> Result<KktResidual, KktError> {
    let nlp = FullDdNlp::new(problem);
    let v = x.flatten();
    kkt_residual(&nlp, &v, &fit_multipliers(&nlp, &v, band))
}

/// Local multipliers of a given block point, for callers that build a state by hand.
pub fn local_multipliers(problem: &ProblemDD, i: usize, x: &[f64], mu: &[f64], lambda: &[f64]) -> Result<MultiplierSet, KktError> {
    kkt::solve_kkt_conditions(&LagrangianSubproblem { block: &problem.blocks[i], mu, lambda }, x)
}

#[derive(Debug, Clone)]
pub struct DdRun {
    pub state: Option<DdState>,
    pub trajectory: Trajectory,
}

/// Runs `config.max_iters` iterations; failures end the run and are recorded in the trajectory.
pub fn run_dd(problem: &ProblemDD, mu0: &[f64], lambda0: &[f64], x0: Option<&BlockVector>, config: &DdConfig) -> DdRun {
    let mut state = match dd_init(problem, mu0, lambda0, x0, config) {
        Ok(s) => s,
        Err(e) => {
            return DdRun { state: None, trajectory: Trajectory { failure: Some(e.to_string()), ..Default::default() } }
        }
    };
    for _ in 0..config.max_iters {
        let snapshot = state.clone();
        match dd_iterate(state, problem, config) {
            Ok(s) => state = s,
            Err(e) => {
                let mut trajectory = snapshot.trajectory.clone();
                trajectory.failure = Some(e.to_string());
                return DdRun { state: Some(snapshot), trajectory };
            }
        }
    }
    let mut trajectory = state.trajectory.clone();
    trajectory.final_kkt = assembled_residual(problem, &state).ok();
    DdRun { state: Some(state), trajectory }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnOracle, FnVectorOracle};

    fn linear_block(slope: f64) -> DdBlock {
        DdBlock::new(BoxSet::uniform(1, -0.05, 0.05).unwrap(), FnOracle::new(1, move |x| slope * x[0], move |_| vec![slope]).shared())
    }

    #[test]
    fn lagrangian_values() {
        let b = linear_block(1.0);
        assert_eq!(partial_lagrangian(&b, &[0.02], &[], &[]), 0.02);
        let mut b = DdBlock::new(BoxSet::unbounded(1), FnOracle::zero(1).shared());
        b.coupled_ineq = Some(FnVectorOracle::scalar(1, |x| x[0], |_| vec![1.0]).shared());
        assert_eq!(partial_lagrangian(&b, &[3.0], &[2.0], &[]), 6.0);
    }

    #[test]
    fn linear_lagrangian_hits_lower_bound() {
        let p = ProblemDD::new(0, 0, vec![linear_block(1.0)]).unwrap();
        let s = solve_subproblem_dd(&p, 0, &[], &[], None).unwrap();
        assert!((s.x[0] + 0.05).abs() < 1e-9);
    }

    #[test]
    fn dual_update_closed_form() {
        let (m, l) = closed_form_dual_update(&[0.2], &[1.0], &[-3.0], &[2.0], 10.0, 10.0);
        assert_eq!(m, vec![0.0]);
        assert!((l[0] - 1.2).abs() < 1e-15);
        let (m, l) = closed_form_dual_update(&[0.2], &[1.0], &[0.0], &[0.0], 10.0, 10.0);
        assert_eq!((m, l), (vec![0.2], vec![1.0]));
    }

    #[test]
    fn gradients_are_zero_when_coupling_balances() {
        let blocks = [0.01, -0.01]
            .into_iter()
            .map(|target| {
                let mut b = DdBlock::new(
                    BoxSet::uniform(1, -0.05, 0.05).unwrap(),
                    FnOracle::new(1, move |x| (x[0] - target).powi(2), move |x| vec![2.0 * (x[0] - target)]).shared(),
                );
                b.coupled_eq = Some(FnVectorOracle::scalar(1, |x| x[0], |_| vec![1.0]).shared());
                b
            })
            .collect();
        let p = ProblemDD::new(0, 1, blocks).unwrap();
        let sols: Vec<_> = (0..2).map(|i| solve_subproblem_dd(&p, i, &[], &[0.0], None).unwrap()).collect();
        let (gm, gl) = dual_gradients(&p, &sols).unwrap();
        assert!(gm.is_empty());
        assert!(gl[0].abs() < 1e-8);
    }

    #[test]
    fn runaway_duals_abort() {
        let mut b = linear_block(1.0);
        b.coupled_eq = Some(FnVectorOracle::scalar(1, |_| 1.0, |_| vec![0.0]).shared());
        let p = ProblemDD::new(0, 1, vec![b]).unwrap();
        let cfg = DdConfig::new(StepSchedule::new(1.0, 1.0, 1.0, 1.0).unwrap(), 1e-7);
        let run = run_dd(&p, &[], &[0.0], None, &DdConfig { max_iters: 5, ..cfg });
        assert!(run.trajectory.failure.unwrap().contains("diverged"));
    }
}
