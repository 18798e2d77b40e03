//! Successive primal decomposition.
//!
//! The outer loop replaces the problem by a convex approximation anchored at the
//! current point `(x(k), y(k))`. The inner loop runs projected subgradient steps on
//! the approximation's master, re-solving the convex block subproblems at every
//! step. The outer update smooths `(x, y)` towards the inner result.

use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::kkt::{self, fit_multipliers, kkt_residual, KktError, KktResidual, MultiplierSet, Nlp};
use crate::local::{solve_local, LocalOptions};
use crate::model::{concat, BlockVector, BoxSet, Func, LinearCoupling, Matrix, ModelError, ProblemSPD, Vector};
use crate::pd::FullPdNlp;
use crate::sca::{smooth_update, InnerStepSchedule, ScaError, StepSchedule};
use crate::trajectory::{inf_dist, Clock, IterationRecord, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpdError {
    #[error("surrogate specification violates the required separability: {0}")]
    SpecViolation(&'static str),
    #[error("block {block} approximate subproblem is infeasible")]
    SubproblemInfeasible { block: usize },
    #[error("multiplier recovery failed for block {block}: {source}")]
    Multipliers { block: usize, source: KktError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScaError),
    #[error(transparent)]
    Kkt(#[from] KktError),
}

/// Optimal point of one convex block subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdBlockSolution {
    pub x: Vec<f64>,
    /// Inequalities: coupled then local. Equalities: the affine coupled ones.
    pub multipliers: MultiplierSet,
    /// `F_{i,x}(x)` at the solution.
    pub value: f64,
}

/// Convex approximation of one block, separable in `x_i` and `y` and linear in `y`
/// inside the coupled constraints.
pub trait SpdBlockApprox: Send + Sync {
    /// Unique minimizer of `F_{i,x}` subject to the approximate constraints at `y`.
    fn solve(&self, block: usize, y: &[f64]) -> Result<SpdBlockSolution, SpdError>;
    /// `∇F_{i,y}(y) + C_iᵀμ̃_i + A_{i,y}ᵀλ̃_i`.
    fn y_subgradient(&self, y: &[f64], solution: &SpdBlockSolution) -> Vec<f64>;
    /// `F_{i,x}(x) + F_{i,y}(y)`.
    fn value(&self, x: &[f64], y: &[f64]) -> f64;
}

/// Convex approximation of the whole problem at an anchor.
#[derive(Clone)]
pub struct SpdApprox {
    /// `F_0`; absent means zero.
    pub master: Option<Func>,
    pub coupling_set: BoxSet,
    pub blocks: Vec<Arc<dyn SpdBlockApprox>>,
}

impl SpdApprox {
    /// `F(x, y) = F_0(y) + Σ F_i(x_i, y)` summed in block order.
    pub fn value(&self, x: &BlockVector, y: &[f64]) -> f64 {
        let f0 = self.master.as_ref().map_or(0.0, |f| f.value(y));
        self.blocks.iter().zip(x.blocks()).fold(f0, |acc, (b, xi)| acc + b.value(xi, y))
    }
}

/// Builds the approximation anchored at `(x, y)`.
pub trait SpdApproxBuilder: Send + Sync {
    fn build(&self, x: &BlockVector, y: &[f64]) -> Result<SpdApprox, SpdError>;
}

/// Generic proximal-Taylor approximation for problems whose only coupled
/// constraints are the affine equalities.
///
/// `F_{i,x}` and `F_{i,y}` linearize `f_i` at the anchor and add `τ_x/2‖x − x(k)‖²`
/// and `τ_y/2‖y − y(k)‖²`; `f_0` is kept as is.
pub struct TaylorSpd<'a> {
    pub problem: &'a ProblemSPD,
    pub tau_x: f64,
    pub tau_y: f64,
}

struct TaylorBlock {
    set: BoxSet,
    anchor_x: Vec<f64>,
    anchor_y: Vec<f64>,
    grad_x: Vec<f64>,
    grad_y: Vec<f64>,
    tau_x: f64,
    tau_y: f64,
    coupling: Option<LinearCoupling>,
}

struct TaylorBlockNlp<'a> {
    block: &'a TaylorBlock,
    rhs: Option<Vector>,
}

impl Nlp for TaylorBlockNlp<'_> {
    fn dim(&self) -> usize {
        self.block.set.dim()
    }
    fn n_ineq(&self) -> usize {
        0
    }
    fn n_eq(&self) -> usize {
        self.block.coupling.as_ref().map_or(0, LinearCoupling::rows)
    }
    fn objective(&self, x: &[f64]) -> f64 {
        self.block.value_x(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let b = self.block;
        x.iter().zip(&b.anchor_x).zip(&b.grad_x).map(|((xi, ai), g)| g + b.tau_x * (xi - ai)).collect()
    }
    fn ineq(&self, _x: &[f64]) -> Vec<f64> {
        Vec::new()
    }
    fn eq(&self, x: &[f64]) -> Vec<f64> {
        match (&self.block.coupling, &self.rhs) {
            (Some(c), Some(r)) => (&c.a_x * Vector::from_column_slice(x) + r).as_slice().to_vec(),
            _ => Vec::new(),
        }
    }
    fn ineq_jacobian_t(&self, _x: &[f64]) -> Matrix {
        Matrix::zeros(self.dim(), 0)
    }
    fn eq_jacobian_t(&self, _x: &[f64]) -> Matrix {
        self.block.coupling.as_ref().map_or_else(|| Matrix::zeros(self.dim(), 0), |c| c.a_x.transpose())
    }
    fn bounds(&self) -> &BoxSet {
        &self.block.set
    }
}

impl TaylorBlock {
    fn value_x(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.anchor_x)
            .zip(&self.grad_x)
            .map(|((xi, ai), g)| g * (xi - ai) + 0.5 * self.tau_x * (xi - ai).powi(2))
            .sum()
    }
}

impl SpdBlockApprox for TaylorBlock {
    fn solve(&self, block: usize, y: &[f64]) -> Result<SpdBlockSolution, SpdError> {
        let rhs = self.coupling.as_ref().map(|c| &c.a_y * Vector::from_column_slice(y) + &c.b);
        let nlp = TaylorBlockNlp { block: self, rhs };
        let x = if nlp.n_eq() == 0 {
            let step: Vec<f64> =
                self.anchor_x.iter().zip(&self.grad_x).map(|(a, g)| a - g / self.tau_x).collect();
            self.set.project(&step)
        } else {
            let sol = solve_local(&nlp, &self.anchor_x, &LocalOptions::default());
            if !sol.feasible {
                return Err(SpdError::SubproblemInfeasible { block });
            }
            sol.x
        };
        let multipliers = kkt::solve_kkt_conditions(&nlp, &x)
            .or_else(|_| {
                let m = fit_multipliers(&nlp, &x, kkt::ACTIVE_TOL);
                let r = kkt_residual(&nlp, &x, &m)?;
                if r.stationarity <= 1e-6 {
                    Ok(m)
                } else {
                    Err(KktError::NoMultipliers { residual: r.stationarity })
                }
            })
            .map_err(|source| SpdError::Multipliers { block, source })?;
        Ok(SpdBlockSolution { value: self.value_x(&x), x, multipliers })
    }

    fn y_subgradient(&self, y: &[f64], solution: &SpdBlockSolution) -> Vec<f64> {
        let mut g: Vec<f64> =
            y.iter().zip(&self.anchor_y).zip(&self.grad_y).map(|((yi, ai), g)| g + self.tau_y * (yi - ai)).collect();
        if let Some(c) = &self.coupling {
            let extra = c.a_y.transpose() * Vector::from_column_slice(&solution.multipliers.eq);
            for (gi, e) in g.iter_mut().zip(extra.iter()) {
                *gi += e;
            }
        }
        g
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        self.value_x(x)
            + y.iter()
                .zip(&self.anchor_y)
                .zip(&self.grad_y)
                .map(|((yi, ai), g)| g * (yi - ai) + 0.5 * self.tau_y * (yi - ai).powi(2))
                .sum::<f64>()
    }
}

impl SpdApproxBuilder for TaylorSpd<'_> {
    fn build(&self, x: &BlockVector, y: &[f64]) -> Result<SpdApprox, SpdError> {
        build_spd_approx(self.problem, x, y, self.tau_x, self.tau_y)
    }
}

/// Proximal-Taylor approximation of `problem` at `(x, y)`; see [`TaylorSpd`].
pub fn build_spd_approx(problem: &ProblemSPD, x: &BlockVector, y: &[f64], tau_x: f64, tau_y: f64) -> Result<SpdApprox, SpdError> {
    if !(tau_x > 0.0) {
        return Err(SpdError::SpecViolation("tau_x must be positive for strong convexity in x"));
    }
    if problem.master_ineq.is_some() {
        return Err(SpdError::SpecViolation("master inequalities need a problem-specific majorant"));
    }
    if problem.master_objective.is_none() && !(tau_y > 0.0) {
        return Err(SpdError::SpecViolation("the master needs curvature: set tau_y > 0 or supply f_0"));
    }
    let blocks = problem
        .blocks
        .iter()
        .zip(x.blocks())
        .map(|(b, xi)| {
            if b.coupled_ineq.is_some() || b.local_ineq.is_some() {
                return Err(SpdError::SpecViolation("inequalities need a problem-specific majorant"));
            }
            let g = b.objective.gradient(&concat(xi, y));
            let n = xi.len();
            Ok(Arc::new(TaylorBlock {
                set: b.set.clone(),
                anchor_x: xi.to_vec(),
                anchor_y: y.to_vec(),
                grad_x: g[..n].to_vec(),
                grad_y: g[n..].to_vec(),
                tau_x,
                tau_y,
                coupling: b.coupled_eq.clone(),
            }) as Arc<dyn SpdBlockApprox>)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SpdApprox { master: problem.master_objective.clone(), coupling_set: problem.coupling_set.clone(), blocks })
}

/// Solves block `i` of the approximation at `y`.
pub fn solve_subproblem_spd(approx: &SpdApprox, i: usize, y: &[f64]) -> Result<SpdBlockSolution, SpdError> {
    approx.blocks[i].solve(i, y)
}

fn solve_all(approx: &SpdApprox, y: &[f64], parallel: bool) -> Result<Vec<SpdBlockSolution>, SpdError> {
    let solve = |i: usize| solve_subproblem_spd(approx, i, y);
    let results: Vec<_> = if parallel {
        (0..approx.blocks.len()).into_par_iter().map(solve).collect()
    } else {
        (0..approx.blocks.len()).map(solve).collect()
    };
    results.into_iter().collect()
}

/// `∇F_0(y) + Σ_i (∇F_{i,y} + C_iᵀμ̃_i + A_{i,y}ᵀλ̃_i)` in block order.
pub fn master_subgradient(approx: &SpdApprox, y: &[f64], blocks: &[SpdBlockSolution]) -> Vec<f64> {
    let mut g = approx.master.as_ref().map_or_else(|| vec![0.0; y.len()], |f| f.gradient(y));
    for (b, s) in approx.blocks.iter().zip(blocks) {
        for (gi, v) in g.iter_mut().zip(b.y_subgradient(y, s)) {
            *gi += v;
        }
    }
    g
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InnerConfig {
    pub schedule: InnerStepSchedule,
    /// Relative change of the inner objective that ends the loop.
    pub sigma: f64,
    /// Maximum number of inner steps.
    pub max_steps: usize,
}

/// Result of the inner loop on a fixed approximation.
#[derive(Debug, Clone)]
pub struct InnerResult {
    pub x: BlockVector,
    pub y: Vec<f64>,
    pub blocks: Vec<SpdBlockSolution>,
    /// Approximate objective after each inner step, starting with the initial `y`.
    pub trace: Vec<f64>,
    pub steps: usize,
}

/// Projected subgradient steps on the approximate master, starting at `y_init`.
pub fn inner_loop(approx: &SpdApprox, y_init: &[f64], config: &InnerConfig, parallel: bool) -> Result<InnerResult, SpdError> {
    let set = &approx.coupling_set;
    let mut y = set.project(y_init);
    let mut blocks = solve_all(approx, &y, parallel)?;
    let xs = |b: &[SpdBlockSolution]| BlockVector::new(b.iter().map(|s| s.x.clone()).collect());
    let mut trace = vec![approx.value(&xs(&blocks), &y)];
    let mut steps = 0;
    for gamma in config.schedule.steps().take(config.max_steps) {
        let g = master_subgradient(approx, &y, &blocks);
        let trial: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - gamma * b).collect();
        y = set.project(&trial);
        blocks = solve_all(approx, &y, parallel)?;
        let value = approx.value(&xs(&blocks), &y);
        let prev = *trace.last().unwrap();
        trace.push(value);
        steps += 1;
        if (value - prev).abs() <= config.sigma * prev.abs() {
            break;
        }
    }
    Ok(InnerResult { x: xs(&blocks), y, blocks, trace, steps })
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpdConfig {
    pub schedule: StepSchedule,
    pub inner: InnerConfig,
    pub max_iters: usize,
    pub parallel: bool,
}

#[derive(Debug, Clone)]
pub struct SpdState {
    pub k: usize,
    pub x: BlockVector,
    pub y: Vec<f64>,
    /// Multipliers of the last inner result, per block.
    pub multipliers: Vec<MultiplierSet>,
    pub trajectory: Trajectory,
    clock: Clock,
}

fn record(problem: &ProblemSPD, state: &SpdState, step: f64, displacement: f64) -> Result<IterationRecord, SpdError> {
    Ok(IterationRecord {
        k: state.k,
        objective: problem.objective(&state.x, &state.y)?,
        metrics: problem.violation_metrics(&state.x, &state.y)?,
        step,
        displacement,
        elapsed_s: state.clock.elapsed(),
    })
}

pub fn spd_init(problem: &ProblemSPD, x0: BlockVector, y0: &[f64], config: &SpdConfig) -> Result<SpdState, SpdError> {
    config.schedule.validate()?;
    config.inner.schedule.validate()?;
    let mut state = SpdState {
        k: 0,
        x: x0,
        y: y0.to_vec(),
        multipliers: Vec::new(),
        trajectory: Trajectory::default(),
        clock: Clock::start(),
    };
    let rec = record(problem, &state, 0.0, 0.0)?;
    state.trajectory.records.push(rec);
    Ok(state)
}

/// One outer iteration: approximate, run the inner loop from `y(k)`, smooth jointly.
pub fn spd_iterate(
    mut state: SpdState,
    problem: &ProblemSPD,
    builder: &dyn SpdApproxBuilder,
    config: &SpdConfig,
) -> Result<SpdState, SpdError> {
    let approx = builder.build(&state.x, &state.y)?;
    let inner = inner_loop(&approx, &state.y, &config.inner, config.parallel)?;
    let gamma = config.schedule.outer_step(state.k);
    let old = concat(&state.x.flatten(), &state.y);
    let x = BlockVector::new(
        state.x.blocks().iter().zip(inner.x.blocks()).map(|(a, b)| smooth_update(a, b, gamma)).collect(),
    );
    let y = smooth_update(&state.y, &inner.y, gamma);
    let displacement = inf_dist(&old, &concat(&x.flatten(), &y));
    state.x = x;
    state.y = y;
    state.multipliers = inner.blocks.into_iter().map(|b| b.multipliers).collect();
    state.k += 1;
    let rec = record(problem, &state, gamma, displacement)?;
    state.trajectory.records.push(rec);
    Ok(state)
}

/// Full-problem KKT residual at `(x, y)` with best-fit multipliers.
pub fn point_residual(problem: &ProblemSPD, x: &BlockVector, y: &[f64], band: f64) -> Result<KktResidual, SpdError> {
    let pd = problem.to_pd()?;
    let nlp = FullPdNlp::new(&pd);
    let v = nlp.pack(x, y);
    Ok(kkt_residual(&nlp, &v, &fit_multipliers(&nlp, &v, band))?)
}

#[derive(Debug, Clone)]
pub struct SpdRun {
    pub state: Option<SpdState>,
    pub trajectory: Trajectory,
}

pub fn run_spd(
    problem: &ProblemSPD,
    builder: &dyn SpdApproxBuilder,
    x0: BlockVector,
    y0: &[f64],
    config: &SpdConfig,
) -> SpdRun {
    let mut state = match spd_init(problem, x0, y0, config) {
        Ok(s) => s,
        Err(e) => {
            return SpdRun { state: None, trajectory: Trajectory { failure: Some(e.to_string()), ..Default::default() } }
        }
    };
    for _ in 0..config.max_iters {
        let snapshot = state.clone();
        match spd_iterate(state, problem, builder, config) {
            Ok(s) => state = s,
            Err(e) => {
                let mut trajectory = snapshot.trajectory.clone();
                trajectory.failure = Some(e.to_string());
                return SpdRun { state: Some(snapshot), trajectory };
            }
        }
    }
    let mut trajectory = state.trajectory.clone();
    trajectory.final_kkt = point_residual(problem, &state.x, &state.y, 1e-6).ok();
    SpdRun { state: Some(state), trajectory }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnOracle, SpdBlock};

    fn consensus_problem() -> ProblemSPD {
        // min (y - 0.3)² + Σ (x_i - t_i)² s.t. x_i - y = 0, x_i ∈ [-1, 1], y ∈ [0, 1]
        let blocks = [0.1, 0.5]
            .into_iter()
            .map(|t| SpdBlock {
                set: BoxSet::uniform(1, -1.0, 1.0).unwrap(),
                objective: FnOracle::new(2, move |z| (z[0] - t).powi(2), move |z| vec![2.0 * (z[0] - t), 0.0]).shared(),
                coupled_ineq: None,
                coupled_eq: Some(
                    LinearCoupling::new(
                        Matrix::from_element(1, 1, 1.0),
                        Matrix::from_element(1, 1, -1.0),
                        Vector::zeros(1),
                    )
                    .unwrap(),
                ),
                local_ineq: None,
            })
            .collect();
        let f0 = FnOracle::new(1, |y| (y[0] - 0.3).powi(2), |y| vec![2.0 * (y[0] - 0.3)]).shared();
        ProblemSPD::new(BoxSet::uniform(1, 0.0, 1.0).unwrap(), Some(f0), blocks).unwrap()
    }

    #[test]
    fn no_coupling_subgradient_is_master_gradient() {
        let f0 = FnOracle::new(1, |y| y[0] * y[0], |y| vec![2.0 * y[0]]).shared();
        let b = SpdBlock {
            set: BoxSet::uniform(1, -1.0, 1.0).unwrap(),
            objective: FnOracle::new(2, |z| z[0] * z[0], |z| vec![2.0 * z[0], 0.0]).shared(),
            coupled_ineq: None,
            coupled_eq: None,
            local_ineq: None,
        };
        let p = ProblemSPD::new(BoxSet::uniform(1, 0.0, 1.0).unwrap(), Some(f0), vec![b]).unwrap();
        let approx = build_spd_approx(&p, &BlockVector::new(vec![vec![0.4]]), &[0.5], 1.0, 0.0).unwrap();
        let sols = solve_all(&approx, &[0.5], false).unwrap();
        assert_eq!(master_subgradient(&approx, &[0.5], &sols), vec![1.0]);
    }

    #[test]
    fn linear_objective_surrogate_matches_at_anchor() {
        let b = SpdBlock {
            set: BoxSet::uniform(1, -1.0, 1.0).unwrap(),
            objective: FnOracle::new(2, |z| 2.0 * z[0] + z[1], |_| vec![2.0, 1.0]).shared(),
            coupled_ineq: None,
            coupled_eq: None,
            local_ineq: None,
        };
        let p = ProblemSPD::new(BoxSet::uniform(1, 0.0, 1.0).unwrap(), None, vec![b]).unwrap();
        let approx = build_spd_approx(&p, &BlockVector::new(vec![vec![0.2]]), &[0.5], 3.0, 1.0).unwrap();
        // the surrogate differs from f only by the proximal terms and a constant
        let at = |x: f64, y: f64| approx.blocks[0].value(&[x], &[y]);
        assert_eq!(at(0.2, 0.5), 0.0);
        assert!((at(0.7, 0.5) - (1.0 + 1.5 * 0.25)).abs() < 1e-14);
    }

    #[test]
    fn consensus_inner_loop_reaches_average() {
        let p = consensus_problem();
        let x = BlockVector::new(vec![vec![0.3], vec![0.3]]);
        let approx = build_spd_approx(&p, &x, &[0.3], 1.0, 0.0).unwrap();
        let cfg = InnerConfig { schedule: InnerStepSchedule::new(0.2, 0.01).unwrap(), sigma: 0.0, max_steps: 400 };
        let r = inner_loop(&approx, &[0.3], &cfg, false).unwrap();
        // blocks follow y exactly, so x_i = y throughout
        for b in r.x.blocks() {
            assert!((b[0] - r.y[0]).abs() < 1e-6);
        }
        assert!(r.steps <= 400);
    }

    #[test]
    fn inner_loop_respects_step_cap() {
        let p = consensus_problem();
        let x = BlockVector::new(vec![vec![0.9], vec![0.9]]);
        let approx = build_spd_approx(&p, &x, &[0.9], 1.0, 0.0).unwrap();
        let cfg = InnerConfig { schedule: InnerStepSchedule::new(1.0, 0.5).unwrap(), sigma: 0.0, max_steps: 10 };
        let r = inner_loop(&approx, &[0.9], &cfg, false).unwrap();
        assert!(r.steps <= 10 && r.trace.len() == r.steps + 1);
    }

    #[test]
    fn rejects_inequalities_without_majorant() {
        let mut p = consensus_problem();
        p.blocks[0].coupled_ineq = p.blocks[1].coupled_eq.as_ref().map(|c| Arc::new(c.as_oracle()) as _);
        let x = BlockVector::new(vec![vec![0.0], vec![0.0]]);
        assert!(matches!(build_spd_approx(&p, &x, &[0.5], 1.0, 0.0), Err(SpdError::SpecViolation(_))));
    }
}
