//! Primal decomposition for coupling-variable problems.
//!
//! Each iteration solves every block subproblem at the current coupling point,
//! assembles the master gradient from the block multipliers (envelope formula),
//! minimizes a strongly convex model of the master and moves `y` part of the way
//! towards its minimizer.

use rayon::prelude::*;
use thiserror::Error;

use crate::kkt::{self, fit_multipliers, kkt_residual, KktError, KktResidual, MultiplierSet, Nlp, OracleNlp};
use crate::local::{solve_local, LocalOptions};
use crate::model::{concat, BlockVector, BoxSet, FnOracle, FunctionOracle, Matrix, ModelError, PdBlock, ProblemPD};
use crate::sca::{smooth_update, ScaError, StepSchedule};
use crate::trajectory::{inf_dist, Clock, IterationRecord, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdError {
    #[error("block {block} subproblem is infeasible at the current coupling point")]
    SubproblemInfeasible { block: usize },
    #[error("multiplier recovery failed for block {block}: {source}")]
    Multipliers { block: usize, source: KktError },
    #[error("approximate master problem is infeasible or not strongly convex")]
    ApproxMasterInfeasible,
    #[error("infeasibility recovery found no feasible point after 20 halvings")]
    RecoveryFailed,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScaError),
}

/// Candidate stationary points of one block subproblem at a fixed coupling point.
pub trait PdBlockSolver: Send + Sync {
    /// Returns every candidate the solver knows; an empty list means infeasible.
    fn candidates(&self, y: &[f64]) -> Vec<Vec<f64>>;
}

/// Block subproblem at fixed `y` as an [`Nlp`]: inequalities are the coupled
/// ones followed by the block-local ones.
pub struct BlockSubproblem<'a> {
    pub block: &'a PdBlock,
    pub y: &'a [f64],
}

impl BlockSubproblem<'_> {
    fn z(&self, x: &[f64]) -> Vec<f64> {
        concat(x, self.y)
    }
}

impl Nlp for BlockSubproblem<'_> {
    fn dim(&self) -> usize {
        self.block.dim()
    }
    fn n_ineq(&self) -> usize {
        self.block.n_coupled_ineq() + self.block.n_local_ineq()
    }
    fn n_eq(&self) -> usize {
        self.block.n_coupled_eq()
    }
    fn objective(&self, x: &[f64]) -> f64 {
        self.block.objective.value(&self.z(x))
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.block.objective.gradient(&self.z(x));
        g.truncate(self.dim());
        g
    }
    fn ineq(&self, x: &[f64]) -> Vec<f64> {
        let mut v = self.block.coupled_ineq.as_ref().map_or_else(Vec::new, |g| g.eval(&self.z(x)));
        if let Some(g) = &self.block.local_ineq {
            v.extend(g.eval(x));
        }
        v
    }
    fn eq(&self, x: &[f64]) -> Vec<f64> {
        self.block.coupled_eq.as_ref().map_or_else(Vec::new, |h| h.eval(&self.z(x)))
    }
    fn ineq_jacobian_t(&self, x: &[f64]) -> Matrix {
        let n = self.dim();
        let (rc, rl) = (self.block.n_coupled_ineq(), self.block.n_local_ineq());
        let mut j = Matrix::zeros(n, rc + rl);
        if let Some(g) = &self.block.coupled_ineq {
            j.view_mut((0, 0), (n, rc)).copy_from(&g.jacobian_t(&self.z(x)).rows(0, n));
        }
        if let Some(g) = &self.block.local_ineq {
            j.view_mut((0, rc), (n, rl)).copy_from(&g.jacobian_t(x));
        }
        j
    }
    fn eq_jacobian_t(&self, x: &[f64]) -> Matrix {
        let n = self.dim();
        match &self.block.coupled_eq {
            Some(h) => h.jacobian_t(&self.z(x)).rows(0, n).into_owned(),
            None => Matrix::zeros(n, 0),
        }
    }
    fn bounds(&self) -> &BoxSet {
        &self.block.set
    }
}

/// A block's selected stationary point with its multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSolution {
    pub x: Vec<f64>,
    /// Inequalities ordered coupled-first; equalities are the coupled ones.
    pub multipliers: MultiplierSet,
    pub value: f64,
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

fn generic_starts(set: &BoxSet) -> Vec<Vec<f64>> {
    let base = set.project(&vec![0.0; set.dim()]);
    let mut starts = vec![base.clone()];
    for frac in [0.25, 0.75] {
        let p: Vec<f64> = set
            .lower()
            .iter()
            .zip(set.upper())
            .zip(&base)
            .map(|((&l, &u), &b)| if l.is_finite() && u.is_finite() { l + frac * (u - l) } else { b + 4.0 * frac - 2.0 })
            .collect();
        starts.push(set.project(&p));
    }
    starts
}

/// Selects the lowest-objective feasible candidate (ties broken lexicographically)
/// and recovers its multipliers.
pub(crate) fn select_candidate<P: Nlp + ?Sized>(
    nlp: &P,
    candidates: Vec<Vec<f64>>,
) -> Option<Result<BlockSolution, KktError>> {
    let feas_tol = 1e-9;
    let mut scored: Vec<(f64, Vec<f64>)> = candidates
        .into_iter()
        .filter(|x| {
            let g = nlp.ineq(x);
            let h = nlp.eq(x);
            nlp.bounds().contains(x, 0.0)
                && g.iter().all(|v| *v <= feas_tol)
                && h.iter().all(|v| v.abs() <= feas_tol * (1.0 + x.iter().map(|c| c.abs()).fold(0.0, f64::max)))
        })
        .map(|x| (nlp.objective(&x), x))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| lexicographic(&a.1, &b.1)));
    let (value, x) = scored.into_iter().next()?;
    Some(kkt::solve_kkt_conditions(nlp, &x).map(|multipliers| BlockSolution { x, multipliers, value }))
}

/// Stationary point of block `i` at coupling point `y`.
pub fn solve_subproblem_pd(problem: &ProblemPD, i: usize, y: &[f64]) -> Result<BlockSolution, PdError> {
    let block = &problem.blocks[i];
    let nlp = BlockSubproblem { block, y };
    let candidates = match &block.solver {
        Some(s) => s.candidates(y),
        None => generic_starts(&block.set)
            .iter()
            .map(|s| solve_local(&nlp, s, &LocalOptions::default()))
            .filter(|s| s.feasible)
            .map(|s| s.x)
            .collect(),
    };
    match select_candidate(&nlp, candidates) {
        None => Err(PdError::SubproblemInfeasible { block: i }),
        Some(Ok(s)) => Ok(s),
        Some(Err(source)) => Err(PdError::Multipliers { block: i, source }),
    }
}

/// Envelope gradient of block `i`: `∇_y f_i + ∇_y g̃_i μ̃_i + ∇_y h̃_i λ̃_i`.
pub fn master_gradient_block(
    problem: &ProblemPD,
    i: usize,
    y: &[f64],
    x: &[f64],
    multipliers: &MultiplierSet,
) -> Vec<f64> {
    let block = &problem.blocks[i];
    let n = block.dim();
    let n0 = y.len();
    let z = concat(x, y);
    let mut grad: Vec<f64> = block.objective.gradient(&z)[n..].to_vec();
    if let Some(g) = &block.coupled_ineq {
        let jt = g.jacobian_t(&z);
        for (c, mu) in multipliers.ineq.iter().take(g.dim_out()).enumerate() {
            for r in 0..n0 {
                grad[r] += jt[(n + r, c)] * mu;
            }
        }
    }
    if let Some(h) = &block.coupled_eq {
        let jt = h.jacobian_t(&z);
        for (c, lam) in multipliers.eq.iter().enumerate() {
            for r in 0..n0 {
                grad[r] += jt[(n + r, c)] * lam;
            }
        }
    }
    grad
}

/// Model of `f_0` inside the approximate master problem.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum MasterModel {
    /// Keep `f_0` as is (it must be convex).
    Exact,
    /// Linearize `f_0` at `y(k)` and add `(tau0/2)‖y − y(k)‖²`.
    Taylor { tau0: f64 },
}

/// Minimizer of `F_0(y) + (τ/2)‖y − y(k)‖² + gradᵀ(y − y(k))` over the coupling set
/// (and `g_0 ≤ 0` when present).
pub fn solve_approx_master(
    problem: &ProblemPD,
    yk: &[f64],
    grad: &[f64],
    tau: f64,
    model: MasterModel,
) -> Result<Vec<f64>, PdError> {
    let set = &problem.coupling_set;
    let f0 = problem.master_objective.clone();
    if let (MasterModel::Exact, Some(q), None) = (model, &problem.master_quadratic, &problem.master_ineq) {
        let denom = 2.0 * q.curvature + tau;
        if !(denom > 0.0) {
            return Err(PdError::ApproxMasterInfeasible);
        }
        let y: Vec<f64> = (0..yk.len())
            .map(|j| (2.0 * q.curvature * q.center[j] + tau * yk[j] - grad[j]) / denom)
            .collect();
        return Ok(set.project(&y));
    }
    let curvature = match model {
        MasterModel::Exact => tau,
        MasterModel::Taylor { tau0 } => tau + tau0,
    };
    if f0.is_none() && !(curvature > 0.0) {
        return Err(PdError::ApproxMasterInfeasible);
    }
    let (a, g) = (yk.to_vec(), grad.to_vec());
    let (a2, g2) = (a.clone(), g.clone());
    let (f0a, f0b) = (f0.clone(), f0);
    let lin0 = match (&model, &f0a) {
        (MasterModel::Taylor { .. }, Some(f)) => f.gradient(yk),
        _ => vec![0.0; yk.len()],
    };
    let lin0b = lin0.clone();
    let exact = matches!(model, MasterModel::Exact);
    let objective = FnOracle::new(
        yk.len(),
        move |y| {
            let base = if exact { f0a.as_ref().map_or(0.0, |f| f.value(y)) } else { 0.0 };
            base + y
                .iter()
                .zip(&a)
                .zip(g.iter().zip(&lin0))
                .map(|((yi, ai), (gi, li))| 0.5 * curvature * (yi - ai).powi(2) + (gi + li) * (yi - ai))
                .sum::<f64>()
        },
        move |y| {
            let mut out: Vec<f64> = y
                .iter()
                .zip(&a2)
                .zip(g2.iter().zip(&lin0b))
                .map(|((yi, ai), (gi, li))| curvature * (yi - ai) + gi + li)
                .collect();
            if exact {
                if let Some(f) = &f0b {
                    for (o, d) in out.iter_mut().zip(f.gradient(y)) {
                        *o += d;
                    }
                }
            }
            out
        },
    );
    if problem.master_ineq.is_none() {
        return Ok(projected_gradient(&objective, set, yk));
    }
    let nlp = OracleNlp {
        objective: objective.shared(),
        ineq: problem.master_ineq.clone(),
        eq: None,
        bounds: set.clone(),
    };
    let opts = LocalOptions { tol: 1e-12, ..LocalOptions::default() };
    let sol = solve_local(&nlp, yk, &opts);
    if !sol.feasible {
        return Err(PdError::ApproxMasterInfeasible);
    }
    Ok(sol.x)
}

/// Projected gradient with step `1/L` for a strongly convex objective over a box.
///
/// `L` starts from a Gershgorin bound on a finite-difference Hessian at `y0` and is
/// doubled whenever a step fails to decrease the objective.
pub(crate) fn projected_gradient(f: &dyn FunctionOracle, set: &BoxSet, y0: &[f64]) -> Vec<f64> {
    let n = y0.len();
    let mut y = set.project(y0);
    let g0 = f.gradient(&y);
    let mut rows = vec![0.0; n];
    for j in 0..n {
        let h = 1e-4 * y[j].abs().max(1.0);
        let mut yp = y.clone();
        yp[j] += h;
        for (r, (a, b)) in rows.iter_mut().zip(f.gradient(&yp).iter().zip(&g0)) {
            *r += ((a - b) / h).abs();
        }
    }
    let mut lip = rows.into_iter().fold(1e-12, f64::max);
    let mut fy = f.value(&y);
    for _ in 0..100_000 {
        let g = f.gradient(&y);
        let trial: Vec<f64> = y.iter().zip(&g).map(|(a, b)| a - b / lip).collect();
        let trial = set.project(&trial);
        let moved = inf_dist(&trial, &y);
        if moved <= 1e-14 * (1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            return trial;
        }
        let ft = f.value(&trial);
        if ft > fy + 1e-12 * (1.0 + fy.abs()) {
            lip *= 2.0;
            continue;
        }
        y = trial;
        fy = ft;
    }
    y
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PdConfig {
    pub schedule: StepSchedule,
    pub tau: f64,
    pub master: MasterModel,
    pub max_iters: usize,
    pub parallel: bool,
}

impl PdConfig {
    pub fn new(schedule: StepSchedule, tau: f64) -> Self {
        Self { schedule, tau, master: MasterModel::Exact, max_iters: 10, parallel: true }
    }
}

#[derive(Debug, Clone)]
pub struct PdState {
    pub k: usize,
    pub y: Vec<f64>,
    pub y_prev: Option<Vec<f64>>,
    pub blocks: Vec<BlockSolution>,
    pub master_gradient: Vec<f64>,
    pub trajectory: Trajectory,
    clock: Clock,
}

impl PdState {
    pub fn x(&self) -> BlockVector {
        BlockVector::new(self.blocks.iter().map(|b| b.x.clone()).collect())
    }
}

fn solve_all(problem: &ProblemPD, y: &[f64], parallel: bool) -> Result<Vec<BlockSolution>, PdError> {
    let solve = |i: usize| solve_subproblem_pd(problem, i, y);
    let results: Vec<Result<BlockSolution, PdError>> = if parallel {
        (0..problem.block_count()).into_par_iter().map(solve).collect()
    } else {
        (0..problem.block_count()).map(solve).collect()
    };
    results.into_iter().collect()
}

/// `Σ_i ∇f_i†(y)` accumulated in block order.
pub fn total_master_gradient(problem: &ProblemPD, y: &[f64], blocks: &[BlockSolution]) -> Vec<f64> {
    let mut total = vec![0.0; y.len()];
    for (i, b) in blocks.iter().enumerate() {
        for (t, v) in total.iter_mut().zip(master_gradient_block(problem, i, y, &b.x, &b.multipliers)) {
            *t += v;
        }
    }
    total
}

/// Scans `y(k−1) + δ (y(k) − y(k−1))` for `δ = 1, 1/2, …, 2⁻²⁰` and returns the first
/// candidate at which every block subproblem is feasible.
pub fn infeasible_recovery(
    problem: &ProblemPD,
    y_k: &[f64],
    y_prev: &[f64],
    parallel: bool,
) -> Result<(Vec<f64>, Vec<BlockSolution>), PdError> {
    let mut delta = 1.0;
    for _ in 0..=20 {
        let cand = smooth_update(y_prev, y_k, delta);
        match solve_all(problem, &cand, parallel) {
            Ok(blocks) => return Ok((cand, blocks)),
            Err(PdError::SubproblemInfeasible { .. }) => delta *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(PdError::RecoveryFailed)
}

fn record(problem: &ProblemPD, state: &PdState, step: f64, displacement: f64) -> Result<IterationRecord, PdError> {
    let x = state.x();
    Ok(IterationRecord {
        k: state.k,
        objective: problem.objective(&x, &state.y)?,
        metrics: problem.violation_metrics(&x, &state.y)?,
        step,
        displacement,
        elapsed_s: state.clock.elapsed(),
    })
}

/// Solves the blocks at the initial coupling point and records iterate 0.
pub fn pd_init(problem: &ProblemPD, y0: &[f64], config: &PdConfig) -> Result<PdState, PdError> {
    config.schedule.validate()?;
    crate::model::check_dim("coupling variable", problem.coupling_dim(), y0.len())?;
    let clock = Clock::start();
    let blocks = solve_all(problem, y0, config.parallel)?;
    let master_gradient = total_master_gradient(problem, y0, &blocks);
    let mut state = PdState {
        k: 0,
        y: y0.to_vec(),
        y_prev: None,
        blocks,
        master_gradient,
        trajectory: Trajectory::default(),
        clock,
    };
    let rec = record(problem, &state, 0.0, 0.0)?;
    state.trajectory.records.push(rec);
    Ok(state)
}

/// One outer iteration.
pub fn pd_iterate(mut state: PdState, problem: &ProblemPD, config: &PdConfig) -> Result<PdState, PdError> {
    let gamma = config.schedule.outer_step(state.k);
    let target = solve_approx_master(problem, &state.y, &state.master_gradient, config.tau, config.master)?;
    let proposal = smooth_update(&state.y, &target, gamma);
    let (y_new, blocks) = match solve_all(problem, &proposal, config.parallel) {
        Ok(b) => (proposal, b),
        Err(PdError::SubproblemInfeasible { .. }) => infeasible_recovery(problem, &proposal, &state.y, config.parallel)?,
        Err(e) => return Err(e),
    };
    let displacement = inf_dist(&y_new, &state.y);
    state.master_gradient = total_master_gradient(problem, &y_new, &blocks);
    state.y_prev = Some(std::mem::replace(&mut state.y, y_new));
    state.blocks = blocks;
    state.k += 1;
    let rec = record(problem, &state, gamma, displacement)?;
    state.trajectory.records.push(rec);
    Ok(state)
}

/// The full problem in the variables `[x_1; …; x_I; y]`.
///
/// Inequalities: for each block its coupled then local ones, then `g_0`.
/// Equalities: the coupled ones, block by block.
pub struct FullPdNlp<'a> {
    problem: &'a ProblemPD,
    offsets: Vec<usize>,
    bounds: BoxSet,
}

impl<'a> FullPdNlp<'a> {
    pub fn new(problem: &'a ProblemPD) -> Self {
        let mut offsets = vec![0];
        let mut bounds = BoxSet::unbounded(0);
        for b in &problem.blocks {
            offsets.push(offsets.last().unwrap() + b.dim());
            bounds = bounds.product(&b.set);
        }
        bounds = bounds.product(&problem.coupling_set);
        Self { problem, offsets, bounds }
    }

    pub fn pack(&self, x: &BlockVector, y: &[f64]) -> Vec<f64> {
        concat(&x.flatten(), y)
    }

    fn split<'b>(&self, v: &'b [f64]) -> (Vec<&'b [f64]>, &'b [f64]) {
        let blocks = self.offsets.windows(2).map(|w| &v[w[0]..w[1]]).collect();
        (blocks, &v[*self.offsets.last().unwrap()..])
    }

    fn n_y(&self) -> usize {
        self.problem.coupling_dim()
    }

    /// Multipliers of the full problem from per-block solutions (`g_0` multipliers zero).
    pub fn assemble_multipliers(&self, blocks: &[BlockSolution]) -> MultiplierSet {
        let mut m = MultiplierSet::zeros(0, 0, self.dim());
        for b in blocks {
            m.ineq.extend_from_slice(&b.multipliers.ineq);
            m.eq.extend_from_slice(&b.multipliers.eq);
        }
        m.ineq.extend(std::iter::repeat_n(0.0, self.problem.master_ineq.as_ref().map_or(0, |g| g.dim_out())));
        m
    }
}

impl Nlp for FullPdNlp<'_> {
    fn dim(&self) -> usize {
        self.offsets.last().unwrap() + self.n_y()
    }
    fn n_ineq(&self) -> usize {
        self.problem.blocks.iter().map(|b| b.n_coupled_ineq() + b.n_local_ineq()).sum::<usize>()
            + self.problem.master_ineq.as_ref().map_or(0, |g| g.dim_out())
    }
    fn n_eq(&self) -> usize {
        self.problem.blocks.iter().map(PdBlock::n_coupled_eq).sum()
    }
    fn objective(&self, v: &[f64]) -> f64 {
        let (xs, y) = self.split(v);
        let x = BlockVector::new(xs.iter().map(|s| s.to_vec()).collect());
        self.problem.objective(&x, y).unwrap_or(f64::NAN)
    }
    fn gradient(&self, v: &[f64]) -> Vec<f64> {
        let (xs, y) = self.split(v);
        let n = self.dim();
        let ny = self.n_y();
        let mut g = vec![0.0; n];
        if let Some(f0) = &self.problem.master_objective {
            for (t, d) in g[n - ny..].iter_mut().zip(f0.gradient(y)) {
                *t += d;
            }
        }
        for (i, b) in self.problem.blocks.iter().enumerate() {
            let gi = b.objective.gradient(&concat(xs[i], y));
            let (o, d) = (self.offsets[i], b.dim());
            g[o..o + d].copy_from_slice(&gi[..d]);
            for (t, v) in g[n - ny..].iter_mut().zip(&gi[d..]) {
                *t += v;
            }
        }
        g
    }
    fn ineq(&self, v: &[f64]) -> Vec<f64> {
        let (xs, y) = self.split(v);
        let mut out = Vec::new();
        for (i, b) in self.problem.blocks.iter().enumerate() {
            out.extend(BlockSubproblem { block: b, y }.ineq(xs[i]));
        }
        if let Some(g0) = &self.problem.master_ineq {
            out.extend(g0.eval(y));
        }
        out
    }
    fn eq(&self, v: &[f64]) -> Vec<f64> {
        let (xs, y) = self.split(v);
        let mut out = Vec::new();
        for (i, b) in self.problem.blocks.iter().enumerate() {
            out.extend(BlockSubproblem { block: b, y }.eq(xs[i]));
        }
        out
    }
    fn ineq_jacobian_t(&self, v: &[f64]) -> Matrix {
        let (xs, y) = self.split(v);
        let n = self.dim();
        let ny = self.n_y();
        let mut j = Matrix::zeros(n, self.n_ineq());
        let mut col = 0;
        for (i, b) in self.problem.blocks.iter().enumerate() {
            let (o, d) = (self.offsets[i], b.dim());
            if let Some(g) = &b.coupled_ineq {
                let jt = g.jacobian_t(&concat(xs[i], y));
                for c in 0..g.dim_out() {
                    for r in 0..d {
                        j[(o + r, col + c)] = jt[(r, c)];
                    }
                    for r in 0..ny {
                        j[(n - ny + r, col + c)] = jt[(d + r, c)];
                    }
                }
                col += g.dim_out();
            }
            if let Some(g) = &b.local_ineq {
                let jt = g.jacobian_t(xs[i]);
                j.view_mut((o, col), (d, g.dim_out())).copy_from(&jt);
                col += g.dim_out();
            }
        }
        if let Some(g0) = &self.problem.master_ineq {
            j.view_mut((n - ny, col), (ny, g0.dim_out())).copy_from(&g0.jacobian_t(y));
        }
        j
    }
    fn eq_jacobian_t(&self, v: &[f64]) -> Matrix {
        let (xs, y) = self.split(v);
        let n = self.dim();
        let ny = self.n_y();
        let mut j = Matrix::zeros(n, self.n_eq());
        let mut col = 0;
        for (i, b) in self.problem.blocks.iter().enumerate() {
            if let Some(h) = &b.coupled_eq {
                let (o, d) = (self.offsets[i], b.dim());
                let jt = h.jacobian_t(&concat(xs[i], y));
                for c in 0..h.dim_out() {
                    for r in 0..d {
                        j[(o + r, col + c)] = jt[(r, c)];
                    }
                    for r in 0..ny {
                        j[(n - ny + r, col + c)] = jt[(d + r, c)];
                    }
                }
                col += h.dim_out();
            }
        }
        j
    }
    fn bounds(&self) -> &BoxSet {
        &self.bounds
    }
}

/// Full-problem KKT residual of the assembled point `(x†(y), y)` with the block multipliers.
pub fn assembled_residual(problem: &ProblemPD, state: &PdState) -> Result<KktResidual, KktError> {
    let nlp = FullPdNlp::new(problem);
    let v = nlp.pack(&state.x(), &state.y);
    kkt_residual(&nlp, &v, &nlp.assemble_multipliers(&state.blocks))
}

/// Full-problem KKT residual at an arbitrary point with best-fit multipliers.
pub fn point_residual(problem: &ProblemPD, x: &BlockVector, y: &[f64], band: f64) -> Result<KktResidual, KktError> {
    let nlp = FullPdNlp::new(problem);
    let v = nlp.pack(x, y);
    let m = fit_multipliers(&nlp, &v, band);
    kkt_residual(&nlp, &v, &m)
}

/// Outcome of a full run; `state` is the last successful state.
#[derive(Debug, Clone)]
pub struct PdRun {
    pub state: Option<PdState>,
    pub trajectory: Trajectory,
}

/// Runs `config.max_iters` outer iterations from `y0`. Failures end the run and are
/// recorded in the trajectory rather than returned.
pub fn run_pd(problem: &ProblemPD, y0: &[f64], config: &PdConfig) -> PdRun {
    let mut state = match pd_init(problem, y0, config) {
        Ok(s) => s,
        Err(e) => {
            return PdRun { state: None, trajectory: Trajectory { failure: Some(e.to_string()), ..Default::default() } }
        }
    };
    for _ in 0..config.max_iters {
        let snapshot = state.clone();
        match pd_iterate(state, problem, config) {
            Ok(s) => state = s,
            Err(e) => {
                let mut trajectory = snapshot.trajectory.clone();
                trajectory.failure = Some(e.to_string());
                return PdRun { state: Some(snapshot), trajectory };
            }
        }
    }
    let mut trajectory = state.trajectory.clone();
    trajectory.final_kkt = assembled_residual(problem, &state).ok();
    PdRun { state: Some(state), trajectory }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnVectorOracle, IsotropicQuadratic};

    fn one_block(f: FnOracle, set: BoxSet) -> ProblemPD {
        ProblemPD::new(BoxSet::uniform(1, 0.0, 1.0).unwrap(), vec![PdBlock::new(set, f.shared())]).unwrap()
    }

    #[test]
    fn unconstrained_interior_block() {
        let f = FnOracle::new(3, |z| z[0] * z[0] + z[1] * z[1], |z| vec![2.0 * z[0], 2.0 * z[1], 0.0]);
        let p = one_block(f, BoxSet::unbounded(2));
        let s = solve_subproblem_pd(&p, 0, &[0.5]).unwrap();
        assert!(s.x.iter().all(|v| v.abs() < 1e-6));
        assert!(s.multipliers.eq.is_empty() && s.multipliers.ineq.is_empty());
    }

    #[test]
    fn envelope_reduces_to_partial_derivative() {
        let f = FnOracle::new(2, |z| 3.0 * z[1] + z[0] * z[0], |z| vec![2.0 * z[0], 3.0]);
        let p = one_block(f, BoxSet::uniform(1, -1.0, 1.0).unwrap());
        let s = solve_subproblem_pd(&p, 0, &[0.2]).unwrap();
        assert_eq!(master_gradient_block(&p, 0, &[0.2], &s.x, &s.multipliers), vec![3.0]);
        let f = FnOracle::new(2, |z| z[0] * z[0], |z| vec![2.0 * z[0], 0.0]);
        let p = one_block(f, BoxSet::uniform(1, -1.0, 1.0).unwrap());
        let s = solve_subproblem_pd(&p, 0, &[0.2]).unwrap();
        assert_eq!(master_gradient_block(&p, 0, &[0.2], &s.x, &s.multipliers), vec![0.0]);
    }

    #[test]
    fn closed_form_master_clamps() {
        let f = FnOracle::new(2, |_| 0.0, |_| vec![0.0, 0.0]);
        let mut p = one_block(f, BoxSet::uniform(1, -1.0, 1.0).unwrap());
        p.master_quadratic = Some(IsotropicQuadratic { curvature: 2.0, center: vec![0.4] });
        let y = solve_approx_master(&p, &[0.9], &[1.0], 0.0, MasterModel::Exact).unwrap();
        assert!((y[0] - (0.4 - 1.0 / 4.0)).abs() < 1e-15);
        let y = solve_approx_master(&p, &[0.9], &[100.0], 0.0, MasterModel::Exact).unwrap();
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn proximal_master_fixed_point() {
        let f = FnOracle::new(2, |_| 0.0, |_| vec![0.0, 0.0]);
        let p = one_block(f, BoxSet::uniform(1, -1.0, 1.0).unwrap());
        let y = solve_approx_master(&p, &[0.37], &[0.0], 2.0, MasterModel::Exact).unwrap();
        assert!((y[0] - 0.37).abs() < 1e-12);
    }

    #[test]
    fn generic_master_matches_closed_form() {
        let f = FnOracle::new(2, |_| 0.0, |_| vec![0.0, 0.0]);
        let p = one_block(f, BoxSet::uniform(1, -1.0, 1.0).unwrap())
            .with_master_objective(FnOracle::new(1, |y| 3.0 * (y[0] - 0.2).powi(2), |y| vec![6.0 * (y[0] - 0.2)]).shared())
            .unwrap();
        let y = solve_approx_master(&p, &[0.9], &[1.2], 0.5, MasterModel::Exact).unwrap();
        let expect = (6.0 * 0.2 + 0.5 * 0.9 - 1.2) / 6.5;
        assert!((y[0] - expect).abs() < 1e-10, "{} vs {expect}", y[0]);
    }

    struct Band(f64);

    impl PdBlockSolver for Band {
        fn candidates(&self, y: &[f64]) -> Vec<Vec<f64>> {
            if y[0] <= self.0 {
                vec![vec![0.0]]
            } else {
                vec![]
            }
        }
    }

    fn band_problem(limit: f64) -> ProblemPD {
        // block feasible only when y ≤ limit: x ∈ [-1, 1], g = y - limit + x² ≤ 0
        let mut b = PdBlock::new(
            BoxSet::uniform(1, -1.0, 1.0).unwrap(),
            FnOracle::new(2, |z| z[0] * z[0], |z| vec![2.0 * z[0], 0.0]).shared(),
        );
        b.coupled_ineq = Some(
            FnVectorOracle::scalar(2, move |z| z[1] - limit + z[0] * z[0], |z| vec![2.0 * z[0], 1.0]).shared(),
        );
        b.solver = Some(std::sync::Arc::new(Band(limit)));
        ProblemPD::new(BoxSet::uniform(1, -1.0, 1.0).unwrap(), vec![b]).unwrap()
    }

    #[test]
    fn recovery_halves_towards_previous_point() {
        let p = band_problem(0.3);
        let (y, _) = infeasible_recovery(&p, &[1.0], &[0.0], false).unwrap();
        assert_eq!(y, vec![0.25]);
        let (y, _) = infeasible_recovery(&p, &[0.2], &[0.0], false).unwrap();
        assert_eq!(y, vec![0.2]);
    }

    #[test]
    fn recovery_fails_on_empty_band() {
        let p = band_problem(-1e-9);
        assert_eq!(infeasible_recovery(&p, &[1.0], &[0.0], false).unwrap_err(), PdError::RecoveryFailed);
    }
}
