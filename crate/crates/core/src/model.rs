//! Problem families and the differentiable-oracle abstraction they are built from.
//!
//! Coupling-variable problems ([`ProblemPD`], [`ProblemSPD`]) evaluate every block
//! oracle on the concatenated point `[x_i; y]`. Coupling-constraint problems
//! ([`ProblemDD`], [`ProblemSDD`]) evaluate block oracles on `x_i` alone.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dd::DdBlockSolver;
use crate::pd::PdBlockSolver;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid box: lower bound {lower} exceeds upper bound {upper} at coordinate {index}")]
    InvalidBox { index: usize, lower: f64, upper: f64 },
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<(), ModelError> {
    if expected == got {
        Ok(())
    } else {
        Err(ModelError::Dimension { context, expected, got })
    }
}

/// Scalar function with an analytic gradient.
///
/// Implementations must be pure so blocks can be evaluated from several threads.
pub trait FunctionOracle: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
}

/// Vector function with an analytic Jacobian, returned transposed (`dim_in × dim_out`).
pub trait VectorOracle: Send + Sync {
    fn dim_in(&self) -> usize;
    fn dim_out(&self) -> usize;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
    fn jacobian_t(&self, x: &[f64]) -> Matrix;
}

pub type Func = Arc<dyn FunctionOracle>;
pub type VecFunc = Arc<dyn VectorOracle>;

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type JacFn = dyn Fn(&[f64]) -> Matrix + Send + Sync;

/// Closure-backed scalar oracle.
#[derive(Clone)]
pub struct FnOracle {
    dim: usize,
    value: Arc<ValueFn>,
    grad: Arc<GradFn>,
}

impl FnOracle {
    pub fn new(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { dim, value: Arc::new(value), grad: Arc::new(grad) }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(dim, |_| 0.0, move |_| vec![0.0; dim])
    }

    pub fn shared(self) -> Func {
        Arc::new(self)
    }
}

impl fmt::Debug for FnOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnOracle(dim={})", self.dim)
    }
}

impl FunctionOracle for FnOracle {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }
}

/// Closure-backed vector oracle.
#[derive(Clone)]
pub struct FnVectorOracle {
    dim_in: usize,
    dim_out: usize,
    eval: Arc<GradFn>,
    jac_t: Arc<JacFn>,
}

impl FnVectorOracle {
    pub fn new(
        dim_in: usize,
        dim_out: usize,
        eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        jac_t: impl Fn(&[f64]) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        Self { dim_in, dim_out, eval: Arc::new(eval), jac_t: Arc::new(jac_t) }
    }

    /// Single-output vector oracle from a scalar value and gradient.
    pub fn scalar(
        dim_in: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            dim_in,
            1,
            move |x| vec![value(x)],
            move |x| Matrix::from_column_slice(dim_in, 1, &grad(x)),
        )
    }

    pub fn shared(self) -> VecFunc {
        Arc::new(self)
    }
}

impl fmt::Debug for FnVectorOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnVectorOracle({}->{})", self.dim_in, self.dim_out)
    }
}

impl VectorOracle for FnVectorOracle {
    fn dim_in(&self) -> usize {
        self.dim_in
    }
    fn dim_out(&self) -> usize {
        self.dim_out
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (self.eval)(x)
    }
    fn jacobian_t(&self, x: &[f64]) -> Matrix {
        (self.jac_t)(x)
    }
}

/// `x ↦ A x + b`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub a: Matrix,
    pub b: Vector,
}

impl AffineMap {
    pub fn new(a: Matrix, b: Vector) -> Result<Self, ModelError> {
        check_dim("affine map offset", a.nrows(), b.len())?;
        Ok(Self { a, b })
    }
}

impl VectorOracle for AffineMap {
    fn dim_in(&self) -> usize {
        self.a.ncols()
    }
    fn dim_out(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.a * Vector::from_column_slice(x) + &self.b;
        v.as_slice().to_vec()
    }
    fn jacobian_t(&self, _x: &[f64]) -> Matrix {
        self.a.transpose()
    }
}

/// Axis-aligned box; infinite bounds are allowed and never clamp.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoxSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, ModelError> {
        check_dim("box bounds", lower.len(), upper.len())?;
        for (index, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !(l <= u) {
                return Err(ModelError::InvalidBox { index, lower: l, upper: u });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        Self { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    /// The same interval in every coordinate.
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self, ModelError> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }
    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| v.max(l).min(u))
            .collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.violation(x) <= tol
    }

    /// Largest distance of a coordinate outside its interval.
    pub fn violation(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&l, &u))| (l - v).max(v - u).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &BoxSet) -> BoxSet {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        BoxSet { lower, upper }
    }
}

/// Per-block primal variables `x = (x_1, …, x_I)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BlockVector(Vec<Vec<f64>>);

impl BlockVector {
    pub fn new(blocks: Vec<Vec<f64>>) -> Self {
        Self(blocks)
    }
    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.0
    }
    pub fn block(&self, i: usize) -> &[f64] {
        &self.0[i]
    }
    pub fn block_count(&self) -> usize {
        self.0.len()
    }
    pub fn total_dim(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }
    pub fn flatten(&self) -> Vec<f64> {
        self.0.concat()
    }
    pub fn into_inner(self) -> Vec<Vec<f64>> {
        self.0
    }
}

impl From<Vec<Vec<f64>>> for BlockVector {
    fn from(v: Vec<Vec<f64>>) -> Self {
        Self(v)
    }
}

pub(crate) fn concat(x: &[f64], y: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(x.len() + y.len());
    z.extend_from_slice(x);
    z.extend_from_slice(y);
    z
}

pub(crate) fn pos(v: f64) -> f64 {
    v.max(0.0)
}

fn max_pos(values: &[f64]) -> f64 {
    values.iter().copied().map(pos).fold(0.0, f64::max)
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Constraint-violation summary used by the convergence criteria.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ViolationMetrics {
    pub mean_ineq: f64,
    pub max_ineq: f64,
    pub max_eq: f64,
    pub coupling: f64,
}

/// One block of a coupling-variable problem. All coupled oracles act on `[x_i; y]`.
#[derive(Clone)]
pub struct PdBlock {
    pub set: BoxSet,
    pub objective: Func,
    pub coupled_ineq: Option<VecFunc>,
    pub coupled_eq: Option<VecFunc>,
    pub local_ineq: Option<VecFunc>,
    /// Problem-specific candidate generator; the generic local solver is used when absent.
    pub solver: Option<Arc<dyn PdBlockSolver>>,
}

impl PdBlock {
    pub fn new(set: BoxSet, objective: Func) -> Self {
        Self { set, objective, coupled_ineq: None, coupled_eq: None, local_ineq: None, solver: None }
    }
    pub fn dim(&self) -> usize {
        self.set.dim()
    }
    pub fn n_coupled_ineq(&self) -> usize {
        self.coupled_ineq.as_ref().map_or(0, |g| g.dim_out())
    }
    pub fn n_coupled_eq(&self) -> usize {
        self.coupled_eq.as_ref().map_or(0, |h| h.dim_out())
    }
    pub fn n_local_ineq(&self) -> usize {
        self.local_ineq.as_ref().map_or(0, |g| g.dim_out())
    }
}

/// Hint that the master objective is `curvature·‖y − center‖²`, enabling a closed-form master.
#[derive(Debug, Clone, PartialEq)]
pub struct IsotropicQuadratic {
    pub curvature: f64,
    pub center: Vec<f64>,
}

/// Coupling-variable problem: `min f_0(y) + Σ f_i(x_i, y)`.
#[derive(Clone)]
pub struct ProblemPD {
    pub coupling_set: BoxSet,
    pub master_objective: Option<Func>,
    pub master_ineq: Option<VecFunc>,
    pub master_quadratic: Option<IsotropicQuadratic>,
    pub blocks: Vec<PdBlock>,
}

fn check_oracle_in(context: &'static str, oracle: &Option<VecFunc>, dim: usize) -> Result<(), ModelError> {
    match oracle {
        Some(o) => check_dim(context, dim, o.dim_in()),
        None => Ok(()),
    }
}

impl ProblemPD {
    pub fn new(coupling_set: BoxSet, blocks: Vec<PdBlock>) -> Result<Self, ModelError> {
        let p = Self { coupling_set, master_objective: None, master_ineq: None, master_quadratic: None, blocks };
        p.validate()?;
        Ok(p)
    }

    pub fn with_master_objective(mut self, f0: Func) -> Result<Self, ModelError> {
        check_dim("master objective", self.coupling_dim(), f0.dim())?;
        self.master_objective = Some(f0);
        Ok(self)
    }

    pub fn with_master_ineq(mut self, g0: VecFunc) -> Result<Self, ModelError> {
        check_dim("master inequality", self.coupling_dim(), g0.dim_in())?;
        self.master_ineq = Some(g0);
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let n0 = self.coupling_dim();
        for b in &self.blocks {
            let n = b.dim() + n0;
            check_dim("block objective", n, b.objective.dim())?;
            check_oracle_in("coupled inequality", &b.coupled_ineq, n)?;
            check_oracle_in("coupled equality", &b.coupled_eq, n)?;
            check_oracle_in("local inequality", &b.local_ineq, b.dim())?;
        }
        Ok(())
    }

    pub fn coupling_dim(&self) -> usize {
        self.coupling_set.dim()
    }
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn check_point(&self, x: &BlockVector, y: &[f64]) -> Result<(), ModelError> {
        check_dim("block count", self.blocks.len(), x.block_count())?;
        check_dim("coupling variable", self.coupling_dim(), y.len())?;
        for (b, xi) in self.blocks.iter().zip(x.blocks()) {
            check_dim("block variable", b.dim(), xi.len())?;
        }
        Ok(())
    }

    pub fn objective(&self, x: &BlockVector, y: &[f64]) -> Result<f64, ModelError> {
        self.check_point(x, y)?;
        let f0 = self.master_objective.as_ref().map_or(0.0, |f| f.value(y));
        Ok(self
            .blocks
            .iter()
            .zip(x.blocks())
            .fold(f0, |acc, (b, xi)| acc + b.objective.value(&concat(xi, y))))
    }

    /// Mean and max are over blocks; a block's inequality violation is its worst
    /// coupled or local component.
    pub fn violation_metrics(&self, x: &BlockVector, y: &[f64]) -> Result<ViolationMetrics, ModelError> {
        self.check_point(x, y)?;
        let mut sum = 0.0;
        let mut max_ineq: f64 = self.master_ineq.as_ref().map_or(0.0, |g| max_pos(&g.eval(y)));
        let mut max_eq: f64 = 0.0;
        for (b, xi) in self.blocks.iter().zip(x.blocks()) {
            let z = concat(xi, y);
            let mut v: f64 = 0.0;
            if let Some(g) = &b.coupled_ineq {
                v = v.max(max_pos(&g.eval(&z)));
            }
            if let Some(g) = &b.local_ineq {
                v = v.max(max_pos(&g.eval(xi)));
            }
            if let Some(h) = &b.coupled_eq {
                max_eq = max_eq.max(max_abs(&h.eval(&z)));
            }
            sum += v;
            max_ineq = max_ineq.max(v);
        }
        let mean_ineq = if self.blocks.is_empty() { 0.0 } else { sum / self.blocks.len() as f64 };
        Ok(ViolationMetrics { mean_ineq, max_ineq, max_eq, coupling: max_ineq.max(max_eq) })
    }
}

/// Affine coupled equality `A_x x_i + A_y y + b_i = 0`.
#[derive(Debug, Clone)]
pub struct LinearCoupling {
    pub a_x: Matrix,
    pub a_y: Matrix,
    pub b: Vector,
}

impl LinearCoupling {
    pub fn new(a_x: Matrix, a_y: Matrix, b: Vector) -> Result<Self, ModelError> {
        check_dim("coupling rows (A_y)", a_x.nrows(), a_y.nrows())?;
        check_dim("coupling rows (b)", a_x.nrows(), b.len())?;
        Ok(Self { a_x, a_y, b })
    }

    pub fn rows(&self) -> usize {
        self.b.len()
    }

    /// The equivalent oracle on `[x_i; y]`.
    pub fn as_oracle(&self) -> AffineMap {
        let (m, n, n0) = (self.rows(), self.a_x.ncols(), self.a_y.ncols());
        let mut a = Matrix::zeros(m, n + n0);
        a.view_mut((0, 0), (m, n)).copy_from(&self.a_x);
        a.view_mut((0, n), (m, n0)).copy_from(&self.a_y);
        AffineMap { a, b: self.b.clone() }
    }
}

#[derive(Clone)]
pub struct SpdBlock {
    pub set: BoxSet,
    pub objective: Func,
    pub coupled_ineq: Option<VecFunc>,
    pub coupled_eq: Option<LinearCoupling>,
    pub local_ineq: Option<VecFunc>,
}

/// Coupling-variable problem whose coupled equalities are affine.
#[derive(Clone)]
pub struct ProblemSPD {
    pub coupling_set: BoxSet,
    pub master_objective: Option<Func>,
    pub master_ineq: Option<VecFunc>,
    pub blocks: Vec<SpdBlock>,
}

impl ProblemSPD {
    pub fn new(coupling_set: BoxSet, master_objective: Option<Func>, blocks: Vec<SpdBlock>) -> Result<Self, ModelError> {
        let p = Self { coupling_set, master_objective, master_ineq: None, blocks };
        p.to_pd()?;
        for b in &p.blocks {
            if let Some(c) = &b.coupled_eq {
                check_dim("A_x columns", b.set.dim(), c.a_x.ncols())?;
                check_dim("A_y columns", p.coupling_set.dim(), c.a_y.ncols())?;
            }
        }
        Ok(p)
    }

    pub fn coupling_dim(&self) -> usize {
        self.coupling_set.dim()
    }

    /// The same problem with the affine equalities wrapped as oracles.
    pub fn to_pd(&self) -> Result<ProblemPD, ModelError> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| PdBlock {
                set: b.set.clone(),
                objective: b.objective.clone(),
                coupled_ineq: b.coupled_ineq.clone(),
                coupled_eq: b.coupled_eq.as_ref().map(|c| Arc::new(c.as_oracle()) as VecFunc),
                local_ineq: b.local_ineq.clone(),
                solver: None,
            })
            .collect();
        let mut p = ProblemPD::new(self.coupling_set.clone(), blocks)?;
        p.master_objective = self.master_objective.clone();
        p.master_ineq = self.master_ineq.clone();
        Ok(p)
    }

    pub fn objective(&self, x: &BlockVector, y: &[f64]) -> Result<f64, ModelError> {
        self.to_pd()?.objective(x, y)
    }

    pub fn violation_metrics(&self, x: &BlockVector, y: &[f64]) -> Result<ViolationMetrics, ModelError> {
        self.to_pd()?.violation_metrics(x, y)
    }
}

/// One block of a coupling-constraint problem. All oracles act on `x_i`.
#[derive(Clone)]
pub struct DdBlock {
    pub set: BoxSet,
    pub objective: Func,
    pub coupled_ineq: Option<VecFunc>,
    pub coupled_eq: Option<VecFunc>,
    pub local_ineq: Option<VecFunc>,
    pub solver: Option<Arc<dyn DdBlockSolver>>,
}

impl DdBlock {
    pub fn new(set: BoxSet, objective: Func) -> Self {
        Self { set, objective, coupled_ineq: None, coupled_eq: None, local_ineq: None, solver: None }
    }
    pub fn dim(&self) -> usize {
        self.set.dim()
    }
}

/// Coupling-constraint problem: `min Σ f_i(x_i)` s.t. `Σ g̃_i ≤ 0`, `Σ h̃_i = 0`.
#[derive(Clone)]
pub struct ProblemDD {
    pub n_coupled_ineq: usize,
    pub n_coupled_eq: usize,
    pub blocks: Vec<DdBlock>,
}

impl ProblemDD {
    pub fn new(n_coupled_ineq: usize, n_coupled_eq: usize, blocks: Vec<DdBlock>) -> Result<Self, ModelError> {
        for b in &blocks {
            check_dim("block objective", b.dim(), b.objective.dim())?;
            check_oracle_in("coupled inequality", &b.coupled_ineq, b.dim())?;
            check_oracle_in("coupled equality", &b.coupled_eq, b.dim())?;
            check_oracle_in("local inequality", &b.local_ineq, b.dim())?;
            check_dim("coupled inequality rows", n_coupled_ineq, b.coupled_ineq.as_ref().map_or(n_coupled_ineq, |g| g.dim_out()))?;
            check_dim("coupled equality rows", n_coupled_eq, b.coupled_eq.as_ref().map_or(n_coupled_eq, |h| h.dim_out()))?;
        }
        Ok(Self { n_coupled_ineq, n_coupled_eq, blocks })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    fn check_point(&self, x: &BlockVector) -> Result<(), ModelError> {
        check_dim("block count", self.blocks.len(), x.block_count())?;
        for (b, xi) in self.blocks.iter().zip(x.blocks()) {
            check_dim("block variable", b.dim(), xi.len())?;
        }
        Ok(())
    }

    pub fn objective(&self, x: &BlockVector) -> Result<f64, ModelError> {
        self.check_point(x)?;
        Ok(self.blocks.iter().zip(x.blocks()).map(|(b, xi)| b.objective.value(xi)).sum())
    }

    /// `(Σ g̃_i(x_i), Σ h̃_i(x_i))`, summed in block order.
    pub fn coupling_sums(&self, x: &BlockVector) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        self.check_point(x)?;
        let mut g = vec![0.0; self.n_coupled_ineq];
        let mut h = vec![0.0; self.n_coupled_eq];
        for (b, xi) in self.blocks.iter().zip(x.blocks()) {
            if let Some(o) = &b.coupled_ineq {
                for (acc, v) in g.iter_mut().zip(o.eval(xi)) {
                    *acc += v;
                }
            }
            if let Some(o) = &b.coupled_eq {
                for (acc, v) in h.iter_mut().zip(o.eval(xi)) {
                    *acc += v;
                }
            }
        }
        Ok((g, h))
    }

    /// `mean_ineq`/`max_ineq` describe the summed coupling inequality (and any
    /// block-local inequality); `max_eq` is `‖Σ h̃_i‖∞`.
    pub fn violation_metrics(&self, x: &BlockVector) -> Result<ViolationMetrics, ModelError> {
        let (g, h) = self.coupling_sums(x)?;
        let coupled_ineq = max_pos(&g);
        let mut local: f64 = 0.0;
        for (b, xi) in self.blocks.iter().zip(x.blocks()) {
            if let Some(o) = &b.local_ineq {
                local = local.max(max_pos(&o.eval(xi)));
            }
        }
        let max_eq = max_abs(&h);
        Ok(ViolationMetrics {
            mean_ineq: coupled_ineq,
            max_ineq: coupled_ineq.max(local),
            max_eq,
            coupling: coupled_ineq.max(max_eq),
        })
    }
}

#[derive(Clone)]
pub struct SddBlock {
    pub set: BoxSet,
    pub objective: Func,
    pub coupled_ineq: Option<VecFunc>,
    /// `A_i` with `m̃` rows.
    pub coupled_eq: Option<Matrix>,
    pub local_ineq: Option<VecFunc>,
}

/// Coupling-constraint problem with affine coupled equality `Σ A_i x_i + b = 0`.
#[derive(Clone)]
pub struct ProblemSDD {
    pub n_coupled_ineq: usize,
    pub offset: Vector,
    pub blocks: Vec<SddBlock>,
}

impl ProblemSDD {
    pub fn new(n_coupled_ineq: usize, offset: Vector, blocks: Vec<SddBlock>) -> Result<Self, ModelError> {
        let p = Self { n_coupled_ineq, offset, blocks };
        for b in &p.blocks {
            if let Some(a) = &b.coupled_eq {
                check_dim("A_i rows", p.offset.len(), a.nrows())?;
                check_dim("A_i columns", b.set.dim(), a.ncols())?;
            }
        }
        p.to_dd()?;
        Ok(p)
    }

    pub fn n_coupled_eq(&self) -> usize {
        self.offset.len()
    }

    /// Equivalent coupling-constraint problem with `h̃_i(x_i) = A_i x_i + b/I`.
    pub fn to_dd(&self) -> Result<ProblemDD, ModelError> {
        let share = if self.blocks.is_empty() { self.offset.clone() } else { &self.offset / self.blocks.len() as f64 };
        let m = self.n_coupled_eq();
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let a = b.coupled_eq.clone().unwrap_or_else(|| Matrix::zeros(m, b.set.dim()));
                DdBlock {
                    set: b.set.clone(),
                    objective: b.objective.clone(),
                    coupled_ineq: b.coupled_ineq.clone(),
                    coupled_eq: (m > 0).then(|| Arc::new(AffineMap { a, b: share.clone() }) as VecFunc),
                    local_ineq: b.local_ineq.clone(),
                    solver: None,
                }
            })
            .collect();
        ProblemDD::new(self.n_coupled_ineq, m, blocks)
    }

    pub fn objective(&self, x: &BlockVector) -> Result<f64, ModelError> {
        self.to_dd()?.objective(x)
    }

    pub fn violation_metrics(&self, x: &BlockVector) -> Result<ViolationMetrics, ModelError> {
        self.to_dd()?.violation_metrics(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(f: fn(f64) -> f64, df: fn(f64) -> f64) -> Func {
        FnOracle::new(1, move |x| f(x[0]), move |x| vec![df(x[0])]).shared()
    }

    #[test]
    fn objective_sums_master_and_blocks() {
        let f1 = FnOracle::new(2, |z| z[0], |_| vec![1.0, 0.0]).shared();
        let p = ProblemPD::new(BoxSet::unbounded(1), vec![PdBlock::new(BoxSet::unbounded(1), f1)])
            .unwrap()
            .with_master_objective(scalar(|y| y * y, |y| 2.0 * y))
            .unwrap();
        let v = p.objective(&BlockVector::new(vec![vec![2.0]]), &[3.0]).unwrap();
        assert_eq!(v, 11.0);
    }

    #[test]
    fn zero_oracles_give_zero() {
        let blocks = (0..2).map(|_| PdBlock::new(BoxSet::unbounded(1), FnOracle::zero(2).shared())).collect();
        let p = ProblemPD::new(BoxSet::unbounded(1), blocks).unwrap();
        assert_eq!(p.objective(&BlockVector::new(vec![vec![1.0], vec![-4.0]]), &[7.0]).unwrap(), 0.0);
    }

    #[test]
    fn objective_rejects_bad_dimension() {
        let p = ProblemPD::new(BoxSet::unbounded(1), vec![PdBlock::new(BoxSet::unbounded(1), FnOracle::zero(2).shared())]).unwrap();
        assert!(matches!(
            p.objective(&BlockVector::new(vec![vec![1.0, 2.0]]), &[0.0]),
            Err(ModelError::Dimension { .. })
        ));
    }

    #[test]
    fn one_violating_block_out_of_ten() {
        let blocks = (0..10)
            .map(|i| {
                let g = if i == 3 { 0.5 } else { -1.0 };
                let mut b = PdBlock::new(BoxSet::unbounded(1), FnOracle::zero(2).shared());
                b.coupled_ineq = Some(FnVectorOracle::scalar(2, move |_| g, |_| vec![0.0, 0.0]).shared());
                b
            })
            .collect();
        let p = ProblemPD::new(BoxSet::unbounded(1), blocks).unwrap();
        let x = BlockVector::new(vec![vec![0.0]; 10]);
        let m = p.violation_metrics(&x, &[0.0]).unwrap();
        assert!((m.mean_ineq - 0.05).abs() < 1e-15);
        assert_eq!(m.max_ineq, 0.5);
        assert_eq!(m.max_eq, 0.0);
    }

    #[test]
    fn strictly_feasible_point_has_no_violation() {
        let mut b = DdBlock::new(BoxSet::uniform(1, -1.0, 1.0).unwrap(), scalar(|x| x, |_| 1.0));
        b.coupled_ineq = Some(FnVectorOracle::scalar(1, |x| x[0] - 2.0, |_| vec![1.0]).shared());
        let p = ProblemDD::new(1, 0, vec![b]).unwrap();
        let m = p.violation_metrics(&BlockVector::new(vec![vec![0.5]])).unwrap();
        assert_eq!(m, ViolationMetrics::default());
    }

    #[test]
    fn infinite_bounds_do_not_clamp() {
        let b = BoxSet::new(vec![-1.0, f64::NEG_INFINITY], vec![1.0, f64::INFINITY]).unwrap();
        assert_eq!(b.project(&[3.0, -1e300]), vec![1.0, -1e300]);
        assert!(BoxSet::new(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn affine_equality_matches_wrapped_oracle() {
        let c = LinearCoupling::new(
            Matrix::from_row_slice(1, 2, &[1.0, -2.0]),
            Matrix::from_row_slice(1, 1, &[3.0]),
            Vector::from_vec(vec![0.5]),
        )
        .unwrap();
        assert_eq!(c.as_oracle().eval(&[1.0, 1.0, 2.0]), vec![1.0 - 2.0 + 6.0 + 0.5]);
    }
}
