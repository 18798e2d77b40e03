//! KKT residuals, active sets, multiplier recovery and the KKT-Jacobian invertibility probe.
//!
//! Everything here works on the [`Nlp`] view of a problem:
//! `min f(x)` s.t. `g(x) ≤ 0`, `h(x) = 0`, `x ∈ box`.

use nalgebra::SVD;
use thiserror::Error;

use crate::model::{BoxSet, Matrix, Vector};

pub const ACTIVE_TOL: f64 = 1e-7;
pub const RANK_RATIO: f64 = 1e-10;
pub const COND_THRESHOLD: f64 = 1e8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KktError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("multiplier {index} is negative ({value:e}); the KKT system is inconsistent at this point")]
    NegativeMultiplier { index: usize, value: f64 },
    #[error("no valid multipliers: stationarity residual {residual:e} remains")]
    NoMultipliers { residual: f64 },
}

/// Smooth constrained problem seen by the KKT machinery.
pub trait Nlp {
    fn dim(&self) -> usize;
    fn n_ineq(&self) -> usize;
    fn n_eq(&self) -> usize;
    fn objective(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;
    fn ineq(&self, x: &[f64]) -> Vec<f64>;
    fn eq(&self, x: &[f64]) -> Vec<f64>;
    /// `dim × n_ineq`.
    fn ineq_jacobian_t(&self, x: &[f64]) -> Matrix;
    /// `dim × n_eq`.
    fn eq_jacobian_t(&self, x: &[f64]) -> Matrix;
    fn bounds(&self) -> &BoxSet;

    /// `∇f + ∇g μ + ∇h λ`.
    fn lagrangian_gradient(&self, x: &[f64], ineq: &[f64], eq: &[f64]) -> Vector {
        let mut r = Vector::from_vec(self.gradient(x));
        if !ineq.is_empty() {
            r += self.ineq_jacobian_t(x) * Vector::from_column_slice(ineq);
        }
        if !eq.is_empty() {
            r += self.eq_jacobian_t(x) * Vector::from_column_slice(eq);
        }
        r
    }
}

/// Lagrange multipliers attached to a point of an [`Nlp`].
///
/// Problem adapters document how `ineq`/`eq` are ordered; for block subproblems
/// the coupled constraints come first, then the block-local ones. Box-bound
/// multipliers are informational: stationarity is measured in projected form.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MultiplierSet {
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl MultiplierSet {
    pub fn zeros(n_ineq: usize, n_eq: usize, dim: usize) -> Self {
        Self { ineq: vec![0.0; n_ineq], eq: vec![0.0; n_eq], lower: vec![0.0; dim], upper: vec![0.0; dim] }
    }

    pub fn min_ineq(&self) -> f64 {
        self.ineq.iter().chain(&self.lower).chain(&self.upper).copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
    pub tolerance: f64,
}

impl ActiveSet {
    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }
}

/// Indices with `|g_j| ≤ tol` (0-based). Violated constraints are not "active".
pub fn active_set(g: &[f64], tol: f64) -> ActiveSet {
    let indices = g.iter().enumerate().filter(|(_, v)| v.abs() <= tol).map(|(j, _)| j).collect();
    ActiveSet { indices, tolerance: tol }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub complementarity: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
}

impl KktResidual {
    pub fn total(&self) -> f64 {
        self.stationarity.max(self.complementarity).max(self.primal_infeasibility).max(self.dual_infeasibility)
    }
}

fn check(context: &'static str, expected: usize, got: usize) -> Result<(), KktError> {
    if expected == got {
        Ok(())
    } else {
        Err(KktError::Dimension { context, expected, got })
    }
}

fn inf_norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().map(f64::abs).fold(0.0, f64::max)
}

/// Stationarity is `‖x − P_X(x − ∇L(x))‖∞`, which equals `‖∇L‖∞` at interior points.
pub fn kkt_residual<P: Nlp + ?Sized>(nlp: &P, x: &[f64], m: &MultiplierSet) -> Result<KktResidual, KktError> {
    check("point", nlp.dim(), x.len())?;
    check("inequality multipliers", nlp.n_ineq(), m.ineq.len())?;
    check("equality multipliers", nlp.n_eq(), m.eq.len())?;
    let grad = nlp.lagrangian_gradient(x, &m.ineq, &m.eq);
    let step: Vec<f64> = x.iter().zip(grad.iter()).map(|(a, b)| a - b).collect();
    let proj = nlp.bounds().project(&step);
    let stationarity = inf_norm(x.iter().zip(&proj).map(|(a, b)| a - b));
    let g = nlp.ineq(x);
    let h = nlp.eq(x);
    let complementarity = inf_norm(g.iter().zip(&m.ineq).map(|(a, b)| a * b));
    let primal_infeasibility = g
        .iter()
        .map(|v| v.max(0.0))
        .chain(h.iter().map(|v| v.abs()))
        .chain(std::iter::once(nlp.bounds().violation(x)))
        .fold(0.0, f64::max);
    let dual_infeasibility =
        m.ineq.iter().chain(&m.lower).chain(&m.upper).map(|v| (-v).max(0.0)).fold(0.0, f64::max);
    Ok(KktResidual { stationarity, complementarity, primal_infeasibility, dual_infeasibility })
}

/// Multipliers from the KKT linear system at an interior point.
#[derive(Debug, Clone, PartialEq)]
pub struct KktSolve {
    pub multipliers: MultiplierSet,
    /// `‖∇f + ∇g μ + ∇h λ‖∞` at the solution.
    pub linear_residual: f64,
    /// The column space is rank deficient, so the multipliers are not unique.
    pub rank_deficient: bool,
}

fn least_squares(a: &Matrix, b: &Vector) -> (Vector, bool) {
    if a.ncols() == 0 {
        return (Vector::zeros(0), false);
    }
    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let deficient = a.ncols() > a.nrows() || smax == 0.0 || smin / smax < RANK_RATIO;
    let sol = svd.solve(b, smax * RANK_RATIO).unwrap_or_else(|_| Vector::zeros(a.ncols()));
    (sol, deficient)
}

/// Solves `∇g_A μ_A + ∇h λ = −∇f` in the least-squares sense with `μ_j = 0` off the active set.
pub fn solve_kkt_system<P: Nlp + ?Sized>(nlp: &P, x: &[f64], active: &ActiveSet) -> Result<KktSolve, KktError> {
    check("point", nlp.dim(), x.len())?;
    let n = nlp.dim();
    let jg = nlp.ineq_jacobian_t(x);
    let jh = nlp.eq_jacobian_t(x);
    let cols: Vec<usize> = active.indices.iter().copied().filter(|&j| j < nlp.n_ineq()).collect();
    let mut a = Matrix::zeros(n, cols.len() + nlp.n_eq());
    for (c, &j) in cols.iter().enumerate() {
        a.set_column(c, &jg.column(j));
    }
    for j in 0..nlp.n_eq() {
        a.set_column(cols.len() + j, &jh.column(j));
    }
    let grad = Vector::from_vec(nlp.gradient(x));
    let (sol, rank_deficient) = least_squares(&a, &(-&grad));
    let mut m = MultiplierSet::zeros(nlp.n_ineq(), nlp.n_eq(), n);
    for (c, &j) in cols.iter().enumerate() {
        let v = sol[c];
        if v < -1e-8 {
            return Err(KktError::NegativeMultiplier { index: j, value: v });
        }
        m.ineq[j] = v.max(0.0);
    }
    for j in 0..nlp.n_eq() {
        m.eq[j] = sol[cols.len() + j];
    }
    let linear_residual = inf_norm(nlp.lagrangian_gradient(x, &m.ineq, &m.eq).iter().copied());
    Ok(KktSolve { multipliers: m, linear_residual, rank_deficient })
}

/// Nonnegative least squares `min ‖A z − b‖` with `z_j ≥ 0` where `nonneg[j]`
/// (Lawson–Hanson, free variables kept in the passive set).
pub fn nnls(a: &Matrix, b: &Vector, nonneg: &[bool]) -> Vector {
    let n = a.ncols();
    let mut z = Vector::zeros(n);
    if n == 0 {
        return z;
    }
    let mut passive: Vec<bool> = nonneg.iter().map(|&c| !c).collect();
    let solve_passive = |passive: &[bool]| -> Vector {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let mut out = Vector::zeros(n);
        if idx.is_empty() {
            return out;
        }
        let sub = Matrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
        let (s, _) = least_squares(&sub, b);
        for (c, &j) in idx.iter().enumerate() {
            out[j] = s[c];
        }
        out
    };
    z = solve_passive(&passive);
    let scale = a.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0) * b.amax().max(1.0);
    for _ in 0..(3 * n + 10) {
        let w = a.transpose() * (b - a * &z);
        let cand = (0..n).filter(|&j| nonneg[j] && !passive[j] && w[j] > 1e-13 * scale).max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = cand else { break };
        passive[j] = true;
        for _ in 0..(3 * n + 10) {
            let s = solve_passive(&passive);
            let bad: Vec<usize> = (0..n).filter(|&k| passive[k] && nonneg[k] && s[k] <= 0.0).collect();
            if bad.is_empty() {
                z = s;
                break;
            }
            let alpha = bad.iter().map(|&k| z[k] / (z[k] - s[k])).fold(f64::INFINITY, f64::min).clamp(0.0, 1.0);
            z += (s - &z) * alpha;
            for k in 0..n {
                if passive[k] && nonneg[k] && z[k] <= 1e-15 {
                    passive[k] = false;
                    z[k] = 0.0;
                }
            }
        }
    }
    z
}

fn active_bounds(bounds: &BoxSet, x: &[f64], tol: f64) -> (Vec<usize>, Vec<usize>) {
    let lower = (0..x.len()).filter(|&j| bounds.lower()[j].is_finite() && x[j] - bounds.lower()[j] <= tol).collect();
    let upper = (0..x.len()).filter(|&j| bounds.upper()[j].is_finite() && bounds.upper()[j] - x[j] <= tol).collect();
    (lower, upper)
}

/// Multipliers at a feasible point, treating active box bounds as explicit inequalities.
///
/// Interior points delegate to [`solve_kkt_system`]. Otherwise a nonnegative least
/// squares problem over the active inequalities and bounds is solved.
pub fn solve_kkt_conditions<P: Nlp + ?Sized>(nlp: &P, x: &[f64]) -> Result<MultiplierSet, KktError> {
    check("point", nlp.dim(), x.len())?;
    let g = nlp.ineq(x);
    let active = active_set(&g, ACTIVE_TOL);
    let (lo, up) = active_bounds(nlp.bounds(), x, ACTIVE_TOL);
    let tol = 1e-8 * inf_norm(nlp.gradient(x)).max(1.0);
    if lo.is_empty() && up.is_empty() {
        if let Ok(s) = solve_kkt_system(nlp, x, &active) {
            if s.linear_residual <= tol {
                return Ok(s.multipliers);
            }
        }
    }
    let m = fit_multipliers(nlp, x, ACTIVE_TOL);
    let r = kkt_residual(nlp, x, &m)?;
    if r.stationarity > tol {
        return Err(KktError::NoMultipliers { residual: r.stationarity });
    }
    Ok(m)
}

/// Best-fit multipliers at an arbitrary point: nonnegative least squares over the
/// inequalities and bounds within `band` of being active. Never fails; the caller
/// judges the result through [`kkt_residual`].
pub fn fit_multipliers<P: Nlp + ?Sized>(nlp: &P, x: &[f64], band: f64) -> MultiplierSet {
    let n = nlp.dim();
    let g = nlp.ineq(x);
    let near: Vec<usize> = (0..g.len()).filter(|&j| g[j] >= -band).collect();
    let (lo, up) = active_bounds(nlp.bounds(), x, band);
    let grad = Vector::from_vec(nlp.gradient(x));
    let jg = nlp.ineq_jacobian_t(x);
    let jh = nlp.eq_jacobian_t(x);
    let cols = near.len() + nlp.n_eq() + lo.len() + up.len();
    let mut a = Matrix::zeros(n, cols);
    let mut nonneg = Vec::with_capacity(cols);
    let mut c = 0;
    for &j in &near {
        a.set_column(c, &jg.column(j));
        nonneg.push(true);
        c += 1;
    }
    for j in 0..nlp.n_eq() {
        a.set_column(c, &jh.column(j));
        nonneg.push(false);
        c += 1;
    }
    for &j in &lo {
        a[(j, c)] = -1.0;
        nonneg.push(true);
        c += 1;
    }
    for &j in &up {
        a[(j, c)] = 1.0;
        nonneg.push(true);
        c += 1;
    }
    let z = nnls(&a, &(-&grad), &nonneg);
    let mut m = MultiplierSet::zeros(nlp.n_ineq(), nlp.n_eq(), n);
    let mut c = 0;
    for &j in &near {
        m.ineq[j] = z[c];
        c += 1;
    }
    for j in 0..nlp.n_eq() {
        m.eq[j] = z[c];
        c += 1;
    }
    for &j in &lo {
        m.lower[j] = z[c];
        c += 1;
    }
    for &j in &up {
        m.upper[j] = z[c];
        c += 1;
    }
    m
}

/// Finite-difference step used throughout the crate.
pub fn fd_step(v: f64) -> f64 {
    1e-6 * v.abs().max(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianProbe {
    pub invertible: bool,
    pub condition: f64,
}

/// Condition estimate of the Jacobian of the KKT function
/// `k(x, μ, λ) = [∇_x L; η(μ, g); h]`, where `η_j = g_j` for constraints active at
/// `x` and `η_j = μ_j` otherwise. Second derivatives come from central
/// differences of the analytic gradients.
pub fn kkt_jacobian_invertible<P: Nlp + ?Sized>(nlp: &P, x: &[f64], m: &MultiplierSet, threshold: f64) -> JacobianProbe {
    let (n, p, q) = (nlp.dim(), nlp.n_ineq(), nlp.n_eq());
    let active = active_set(&nlp.ineq(x), ACTIVE_TOL);
    let size = n + p + q;
    let mut jac = Matrix::zeros(size, size);
    let kfun = |xs: &[f64]| -> Vector {
        let mut out = Vector::zeros(size);
        out.rows_mut(0, n).copy_from(&nlp.lagrangian_gradient(xs, &m.ineq, &m.eq));
        let g = nlp.ineq(xs);
        for j in 0..p {
            out[n + j] = if active.contains(j) { g[j] } else { m.ineq[j] };
        }
        for (j, v) in nlp.eq(xs).into_iter().enumerate() {
            out[n + p + j] = v;
        }
        out
    };
    for c in 0..n {
        let h = fd_step(x[c]);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += h;
        xm[c] -= h;
        let col = (kfun(&xp) - kfun(&xm)) / (2.0 * h);
        jac.set_column(c, &col);
    }
    let jg = nlp.ineq_jacobian_t(x);
    let jh = nlp.eq_jacobian_t(x);
    for j in 0..p {
        jac.view_mut((0, n + j), (n, 1)).copy_from(&jg.column(j));
        if !active.contains(j) {
            jac[(n + j, n + j)] = 1.0;
        }
    }
    for j in 0..q {
        jac.view_mut((0, n + p + j), (n, 1)).copy_from(&jh.column(j));
    }
    let sv = jac.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin == 0.0 { f64::INFINITY } else { smax / smin };
    JacobianProbe { invertible: condition < threshold, condition }
}

/// Closure-free [`Nlp`] over scalar/vector oracles, handy for small problems.
pub struct OracleNlp {
    pub objective: crate::model::Func,
    pub ineq: Option<crate::model::VecFunc>,
    pub eq: Option<crate::model::VecFunc>,
    pub bounds: BoxSet,
}

impl Nlp for OracleNlp {
    fn dim(&self) -> usize {
        self.bounds.dim()
    }
    fn n_ineq(&self) -> usize {
        self.ineq.as_ref().map_or(0, |g| g.dim_out())
    }
    fn n_eq(&self) -> usize {
        self.eq.as_ref().map_or(0, |h| h.dim_out())
    }
    fn objective(&self, x: &[f64]) -> f64 {
        self.objective.value(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.objective.gradient(x)
    }
    fn ineq(&self, x: &[f64]) -> Vec<f64> {
        self.ineq.as_ref().map_or_else(Vec::new, |g| g.eval(x))
    }
    fn eq(&self, x: &[f64]) -> Vec<f64> {
        self.eq.as_ref().map_or_else(Vec::new, |h| h.eval(x))
    }
    fn ineq_jacobian_t(&self, x: &[f64]) -> Matrix {
        self.ineq.as_ref().map_or_else(|| Matrix::zeros(self.dim(), 0), |g| g.jacobian_t(x))
    }
    fn eq_jacobian_t(&self, x: &[f64]) -> Matrix {
        self.eq.as_ref().map_or_else(|| Matrix::zeros(self.dim(), 0), |h| h.jacobian_t(x))
    }
    fn bounds(&self) -> &BoxSet {
        &self.bounds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnOracle, FnVectorOracle};

    fn nlp1(
        f: fn(f64) -> f64,
        df: fn(f64) -> f64,
        h: Option<(fn(f64) -> f64, fn(f64) -> f64)>,
        bounds: BoxSet,
    ) -> OracleNlp {
        OracleNlp {
            objective: FnOracle::new(1, move |x| f(x[0]), move |x| vec![df(x[0])]).shared(),
            ineq: None,
            eq: h.map(|(h, dh)| FnVectorOracle::scalar(1, move |x| h(x[0]), move |x| vec![dh(x[0])]).shared()),
            bounds,
        }
    }

    #[test]
    fn active_set_band() {
        assert_eq!(active_set(&[-1.0, 0.0, -1e-12], 1e-8).indices, vec![1, 2]);
        assert!(active_set(&[-1.0, -1.0], 0.5).indices.is_empty());
        assert!(active_set(&[0.5], 1e-8).indices.is_empty());
    }

    #[test]
    fn residual_zero_at_unconstrained_minimum() {
        let p = nlp1(|x| (x - 1.0).powi(2), |x| 2.0 * (x - 1.0), None, BoxSet::unbounded(1));
        let r = kkt_residual(&p, &[1.0], &MultiplierSet::zeros(0, 0, 1)).unwrap();
        assert_eq!(r, KktResidual::default());
    }

    #[test]
    fn projected_form_handles_bound() {
        let p = nlp1(|x| x, |_| 1.0, None, BoxSet::uniform(1, 0.0, 1.0).unwrap());
        let mut m = MultiplierSet::zeros(0, 0, 1);
        m.lower[0] = 1.0;
        assert_eq!(kkt_residual(&p, &[0.0], &m).unwrap().total(), 0.0);
    }

    #[test]
    fn kkt_system_equality_multipliers() {
        let p = nlp1(|x| (x - 1.0).powi(2), |x| 2.0 * (x - 1.0), Some((|x| x - 1.0, |_| 1.0)), BoxSet::unbounded(1));
        let s = solve_kkt_system(&p, &[1.0], &active_set(&[], ACTIVE_TOL)).unwrap();
        assert_eq!(s.multipliers.eq, vec![0.0]);
        let p = nlp1(|x| x, |_| 1.0, Some((|x| x, |_| 1.0)), BoxSet::unbounded(1));
        let s = solve_kkt_system(&p, &[0.3], &active_set(&[], ACTIVE_TOL)).unwrap();
        assert!((s.multipliers.eq[0] + 1.0).abs() < 1e-14);
        assert!(!s.rank_deficient);
    }

    #[test]
    fn kkt_system_reports_negative_multiplier() {
        // min x s.t. x ≤ 0 at x = 0 would need μ = -1
        let p = OracleNlp {
            objective: FnOracle::new(1, |x| x[0], |_| vec![1.0]).shared(),
            ineq: Some(FnVectorOracle::scalar(1, |x| x[0], |_| vec![1.0]).shared()),
            eq: None,
            bounds: BoxSet::unbounded(1),
        };
        let e = solve_kkt_system(&p, &[0.0], &active_set(&[0.0], ACTIVE_TOL)).unwrap_err();
        assert!(matches!(e, KktError::NegativeMultiplier { .. }));
    }

    #[test]
    fn bound_multiplier_from_conditions() {
        let p = nlp1(|x| x, |_| 1.0, None, BoxSet::uniform(1, -1.0, 1.0).unwrap());
        let m = solve_kkt_conditions(&p, &[-1.0]).unwrap();
        assert!((m.lower[0] - 1.0).abs() < 1e-14);
        assert_eq!(m.upper[0], 0.0);
        assert!(matches!(solve_kkt_conditions(&p, &[0.0]), Err(KktError::NoMultipliers { .. })));
    }

    #[test]
    fn interior_conditions_match_system() {
        let p = nlp1(|x| x * x + x, |x| 2.0 * x + 1.0, Some((|x| x - 0.25, |_| 1.0)), BoxSet::uniform(1, -1.0, 1.0).unwrap());
        let a = solve_kkt_conditions(&p, &[0.25]).unwrap();
        let b = solve_kkt_system(&p, &[0.25], &active_set(&[], ACTIVE_TOL)).unwrap().multipliers;
        assert_eq!(a, b);
    }

    #[test]
    fn nnls_with_free_variable() {
        // columns: nonneg e1, free e2; target (-1, -2) → z = (0, -2)
        let a = Matrix::identity(2, 2);
        let z = nnls(&a, &Vector::from_vec(vec![-1.0, -2.0]), &[true, false]);
        assert_eq!(z[0], 0.0);
        assert!((z[1] + 2.0).abs() < 1e-14);
    }

    #[test]
    fn jacobian_probe() {
        let sq = nlp1(|x| x * x, |x| 2.0 * x, None, BoxSet::unbounded(1));
        let r = kkt_jacobian_invertible(&sq, &[0.3], &MultiplierSet::zeros(0, 0, 1), COND_THRESHOLD);
        assert!(r.invertible && (r.condition - 1.0).abs() < 1e-12);
        let cube = nlp1(|x| x.powi(3), |x| 3.0 * x * x, None, BoxSet::unbounded(1));
        let r = kkt_jacobian_invertible(&cube, &[0.0], &MultiplierSet::zeros(0, 0, 1), COND_THRESHOLD);
        assert!(!r.invertible);
    }
}
