//! Coupling-constraint examples: scalar blocks `x_i ∈ [-0.05, 0.05]` with objective
//! `Σ_j a_j x_i^(j+s)` and coupled constraint `Σ_i (Σ_j b_j x_i^j + b/I)`, either
//! `= 0` or `≤ 0`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dd::DdBlockSolver;
use crate::model::{BlockVector, BoxSet, DdBlock, FnOracle, FnVectorOracle, ProblemDD, ProblemSDD, SddBlock, Vector};
use crate::poly::{basin_minimizer, stationary_points, Poly};
use crate::rng;
use crate::sdd::{SddApprox, SddApproxBuilder, SddBlockApprox, SddError};

use super::{ConstraintKind, ExampleError, STREAM_BLOCK, STREAM_GLOBAL};

pub const X_LO: f64 = -0.05;
pub const X_HI: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableBlockParams {
    /// `a[j]` multiplies `x^(j+1+s)`.
    pub a: [f64; 3],
    /// `b[j]` multiplies `x^(j+1)` in the constraint.
    pub b: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableParams {
    /// Constraint offset `b`, shared equally by the blocks.
    pub offset: f64,
    pub blocks: Vec<SeparableBlockParams>,
}

impl SeparableBlockParams {
    pub fn objective_poly(&self, shift: u32) -> Poly {
        let mut c = vec![0.0; 4 + shift as usize];
        for j in 0..3 {
            c[j + 1 + shift as usize] = self.a[j];
        }
        Poly::new(c)
    }

    pub fn constraint_poly(&self, share: f64) -> Poly {
        Poly::new(vec![share, self.b[0], self.b[1], self.b[2]])
    }
}

fn oracle(p: Poly) -> FnOracle {
    let d = p.derivative();
    FnOracle::new(1, move |x| p.eval(x[0]), move |x| vec![d.eval(x[0])])
}

fn vector_oracle(p: Poly) -> FnVectorOracle {
    let d = p.derivative();
    FnVectorOracle::scalar(1, move |x| p.eval(x[0]), move |x| vec![d.eval(x[0])])
}

impl SeparableParams {
    pub(super) fn sample(blocks: usize, seed: u64, kind: ConstraintKind) -> Self {
        let mut g = rng::stream(seed, &[STREAM_GLOBAL]);
        let offset = match kind {
            ConstraintKind::Equality => g.sample(Normal::new(0.0, 0.001).expect("valid normal")),
            ConstraintKind::Inequality => -g.random_range(0.0..0.001),
        };
        let blocks = (0..blocks)
            .map(|i| {
                let mut r = rng::stream(seed, &[STREAM_BLOCK, i as u64]);
                let mut n = || r.sample::<f64, _>(StandardNormal);
                SeparableBlockParams { a: [n(), n(), n()], b: [n(), n(), n()] }
            })
            .collect();
        Self { offset, blocks }
    }

    pub fn share(&self) -> f64 {
        self.offset / self.blocks.len().max(1) as f64
    }

    fn block_set() -> BoxSet {
        BoxSet::uniform(1, X_LO, X_HI).expect("valid box")
    }

    pub(super) fn dd_problem(&self, shift: u32, kind: ConstraintKind) -> Result<ProblemDD, ExampleError> {
        let share = self.share();
        let blocks = self
            .blocks
            .iter()
            .map(|p| {
                let f = p.objective_poly(shift);
                let c = p.constraint_poly(share);
                let mut b = DdBlock::new(Self::block_set(), oracle(f.clone()).shared());
                let g = vector_oracle(c.clone()).shared();
                match kind {
                    ConstraintKind::Equality => b.coupled_eq = Some(g),
                    ConstraintKind::Inequality => b.coupled_ineq = Some(g),
                }
                b.solver = Some(Arc::new(PolynomialDdSolver { objective: f, constraint: c, kind }));
                b
            })
            .collect();
        let (m_ineq, m_eq) = match kind {
            ConstraintKind::Equality => (0, 1),
            ConstraintKind::Inequality => (1, 0),
        };
        Ok(ProblemDD::new(m_ineq, m_eq, blocks)?)
    }

    pub(super) fn sdd_problem(&self, shift: u32) -> Result<ProblemSDD, ExampleError> {
        let share = self.share();
        let blocks = self
            .blocks
            .iter()
            .map(|p| SddBlock {
                set: Self::block_set(),
                objective: oracle(p.objective_poly(shift)).shared(),
                coupled_ineq: Some(vector_oracle(p.constraint_poly(share)).shared()),
                coupled_eq: None,
                local_ineq: None,
            })
            .collect();
        Ok(ProblemSDD::new(1, Vector::zeros(0), blocks)?)
    }
}

/// Partial-Lagrangian solver `f + w·c` for a single weighted coupled constraint.
#[derive(Debug, Clone)]
pub struct PolynomialDdSolver {
    pub objective: Poly,
    pub constraint: Poly,
    pub kind: ConstraintKind,
}

impl PolynomialDdSolver {
    pub fn lagrangian(&self, mu: &[f64], lambda: &[f64]) -> Poly {
        let w = match self.kind {
            ConstraintKind::Equality => lambda[0],
            ConstraintKind::Inequality => mu[0],
        };
        &self.objective + &(&self.constraint * w)
    }
}

impl DdBlockSolver for PolynomialDdSolver {
    fn candidates(&self, mu: &[f64], lambda: &[f64]) -> Vec<Vec<f64>> {
        stationary_points(&self.lagrangian(mu, lambda), X_LO, X_HI).into_iter().map(|x| vec![x]).collect()
    }

    fn tracked(&self, mu: &[f64], lambda: &[f64], warm: &[f64]) -> Option<Vec<f64>> {
        Some(vec![basin_minimizer(&self.lagrangian(mu, lambda), X_LO, X_HI, warm[0])])
    }
}

/// Convex quadratic objective and constraint approximations of one block around `x(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSurrogates {
    pub objective: Poly,
    pub constraint: Poly,
}

/// Curvature-split approximation for the cubic objective (shift 0): the cubic term is
/// linearized, a convex quadratic term is kept and a concave one is linearized with a
/// proximal term `τ/2 (x − x(k))²`.
fn split_objective(p: &SeparableBlockParams, xk: f64, tau: f64) -> Poly {
    let [a1, a2, a3] = p.a;
    let mut c = [-3.0 * a3 * xk.powi(3), 3.0 * a3 * xk * xk + a1, 0.0];
    if a2 <= 0.0 {
        c[2] += 0.5 * tau;
        c[1] += -tau * xk + 2.0 * a2 * xk;
        c[0] += 0.5 * tau * xk * xk - 2.0 * a2 * xk * xk;
    } else {
        c[2] += a2;
    }
    Poly::new(c.to_vec())
}

/// `f'(x(k))(x − x(k)) + τ/2 (x − x(k))²`.
fn proximal_objective(p: &SeparableBlockParams, shift: u32, xk: f64, tau: f64) -> Poly {
    let d = p.objective_poly(shift).derivative().eval(xk);
    Poly::new(vec![-d * xk + 0.5 * tau * xk * xk, d - tau * xk, 0.5 * tau])
}

/// Convex majorant of the cubic constraint: the cubic term is linearized with an
/// `L/2 (x − x(k))²` allowance, the quadratic term is kept if convex and linearized
/// otherwise. It majorizes on the box whenever `L ≥ 0.3·|b3|`.
pub fn constraint_majorant(p: &SeparableBlockParams, share: f64, xk: f64, l: f64) -> Poly {
    let [b1, b2, b3] = p.b;
    let mut c = [-2.0 * b3 * xk.powi(3) + 0.5 * l * xk * xk + share, 3.0 * b3 * xk * xk - l * xk + b1, 0.5 * l];
    if b2 <= 0.0 {
        c[1] += 2.0 * b2 * xk;
        c[0] -= b2 * xk * xk;
    } else {
        c[2] += b2;
    }
    Poly::new(c.to_vec())
}

pub fn sdd_surrogates(p: &SeparableBlockParams, shift: u32, share: f64, xk: f64, tau: f64, l: f64) -> QuadraticSurrogates {
    let objective = if shift == 0 { split_objective(p, xk, tau) } else { proximal_objective(p, shift, xk, tau) };
    QuadraticSurrogates { objective, constraint: constraint_majorant(p, share, xk, l) }
}

/// Minimizer of the quadratic `c2 x² + c1 x + c0` (with `c2 ≥ 0`) over the block box.
pub fn clamped_vertex(c2: f64, c1: f64) -> f64 {
    if c2 > 0.0 {
        (-c1 / (2.0 * c2)).clamp(X_LO, X_HI)
    } else if c1 > 0.0 {
        X_LO
    } else if c1 < 0.0 {
        X_HI
    } else {
        0.0
    }
}

fn coeff(p: &Poly, k: usize) -> f64 {
    p.coeffs().get(k).copied().unwrap_or(0.0)
}

impl SddBlockApprox for QuadraticSurrogates {
    fn solve(&self, mu: &[f64], a_t_lambda: &[f64]) -> Vec<f64> {
        let w = mu.first().copied().unwrap_or(0.0);
        let lin = a_t_lambda.first().copied().unwrap_or(0.0);
        let c2 = coeff(&self.objective, 2) + w * coeff(&self.constraint, 2);
        let c1 = coeff(&self.objective, 1) + w * coeff(&self.constraint, 1) + lin;
        vec![clamped_vertex(c2, c1)]
    }
    fn objective(&self, x: &[f64]) -> f64 {
        self.objective.eval(x[0])
    }
    fn coupled_ineq(&self, x: &[f64]) -> Vec<f64> {
        vec![self.constraint.eval(x[0])]
    }
}

#[derive(Debug, Clone)]
pub struct SeparableSddBuilder {
    pub params: Arc<SeparableParams>,
    pub shift: u32,
    pub tau: f64,
    pub curvature_l: f64,
}

impl SddApproxBuilder for SeparableSddBuilder {
    fn build(&self, x: &BlockVector) -> Result<SddApprox, SddError> {
        if !(self.tau > 0.0) || self.curvature_l < 0.0 {
            return Err(SddError::SpecViolation("tau must be positive and L nonnegative"));
        }
        let share = self.params.share();
        let blocks = self
            .params
            .blocks
            .iter()
            .zip(x.blocks())
            .map(|(p, xi)| {
                Arc::new(sdd_surrogates(p, self.shift, share, xi[0], self.tau, self.curvature_l)) as Arc<dyn SddBlockApprox>
            })
            .collect();
        Ok(SddApprox { blocks })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block() -> SeparableBlockParams {
        SeparableBlockParams { a: [0.3, -0.8, 1.7], b: [-0.4, 0.9, -0.2] }
    }

    #[test]
    fn pure_quadratic_lagrangian_has_the_vertex() {
        let s = PolynomialDdSolver {
            objective: SeparableBlockParams { a: [0.0, 1.0, 0.0], b: [0.0; 3] }.objective_poly(0),
            constraint: Poly::new(vec![0.0]),
            kind: ConstraintKind::Equality,
        };
        assert_eq!(s.candidates(&[], &[0.0]), vec![vec![0.0]]);
    }

    #[test]
    fn surrogates_match_gradient_at_anchor() {
        let p = block();
        for shift in [0, 2] {
            let s = sdd_surrogates(&p, shift, -1e-4, 0.02, 0.5, 0.1);
            let df = p.objective_poly(shift).derivative().eval(0.02);
            assert!((s.objective.derivative().eval(0.02) - df).abs() < 1e-12);
            let g = p.constraint_poly(-1e-4);
            assert!((s.constraint.eval(0.02) - g.eval(0.02)).abs() < 1e-15);
            assert!((s.constraint.derivative().eval(0.02) - g.derivative().eval(0.02)).abs() < 1e-12);
        }
    }

    #[test]
    fn convex_quadratic_term_is_kept() {
        let p = SeparableBlockParams { a: [0.1, 2.0, 0.0], b: [0.0; 3] };
        let f = split_objective(&p, 0.01, 7.0);
        assert_eq!(coeff(&f, 2), 2.0);
    }

    #[test]
    fn zero_duals_give_the_objective_vertex() {
        let s = QuadraticSurrogates { objective: Poly::new(vec![0.0, 0.01, 1.0]), constraint: Poly::new(vec![0.0, 1.0]) };
        assert_eq!(s.solve(&[0.0], &[]), vec![-0.005]);
    }
}
