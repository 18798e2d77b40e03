//! Coupling-variable examples: a scalar `y ∈ [0, 1]` shared by blocks
//! `x_i = (x_i1, x_i2) ∈ [-1, 1] × ℝ`.
//!
//! Block objective `Σ_j A_j(y) x_i1^(j+s) + b1 x_i2 + b2 x_i2²` with
//! `A_j(y) = Σ_l a_jl y^l` and shift `s ∈ {0, 2}`; constraint
//! `-c2 x_i1²/(y+1) + c1 x_i2 + c0`, either `= 0` or `≤ 0`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::kkt::MultiplierSet;
use crate::model::{BoxSet, FnOracle, FnVectorOracle, IsotropicQuadratic, PdBlock, ProblemPD, ProblemSPD, SpdBlock};
use crate::pd::PdBlockSolver;
use crate::poly::{stationary_points, Poly};
use crate::rng;
use crate::spd::{SpdApprox, SpdApproxBuilder, SpdBlockApprox, SpdBlockSolution, SpdError};

use super::{ConstraintKind, ExampleError, STREAM_BLOCK, STREAM_GLOBAL};

const X1_LO: f64 = -1.0;
const X1_HI: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledBlockParams {
    /// `a[j][l]` multiplies `y^l x_1^(j+1+s)`.
    pub a: [[f64; 3]; 3],
    pub b1: f64,
    pub b2: f64,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledParams {
    /// Curvature of the master objective `a (y − y0)²`.
    pub a: f64,
    pub y0: f64,
    pub blocks: Vec<CoupledBlockParams>,
}

/// Which constant the linearized constraint is anchored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorTerm {
    /// Value of the curvature term `-c2 x1²/(y+1)` only; touches the constraint.
    Curvature,
    /// Value of the whole constraint; the affine part `c1 x2 + c0` then appears twice.
    FullConstraint,
}

impl CoupledBlockParams {
    fn coeff(&self, j: usize, y: f64) -> f64 {
        self.a[j][0] + self.a[j][1] * y + self.a[j][2] * y * y
    }

    fn coeff_dy(&self, j: usize, y: f64) -> f64 {
        self.a[j][1] + 2.0 * self.a[j][2] * y
    }

    pub fn objective(&self, shift: u32, x1: f64, x2: f64, y: f64) -> f64 {
        let poly: f64 = (0..3).map(|j| self.coeff(j, y) * x1.powi(j as i32 + 1 + shift as i32)).sum();
        poly + self.b1 * x2 + self.b2 * x2 * x2
    }

    /// `(∂x1, ∂x2, ∂y)`.
    pub fn objective_grad(&self, shift: u32, x1: f64, x2: f64, y: f64) -> [f64; 3] {
        let mut d1 = 0.0;
        let mut dy = 0.0;
        for j in 0..3 {
            let p = j as i32 + 1 + shift as i32;
            d1 += self.coeff(j, y) * p as f64 * x1.powi(p - 1);
            dy += self.coeff_dy(j, y) * x1.powi(p);
        }
        [d1, self.b1 + 2.0 * self.b2 * x2, dy]
    }

    pub fn constraint(&self, x1: f64, x2: f64, y: f64) -> f64 {
        self.curvature_term(x1, y) + self.c1 * x2 + self.c0
    }

    pub fn constraint_grad(&self, x1: f64, y: f64) -> [f64; 3] {
        let s = y + 1.0;
        [-2.0 * self.c2 * x1 / s, self.c1, self.c2 * x1 * x1 / (s * s)]
    }

    fn curvature_term(&self, x1: f64, y: f64) -> f64 {
        -self.c2 * x1 * x1 / (y + 1.0)
    }

    /// `x2` that makes the constraint hold with equality.
    pub fn active_x2(&self, x1: f64, y: f64) -> f64 {
        (self.c2 * x1 * x1 / (y + 1.0) - self.c0) / self.c1
    }

    /// Unconstrained minimizer of `b1 x2 + b2 x2²`.
    fn free_x2(&self) -> f64 {
        -self.b1 / (2.0 * self.b2)
    }

    /// `Σ_j A_j(y) x^(j+1+s)`.
    fn x1_poly(&self, shift: u32, y: f64) -> Poly {
        let mut c = vec![0.0; 4 + shift as usize];
        for j in 0..3 {
            c[j + 1 + shift as usize] = self.coeff(j, y);
        }
        Poly::new(c)
    }

    /// Objective as a polynomial in `x1` with `x2` eliminated through the active constraint.
    fn active_poly(&self, shift: u32, y: f64) -> Poly {
        let x2 = Poly::new(vec![-self.c0 / self.c1, 0.0, self.c2 / ((y + 1.0) * self.c1)]);
        let quad = &(&x2 * &x2) * self.b2;
        &(&self.x1_poly(shift, y) + &(&x2 * self.b1)) + &quad
    }

    /// Candidate stationary points of the block problem at `y`; the global minimizer is
    /// always among them.
    pub fn candidates(&self, shift: u32, kind: ConstraintKind, y: f64) -> Vec<Vec<f64>> {
        let active = self.active_poly(shift, y);
        let mut out: Vec<Vec<f64>> = stationary_points(&active, X1_LO, X1_HI)
            .into_iter()
            .chain([X1_LO, X1_HI])
            .map(|x1| vec![x1, self.active_x2(x1, y)])
            .collect();
        if kind == ConstraintKind::Inequality {
            let free = self.free_x2();
            // the free x2 is feasible where c1·free ≤ c2 x1²/(y+1) − c0
            let feasible = |x1: f64| self.c1 * free <= self.c2 * x1 * x1 / (y + 1.0) - self.c0;
            out.retain(|x| !feasible(x[0]));
            let mut free_x1: Vec<f64> = stationary_points(&self.x1_poly(shift, y), X1_LO, X1_HI);
            free_x1.extend([X1_LO, X1_HI]);
            if self.c2 > 0.0 {
                let sq = (y + 1.0) * (self.c1 * free + self.c0) / self.c2;
                if sq >= 0.0 {
                    free_x1.extend([sq.sqrt(), -sq.sqrt()].into_iter().filter(|x| (X1_LO..=X1_HI).contains(x)));
                }
            }
            out.extend(free_x1.into_iter().filter(|&x1| feasible(x1)).map(|x1| vec![x1, free]));
        }
        out
    }

    /// Value of the block problem at `y` with `x2` chosen optimally for a given `x1`.
    pub fn reduced_objective(&self, shift: u32, kind: ConstraintKind, x1: f64, y: f64) -> f64 {
        let active = self.active_x2(x1, y);
        let x2 = match kind {
            ConstraintKind::Equality => active,
            ConstraintKind::Inequality => {
                let free = self.free_x2();
                if self.c1 * free <= self.c1 * active { free } else { active }
            }
        };
        self.objective(shift, x1, x2, y)
    }

    /// Affine majorant of the constraint anchored at `(x1k, x2k, yk)`, linear in `(x, y)`.
    pub fn constraint_majorant(&self, anchor: [f64; 3], term: AnchorTerm) -> impl Fn(f64, f64, f64) -> f64 + Clone {
        let [x1k, x2k, yk] = anchor;
        let base = match term {
            AnchorTerm::Curvature => self.curvature_term(x1k, yk),
            AnchorTerm::FullConstraint => self.constraint(x1k, x2k, yk),
        };
        let [d1, _, dy] = self.constraint_grad(x1k, yk);
        let (c0, c1) = (self.c0, self.c1);
        move |x1, x2, y| c1 * x2 + c0 + base + d1 * (x1 - x1k) + dy * (y - yk)
    }
}

impl CoupledParams {
    pub(super) fn sample(blocks: usize, seed: u64) -> Self {
        let mut g = rng::stream(seed, &[STREAM_GLOBAL]);
        let a = positive_uniform(&mut g, 5000.0);
        let y0 = g.random::<f64>();
        let blocks = (0..blocks)
            .map(|i| {
                let mut r = rng::stream(seed, &[STREAM_BLOCK, i as u64]);
                let mut normal = || r.sample::<f64, _>(StandardNormal);
                let mut a = [[0.0; 3]; 3];
                for row in &mut a {
                    for v in row.iter_mut() {
                        *v = normal();
                    }
                }
                let b1 = normal();
                let c0 = normal();
                let mut c1 = normal();
                // elimination of x2 needs c1 ≠ 0
                while c1 == 0.0 {
                    c1 = normal();
                }
                let c2 = normal().abs();
                let b2 = positive_uniform(&mut r, 5000.0);
                CoupledBlockParams { a, b1, b2, c0, c1, c2 }
            })
            .collect();
        Self { a, y0, blocks }
    }

    pub(super) fn validate(&self) -> Result<(), ExampleError> {
        if !(self.a > 0.0) {
            return Err(ExampleError::DegenerateParams { block: None, reason: "master curvature must be positive" });
        }
        for (i, b) in self.blocks.iter().enumerate() {
            if b.c1 == 0.0 {
                return Err(ExampleError::DegenerateParams { block: Some(i), reason: "c1 must be nonzero" });
            }
            if !(b.b2 > 0.0) || b.c2 < 0.0 {
                return Err(ExampleError::DegenerateParams { block: Some(i), reason: "b2 > 0 and c2 ≥ 0 required" });
            }
        }
        Ok(())
    }

    fn master_oracle(&self) -> FnOracle {
        let (a, y0) = (self.a, self.y0);
        FnOracle::new(1, move |y| a * (y[0] - y0).powi(2), move |y| vec![2.0 * a * (y[0] - y0)])
    }

    fn block_set() -> BoxSet {
        BoxSet::new(vec![X1_LO, f64::NEG_INFINITY], vec![X1_HI, f64::INFINITY]).expect("valid box")
    }

    fn coupling_set() -> BoxSet {
        BoxSet::uniform(1, 0.0, 1.0).expect("valid box")
    }

    fn objective_oracle(p: &CoupledBlockParams, shift: u32) -> FnOracle {
        let (pv, pg) = (p.clone(), p.clone());
        FnOracle::new(
            3,
            move |z| pv.objective(shift, z[0], z[1], z[2]),
            move |z| pg.objective_grad(shift, z[0], z[1], z[2]).to_vec(),
        )
    }

    fn constraint_oracle(p: &CoupledBlockParams) -> FnVectorOracle {
        let (pv, pg) = (p.clone(), p.clone());
        FnVectorOracle::scalar(3, move |z| pv.constraint(z[0], z[1], z[2]), move |z| pg.constraint_grad(z[0], z[2]).to_vec())
    }

    pub(super) fn pd_problem(&self, shift: u32, kind: ConstraintKind) -> Result<ProblemPD, ExampleError> {
        let blocks = self
            .blocks
            .iter()
            .map(|p| {
                let mut b = PdBlock::new(Self::block_set(), Self::objective_oracle(p, shift).shared());
                let g = Self::constraint_oracle(p).shared();
                match kind {
                    ConstraintKind::Equality => b.coupled_eq = Some(g),
                    ConstraintKind::Inequality => b.coupled_ineq = Some(g),
                }
                b.solver = Some(Arc::new(CoupledPdSolver { params: p.clone(), shift, kind }));
                b
            })
            .collect();
        let mut problem = ProblemPD::new(Self::coupling_set(), blocks)?.with_master_objective(self.master_oracle().shared())?;
        problem.master_quadratic = Some(IsotropicQuadratic { curvature: self.a, center: vec![self.y0] });
        Ok(problem)
    }

    pub(super) fn spd_problem(&self, shift: u32) -> Result<ProblemSPD, ExampleError> {
        let blocks = self
            .blocks
            .iter()
            .map(|p| SpdBlock {
                set: Self::block_set(),
                objective: Self::objective_oracle(p, shift).shared(),
                coupled_ineq: Some(Self::constraint_oracle(p).shared()),
                coupled_eq: None,
                local_ineq: None,
            })
            .collect();
        Ok(ProblemSPD::new(Self::coupling_set(), Some(self.master_oracle().shared()), blocks)?)
    }
}

fn positive_uniform(r: &mut impl Rng, hi: f64) -> f64 {
    loop {
        let v = r.random_range(0.0..hi);
        if v > 0.0 {
            return v;
        }
    }
}

/// Exact block solver: enumerates the stationary points of the block objective with
/// `x2` eliminated.
#[derive(Debug, Clone)]
pub struct CoupledPdSolver {
    pub params: CoupledBlockParams,
    pub shift: u32,
    pub kind: ConstraintKind,
}

impl PdBlockSolver for CoupledPdSolver {
    fn candidates(&self, y: &[f64]) -> Vec<Vec<f64>> {
        self.params.candidates(self.shift, self.kind, y[0])
    }
}

/// Convex approximation for the inequality-coupled variants.
///
/// `F_{i,x}` keeps the exact `x2` part and linearizes `x1` with a proximal term;
/// `F_{i,y}` is linear plus `τ_y/2 (y − y(k))²`; the constraint is the touching
/// linearization from [`CoupledBlockParams::constraint_majorant`].
#[derive(Debug, Clone)]
pub struct CoupledSpdBuilder {
    pub params: Arc<CoupledParams>,
    pub shift: u32,
    pub tau_x: f64,
    pub tau_y: f64,
}

#[derive(Debug, Clone)]
struct CoupledSpdBlock {
    b1: f64,
    b2: f64,
    c1: f64,
    x1k: f64,
    yk: f64,
    tau_x: f64,
    tau_y: f64,
    /// Polynomial part of the objective at the anchor.
    f_anchor: f64,
    df_x1: f64,
    df_y: f64,
    /// `G = c1 x2 + dg_x1 x1 + dg_y y + g_const`.
    dg_x1: f64,
    dg_y: f64,
    g_const: f64,
}

impl CoupledSpdBlock {
    fn value_x(&self, x: &[f64]) -> f64 {
        let d = x[0] - self.x1k;
        self.f_anchor + self.b1 * x[1] + self.b2 * x[1] * x[1] + self.df_x1 * d + 0.5 * self.tau_x * d * d
    }

    fn point(&self, mu: f64) -> [f64; 2] {
        let x1 = (self.x1k - (self.df_x1 + mu * self.dg_x1) / self.tau_x).clamp(X1_LO, X1_HI);
        [x1, -(self.b1 + mu * self.c1) / (2.0 * self.b2)]
    }

    fn constraint_at(&self, mu: f64, rhs: f64) -> f64 {
        let [x1, x2] = self.point(mu);
        self.c1 * x2 + self.dg_x1 * x1 + rhs
    }

    /// Multiplier of the linearized constraint: zero if the free minimizer is feasible,
    /// otherwise the root of the decreasing piecewise-linear `μ ↦ G(x(μ))`.
    fn multiplier(&self, rhs: f64) -> f64 {
        if self.constraint_at(0.0, rhs) <= 0.0 {
            return 0.0;
        }
        let mut breaks: Vec<f64> = if self.dg_x1 != 0.0 {
            [X1_LO, X1_HI]
                .iter()
                .map(|b| (self.tau_x * (self.x1k - b) - self.df_x1) / self.dg_x1)
                .filter(|m| *m > 0.0)
                .collect()
        } else {
            vec![]
        };
        breaks.sort_by(f64::total_cmp);
        let mut lo = 0.0;
        for &b in &breaks {
            if self.constraint_at(b, rhs) <= 0.0 {
                return linear_root(|m| self.constraint_at(m, rhs), lo, b);
            }
            lo = b;
        }
        linear_root(|m| self.constraint_at(m, rhs), lo, lo + 1.0)
    }
}

/// Root of a function that is affine on the segment through `a` and `b`.
fn linear_root(f: impl Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (fa, fb) = (f(a), f(b));
    if fa == fb {
        return a;
    }
    a - fa * (b - a) / (fb - fa)
}

impl SpdBlockApprox for CoupledSpdBlock {
    fn solve(&self, block: usize, y: &[f64]) -> Result<SpdBlockSolution, SpdError> {
        let rhs = self.g_const + self.dg_y * y[0];
        let mu = self.multiplier(rhs);
        if !mu.is_finite() {
            return Err(SpdError::SubproblemInfeasible { block });
        }
        let [x1, x2] = self.point(mu);
        let x = vec![x1, x2];
        let mut m = MultiplierSet::zeros(1, 0, 2);
        m.ineq[0] = mu;
        let r = self.df_x1 + self.tau_x * (x1 - self.x1k) + mu * self.dg_x1;
        if x1 == X1_LO && r > 0.0 {
            m.lower[0] = r;
        } else if x1 == X1_HI && r < 0.0 {
            m.upper[0] = -r;
        }
        Ok(SpdBlockSolution { value: self.value_x(&x), x, multipliers: m })
    }

    fn y_subgradient(&self, y: &[f64], solution: &SpdBlockSolution) -> Vec<f64> {
        vec![self.tau_y * (y[0] - self.yk) + self.df_y + solution.multipliers.ineq[0] * self.dg_y]
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let d = y[0] - self.yk;
        self.value_x(x) + 0.5 * self.tau_y * d * d + self.df_y * d
    }
}

impl CoupledSpdBuilder {
    fn block(&self, p: &CoupledBlockParams, x: &[f64], yk: f64) -> CoupledSpdBlock {
        let (x1k, x2k) = (x[0], x[1]);
        let [df_x1, _, df_y] = p.objective_grad(self.shift, x1k, x2k, yk);
        let [dg_x1, _, dg_y] = p.constraint_grad(x1k, yk);
        CoupledSpdBlock {
            b1: p.b1,
            b2: p.b2,
            c1: p.c1,
            x1k,
            yk,
            tau_x: self.tau_x,
            tau_y: self.tau_y,
            f_anchor: p.objective(self.shift, x1k, 0.0, yk),
            df_x1,
            df_y,
            dg_x1,
            dg_y,
            g_const: p.c0 + p.curvature_term(x1k, yk) - dg_x1 * x1k - dg_y * yk,
        }
    }
}

impl SpdApproxBuilder for CoupledSpdBuilder {
    fn build(&self, x: &crate::model::BlockVector, y: &[f64]) -> Result<SpdApprox, SpdError> {
        if !(self.tau_x > 0.0) || self.tau_y < 0.0 {
            return Err(SpdError::SpecViolation("tau_x must be positive and tau_y nonnegative"));
        }
        let blocks = self
            .params
            .blocks
            .iter()
            .zip(x.blocks())
            .map(|(p, xi)| Arc::new(self.block(p, xi, y[0])) as Arc<dyn SpdBlockApprox>)
            .collect();
        Ok(SpdApprox {
            master: Some(self.params.master_oracle().shared()),
            coupling_set: CoupledParams::coupling_set(),
            blocks,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block() -> CoupledBlockParams {
        CoupledBlockParams {
            a: [[0.3, -0.2, 0.1], [-1.1, 0.4, 0.7], [0.9, 0.2, -0.5]],
            b1: 0.8,
            b2: 3.0,
            c0: 0.4,
            c1: -1.3,
            c2: 0.6,
        }
    }

    #[test]
    fn linear_objective_goes_to_the_bound() {
        // c2 = 0, c1 = 1, c0 = 0 forces x2 = 0; objective x1
        let p = CoupledBlockParams { a: [[1.0, 0.0, 0.0], [0.0; 3], [0.0; 3]], b1: 0.0, b2: 1.0, c0: 0.0, c1: 1.0, c2: 0.0 };
        let s = CoupledPdSolver { params: p, shift: 0, kind: ConstraintKind::Equality };
        let best = s
            .candidates(&[0.5])
            .into_iter()
            .min_by(|a, b| s.params.objective(0, a[0], a[1], 0.5).total_cmp(&s.params.objective(0, b[0], b[1], 0.5)))
            .unwrap();
        assert_eq!(best, vec![-1.0, 0.0]);
    }

    #[test]
    fn candidates_are_feasible() {
        let p = block();
        for kind in [ConstraintKind::Equality, ConstraintKind::Inequality] {
            for c in p.candidates(0, kind, 0.3) {
                let g = p.constraint(c[0], c[1], 0.3);
                match kind {
                    ConstraintKind::Equality => assert!(g.abs() < 1e-12),
                    ConstraintKind::Inequality => assert!(g < 1e-12),
                }
            }
        }
    }

    #[test]
    fn majorant_touches_only_with_curvature_anchor() {
        let p = block();
        let anchor = [0.4, 0.7, 0.2];
        let g = p.constraint(0.4, 0.7, 0.2);
        assert!((p.constraint_majorant(anchor, AnchorTerm::Curvature)(0.4, 0.7, 0.2) - g).abs() < 1e-14);
        let doubled = p.constraint_majorant(anchor, AnchorTerm::FullConstraint)(0.4, 0.7, 0.2);
        assert!((doubled - g - (p.c1 * 0.7 + p.c0)).abs() < 1e-14);
    }

    #[test]
    fn approximate_block_meets_its_constraint() {
        let p = block();
        let builder = CoupledSpdBuilder {
            params: Arc::new(CoupledParams { a: 10.0, y0: 0.5, blocks: vec![p.clone()] }),
            shift: 0,
            tau_x: 2.0,
            tau_y: 0.0,
        };
        let b = builder.block(&p, &[0.4, p.active_x2(0.4, 0.2)], 0.2);
        let s = b.solve(0, &[0.6]).unwrap();
        let g = p.constraint_majorant([0.4, p.active_x2(0.4, 0.2), 0.2], AnchorTerm::Curvature);
        let v = g(s.x[0], s.x[1], 0.6);
        assert!(v <= 1e-12);
        assert!(s.multipliers.ineq[0] == 0.0 || v.abs() < 1e-12);
    }
}
