//! Step-size schedules, surrogate constructors and the smoothing update shared by
//! all four algorithms.

use thiserror::Error;

use crate::kkt::fd_step;
use crate::model::{FnOracle, FunctionOracle};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScaError {
    #[error("invalid step schedule: {0}")]
    InvalidSchedule(&'static str),
}

/// Outer step sizes: `γ(0) = gamma0`, `γ(k) = 1/(α + β k^ε)` for `k ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepSchedule {
    pub gamma0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl StepSchedule {
    pub fn new(gamma0: f64, alpha: f64, beta: f64, epsilon: f64) -> Result<Self, ScaError> {
        let s = Self { gamma0, alpha, beta, epsilon };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScaError> {
        if !(self.gamma0 > 0.0 && self.gamma0 <= 1.0) {
            return Err(ScaError::InvalidSchedule("gamma0 must lie in (0, 1]"));
        }
        if !(self.alpha >= 0.0) {
            return Err(ScaError::InvalidSchedule("alpha must be nonnegative"));
        }
        if !(self.beta > 0.0) {
            return Err(ScaError::InvalidSchedule("beta must be positive"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(ScaError::InvalidSchedule("epsilon must lie in (0, 1]"));
        }
        if self.alpha + self.beta < 1.0 {
            return Err(ScaError::InvalidSchedule("alpha + beta below 1 gives a step above 1"));
        }
        Ok(())
    }

    pub fn outer_step(&self, k: usize) -> f64 {
        if k == 0 {
            self.gamma0
        } else {
            1.0 / (self.alpha + self.beta * (k as f64).powf(self.epsilon))
        }
    }
}

/// Inner step sizes from `γ(t) = γ(t−1)·(1 − β_in γ(t−1))`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InnerStepSchedule {
    pub gamma0: f64,
    pub beta_in: f64,
}

impl InnerStepSchedule {
    pub fn new(gamma0: f64, beta_in: f64) -> Result<Self, ScaError> {
        let s = Self { gamma0, beta_in };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScaError> {
        if !(self.gamma0 > 0.0) {
            return Err(ScaError::InvalidSchedule("inner gamma0 must be positive"));
        }
        if !(self.beta_in > 0.0 && self.beta_in <= 1.0) {
            return Err(ScaError::InvalidSchedule("beta_in must lie in (0, 1]"));
        }
        if self.gamma0 * self.beta_in > 1.0 {
            return Err(ScaError::InvalidSchedule("gamma0 * beta_in above 1 makes the recurrence nonpositive"));
        }
        Ok(())
    }

    pub fn inner_step(&self, t: usize) -> f64 {
        self.steps().nth(t).unwrap_or(0.0)
    }

    pub fn steps(&self) -> impl Iterator<Item = f64> {
        let b = self.beta_in;
        std::iter::successors(Some(self.gamma0), move |g| Some(g * (1.0 - b * g)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SurrogateVariant {
    TaylorQuadratic,
    DcLinearization,
    KeepConvex,
    PartialLinearization,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SurrogateSpec {
    pub tau: f64,
    pub variant: SurrogateVariant,
    pub strong_convexity: f64,
}

impl SurrogateSpec {
    pub fn taylor(tau: f64) -> Self {
        Self { tau, variant: SurrogateVariant::TaylorQuadratic, strong_convexity: tau }
    }
}

/// `F(y) = (τ/2)‖y − anchor‖² + gradᵀ(y − anchor)`.
pub fn taylor_quadratic_surrogate(gradient: &[f64], anchor: &[f64], tau: f64) -> FnOracle {
    let (g, a) = (gradient.to_vec(), anchor.to_vec());
    let (g2, a2) = (g.clone(), a.clone());
    FnOracle::new(
        a.len(),
        move |y| {
            y.iter().zip(&a).zip(&g).map(|((yi, ai), gi)| 0.5 * tau * (yi - ai).powi(2) + gi * (yi - ai)).sum()
        },
        move |y| y.iter().zip(&a2).zip(&g2).map(|((yi, ai), gi)| tau * (yi - ai) + gi).collect(),
    )
}

/// Keeps the convex part and linearizes the concave part `−g⁻` at the anchor:
/// `G(x) = g⁺(x) − g⁻(anchor) − ∇g⁻(anchor)ᵀ(x − anchor)`.
pub fn dc_linearize(
    convex: impl FunctionOracle + Clone + 'static,
    concave_negated: &dyn FunctionOracle,
    anchor: &[f64],
) -> FnOracle {
    let a = anchor.to_vec();
    let c0 = concave_negated.value(anchor);
    let c1 = concave_negated.gradient(anchor);
    let (conv, conv2) = (convex.clone(), convex);
    let c1b = c1.clone();
    FnOracle::new(
        a.len(),
        move |x| conv.value(x) - c0 - x.iter().zip(&a).zip(&c1).map(|((xi, ai), d)| d * (xi - ai)).sum::<f64>(),
        move |x| conv2.gradient(x).iter().zip(&c1b).map(|(g, d)| g - d).collect(),
    )
}

/// `current + γ (target − current)`.
pub fn smooth_update(current: &[f64], target: &[f64], gamma: f64) -> Vec<f64> {
    current.iter().zip(target).map(|(c, t)| c + gamma * (t - c)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurrogateRole {
    /// Only the anchored gradient must match; values may differ by a constant.
    Objective,
    /// Must touch and upper-bound the original.
    Constraint,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SurrogateReport {
    pub touching_err: f64,
    pub gradient_err: f64,
    pub majorization_violations: usize,
}

/// Checks the anchored conditions and counts sampled points where a constraint
/// surrogate falls below the original by more than `1e-10`.
///
/// The gradient error compares the surrogate's analytic gradient with the
/// original's, each confirmed by central differences so a wrong analytic
/// gradient on either side is caught.
pub fn verify_surrogate(
    surrogate: &dyn FunctionOracle,
    original: &dyn FunctionOracle,
    anchor: &[f64],
    samples: &[Vec<f64>],
    role: SurrogateRole,
) -> SurrogateReport {
    let touching_err = match role {
        SurrogateRole::Objective => 0.0,
        SurrogateRole::Constraint => (surrogate.value(anchor) - original.value(anchor)).abs(),
    };
    let gs = surrogate.gradient(anchor);
    let go = original.gradient(anchor);
    let mut gradient_err: f64 = gs.iter().zip(&go).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let fs = central_difference(surrogate, anchor);
    let fo = central_difference(original, anchor);
    let fd_err = fs.iter().zip(&fo).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = go.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if fd_err > 1e-5 * scale {
        gradient_err = gradient_err.max(fd_err);
    }
    let majorization_violations = match role {
        SurrogateRole::Objective => 0,
        SurrogateRole::Constraint => {
            samples.iter().filter(|x| surrogate.value(x) < original.value(x) - 1e-10).count()
        }
    };
    SurrogateReport { touching_err, gradient_err, majorization_violations }
}

pub fn central_difference(f: &dyn FunctionOracle, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let h = fd_step(x[j]);
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[j] += h;
            m[j] -= h;
            (f.value(&p) - f.value(&m)) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outer_steps_match_table_values() {
        let s = StepSchedule::new(1.0, 1.0, 5.0, 1.0).unwrap();
        assert_eq!(s.outer_step(0), 1.0);
        assert!((s.outer_step(1) - 1.0 / 6.0).abs() < 1e-16);
        assert_eq!(StepSchedule::new(1.0, 0.0, 1.0, 0.1).unwrap().outer_step(1), 1.0);
        // the DD schedule starts below its k = 1 value
        let dd = StepSchedule::new(0.01, 3.0, 1.0, 0.9).unwrap();
        assert!(dd.outer_step(1) > dd.outer_step(0));
    }

    #[test]
    fn inner_recurrence() {
        let s = InnerStepSchedule::new(1.0, 0.5).unwrap();
        assert_eq!(s.inner_step(1), 0.5);
        assert_eq!(s.inner_step(2), 0.375);
        let s = InnerStepSchedule::new(0.001, 0.9).unwrap();
        assert!((s.inner_step(1) - 0.0009991).abs() < 1e-16);
        assert!(InnerStepSchedule::new(3.0, 0.5).is_err());
    }

    #[test]
    fn taylor_values() {
        let f = taylor_quadratic_surrogate(&[0.0], &[0.0], 2.0);
        assert_eq!(f.value(&[3.0]), 9.0);
        let f = taylor_quadratic_surrogate(&[1.5, -2.0], &[0.3, 0.7], 4.0);
        assert_eq!(f.value(&[0.3, 0.7]), 0.0);
        let fd = central_difference(&f, &[0.3, 0.7]);
        assert!((fd[0] - 1.5).abs() < 1e-8 && (fd[1] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn dc_split_of_zero() {
        let sq = FnOracle::new(1, |x| x[0] * x[0], |x| vec![2.0 * x[0]]);
        let g = dc_linearize(sq.clone(), &sq, &[1.0]);
        assert_eq!(g.value(&[2.0]), 1.0);
        assert_eq!(g.value(&[1.0]), 0.0);
        let zero = FnOracle::zero(1);
        let samples: Vec<Vec<f64>> = (0..1000).map(|k| vec![-5.0 + k as f64 * 0.01]).collect();
        let r = verify_surrogate(&g, &zero, &[1.0], &samples, SurrogateRole::Constraint);
        assert_eq!(r.majorization_violations, 0);
        assert!(r.touching_err <= 1e-10 && r.gradient_err <= 1e-8);
    }

    #[test]
    fn wrong_anchor_gradient_is_detected() {
        let f = FnOracle::new(1, |x| x[0].powi(3), |x| vec![3.0 * x[0] * x[0]]);
        let bad = taylor_quadratic_surrogate(&[0.0], &[1.0], 1.0);
        let r = verify_surrogate(&bad, &f, &[1.0], &[], SurrogateRole::Objective);
        assert!(r.gradient_err > 1.0);
    }

    #[test]
    fn smoothing() {
        assert_eq!(smooth_update(&[2.0], &[4.0], 0.5), vec![3.0]);
        assert_eq!(smooth_update(&[2.0], &[4.0], 1.0), vec![4.0]);
        assert_eq!(smooth_update(&[4.0], &[4.0], 0.3), vec![4.0]);
    }
}
