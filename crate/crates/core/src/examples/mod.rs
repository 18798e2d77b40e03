//! The six benchmark families, their sampling distributions, tuned algorithm
//! parameters and convergence criteria.
//!
//! Families 1–3 share a scalar coupling variable; families 4–6 are scalar blocks
//! tied by one coupled constraint. Within each group the variants differ in the
//! constraint kind (equality or inequality) and in a power shift of the objective.

pub mod coupled;
pub mod separable;
mod trial;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BlockVector, ModelError, ProblemDD, ProblemPD, ProblemSDD, ProblemSPD};
use crate::rng;
use crate::sca::{InnerStepSchedule, ScaError, StepSchedule};
use crate::spd::InnerConfig;
use crate::trajectory::Trajectory;

pub use coupled::{CoupledBlockParams, CoupledParams, CoupledSpdBuilder};
pub use separable::{SeparableBlockParams, SeparableParams, SeparableSddBuilder};
pub use trial::{run_trial, TrialOutcome};

pub(crate) const STREAM_GLOBAL: u64 = 0;
pub(crate) const STREAM_BLOCK: u64 = 1;
const STREAM_INIT: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExampleError {
    #[error("{algorithm} does not apply to {variant}")]
    NotApplicable { algorithm: Algorithm, variant: Variant },
    #[error("degenerate parameters (block {block:?}): {reason}")]
    DegenerateParams { block: Option<usize>, reason: &'static str },
    #[error("trajectory has {len} records; the criterion needs iterations 9 and 10")]
    TrajectoryTooShort { len: usize },
    #[error("unknown example {0}")]
    UnknownVariant(String),
    #[error("unknown algorithm {0}")]
    UnknownAlgorithm(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Schedule(#[from] ScaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Ex1,
    Ex2,
    Ex3,
    Ex4,
    Ex5,
    Ex6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Equality,
    Inequality,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::Ex1, Variant::Ex2, Variant::Ex3, Variant::Ex4, Variant::Ex5, Variant::Ex6];

    /// 1-based number.
    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Self> {
        Self::ALL.get(usize::from(n).checked_sub(1)?).copied()
    }

    /// Coupling-variable family (1–3) as opposed to coupling-constraint family (4–6).
    pub fn has_coupling_variable(self) -> bool {
        self.number() <= 3
    }

    pub fn kind(self) -> ConstraintKind {
        match self {
            Variant::Ex1 | Variant::Ex4 => ConstraintKind::Equality,
            _ => ConstraintKind::Inequality,
        }
    }

    /// Extra power applied to the objective's block polynomial.
    pub fn shift(self) -> u32 {
        match self {
            Variant::Ex3 | Variant::Ex6 => 2,
            _ => 0,
        }
    }

    /// Constant added to reported objective values.
    pub fn report_offset(self) -> f64 {
        match self {
            Variant::Ex4 => 41.0,
            Variant::Ex5 => 40.0,
            Variant::Ex6 => 0.06,
            _ => 0.0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "example {}", self.number())
    }
}

impl FromStr for Variant {
    type Err = ExampleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().trim_start_matches("ex").trim_start_matches("Ex");
        digits
            .parse::<u8>()
            .ok()
            .and_then(Variant::from_number)
            .ok_or_else(|| ExampleError::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Pd,
    Spd,
    Dd,
    Sdd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Pd, Algorithm::Spd, Algorithm::Dd, Algorithm::Sdd];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pd => "pd",
            Algorithm::Spd => "spd",
            Algorithm::Dd => "dd",
            Algorithm::Sdd => "sdd",
        }
    }

    pub fn applies_to(self, v: Variant) -> bool {
        use Variant::*;
        match self {
            Algorithm::Pd => matches!(v, Ex1 | Ex2 | Ex3),
            Algorithm::Spd => matches!(v, Ex2 | Ex3),
            Algorithm::Dd => matches!(v, Ex4 | Ex5 | Ex6),
            Algorithm::Sdd => matches!(v, Ex5 | Ex6),
        }
    }

    pub fn check(self, v: Variant) -> Result<(), ExampleError> {
        if self.applies_to(v) {
            Ok(())
        } else {
            Err(ExampleError::NotApplicable { algorithm: self, variant: v })
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = ExampleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| ExampleError::UnknownAlgorithm(s.to_string()))
    }
}

/// Tunable parameters of all four algorithms. Fields an algorithm does not use are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmParams {
    /// Proximal weight (PD master, DD dual update, SDD objective) or `τ_x` for SPD.
    pub tau: f64,
    /// Proximal weight on `y` for SPD.
    #[serde(default)]
    pub tau_y: f64,
    pub gamma0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub gamma_in0: f64,
    #[serde(default = "half")]
    pub beta_in: f64,
    #[serde(default = "sigma_default")]
    pub sigma: f64,
    #[serde(default = "inner_default")]
    pub inner_steps: usize,
    /// Curvature allowance of the SDD constraint majorant.
    #[serde(default)]
    pub curvature_l: f64,
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn sigma_default() -> f64 {
    0.05
}
fn inner_default() -> usize {
    10
}

impl AlgorithmParams {
    /// Tuned defaults for each applicable pair; `None` otherwise.
    pub fn tuned(algorithm: Algorithm, v: Variant) -> Option<Self> {
        if !algorithm.applies_to(v) {
            return None;
        }
        let base = AlgorithmParams {
            tau: 0.0,
            tau_y: 0.0,
            gamma0: 1.0,
            alpha: 1.0,
            beta: 5.0,
            epsilon: 1.0,
            gamma_in0: 1.0,
            beta_in: 0.5,
            sigma: 0.05,
            inner_steps: 10,
            curvature_l: 0.0,
        };
        Some(match (algorithm, v) {
            (Algorithm::Pd, Variant::Ex3) => AlgorithmParams { tau: 5.0, ..base },
            (Algorithm::Pd, _) => base,
            (Algorithm::Spd, _) => AlgorithmParams { tau: 1e8, alpha: 0.0, beta: 1.0, epsilon: 0.1, ..base },
            (Algorithm::Dd, v) => AlgorithmParams {
                tau: if v == Variant::Ex4 { 8.0 } else { 10.0 },
                gamma0: if v == Variant::Ex6 { 1.0 } else { 0.01 },
                alpha: 3.0,
                beta: 1.0,
                epsilon: 0.9,
                ..base
            },
            (Algorithm::Sdd, Variant::Ex5) => {
                AlgorithmParams { tau: 1e-5, curvature_l: 0.1, alpha: 1.0, beta: 1.0, epsilon: 0.1, ..base }
            }
            (Algorithm::Sdd, _) => AlgorithmParams {
                tau: 0.1,
                curvature_l: 0.1,
                alpha: 1.0,
                beta: 1.0,
                epsilon: 0.1,
                gamma_in0: 0.001,
                beta_in: 0.9,
                ..base
            },
        })
    }

    pub fn schedule(&self) -> Result<StepSchedule, ScaError> {
        StepSchedule::new(self.gamma0, self.alpha, self.beta, self.epsilon)
    }

    pub fn inner(&self) -> Result<InnerConfig, ScaError> {
        Ok(InnerConfig {
            schedule: InnerStepSchedule::new(self.gamma_in0, self.beta_in)?,
            sigma: self.sigma,
            max_steps: self.inner_steps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Coefficients {
    Coupled(CoupledParams),
    Separable(SeparableParams),
}

/// One sampled instance, serializable for replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleParams {
    pub variant: Variant,
    pub seed: u64,
    pub coefficients: Coefficients,
}

/// Draws an instance with `blocks` blocks. Block `i` depends only on `(seed, i)`.
pub fn sample_example(variant: Variant, blocks: usize, seed: u64) -> ExampleParams {
    let coefficients = if variant.has_coupling_variable() {
        Coefficients::Coupled(CoupledParams::sample(blocks, seed))
    } else {
        Coefficients::Separable(SeparableParams::sample(blocks, seed, variant.kind()))
    };
    ExampleParams { variant, seed, coefficients }
}

impl ExampleParams {
    pub fn block_count(&self) -> usize {
        match &self.coefficients {
            Coefficients::Coupled(c) => c.blocks.len(),
            Coefficients::Separable(s) => s.blocks.len(),
        }
    }

    fn coupled(&self, algorithm: Algorithm) -> Result<&CoupledParams, ExampleError> {
        algorithm.check(self.variant)?;
        match &self.coefficients {
            Coefficients::Coupled(c) => {
                c.validate()?;
                Ok(c)
            }
            Coefficients::Separable(_) => Err(ExampleError::NotApplicable { algorithm, variant: self.variant }),
        }
    }

    fn separable(&self, algorithm: Algorithm) -> Result<&SeparableParams, ExampleError> {
        algorithm.check(self.variant)?;
        match &self.coefficients {
            Coefficients::Separable(s) => Ok(s),
            Coefficients::Coupled(_) => Err(ExampleError::NotApplicable { algorithm, variant: self.variant }),
        }
    }

    pub fn pd_problem(&self) -> Result<ProblemPD, ExampleError> {
        self.coupled(Algorithm::Pd)?.pd_problem(self.variant.shift(), self.variant.kind())
    }

    pub fn spd_problem(&self) -> Result<ProblemSPD, ExampleError> {
        self.coupled(Algorithm::Spd)?.spd_problem(self.variant.shift())
    }

    pub fn spd_builder(&self, params: &AlgorithmParams) -> Result<CoupledSpdBuilder, ExampleError> {
        Ok(CoupledSpdBuilder {
            params: Arc::new(self.coupled(Algorithm::Spd)?.clone()),
            shift: self.variant.shift(),
            tau_x: params.tau,
            tau_y: params.tau_y,
        })
    }

    pub fn dd_problem(&self) -> Result<ProblemDD, ExampleError> {
        self.separable(Algorithm::Dd)?.dd_problem(self.variant.shift(), self.variant.kind())
    }

    pub fn sdd_problem(&self) -> Result<ProblemSDD, ExampleError> {
        self.separable(Algorithm::Sdd)?.sdd_problem(self.variant.shift())
    }

    pub fn sdd_builder(&self, params: &AlgorithmParams) -> Result<SeparableSddBuilder, ExampleError> {
        Ok(SeparableSddBuilder {
            params: Arc::new(self.separable(Algorithm::Sdd)?.clone()),
            shift: self.variant.shift(),
            tau: params.tau,
            curvature_l: params.curvature_l,
        })
    }
}

/// Starting point of one trial. Unused parts are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialPoint {
    pub x: BlockVector,
    pub y: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// `count` starting points. For the coupling-variable family `x_i2` is solved from
/// the constraint so the points are feasible; for the other family the dual has one
/// component of the matching kind.
pub fn sample_initial_points(params: &ExampleParams, count: usize, seed: u64) -> Vec<InitialPoint> {
    (0..count as u64)
        .map(|j| {
            let mut g = rng::stream(seed, &[STREAM_INIT, j, STREAM_GLOBAL]);
            let block_rng = |i: usize| rng::stream(seed, &[STREAM_INIT, j, STREAM_BLOCK, i as u64]);
            match &params.coefficients {
                Coefficients::Coupled(c) => {
                    let y = g.random::<f64>();
                    let mut mu = Vec::with_capacity(c.blocks.len());
                    let mut lambda = Vec::with_capacity(c.blocks.len());
                    let x = c
                        .blocks
                        .iter()
                        .enumerate()
                        .map(|(i, b)| {
                            let mut r = block_rng(i);
                            let x1 = r.random_range(-1.0..1.0);
                            lambda.push(r.random_range(-1.0..1.0));
                            mu.push(r.random::<f64>());
                            vec![x1, b.active_x2(x1, y)]
                        })
                        .collect();
                    InitialPoint { x: BlockVector::new(x), y: vec![y], mu, lambda }
                }
                Coefficients::Separable(s) => {
                    let x = (0..s.blocks.len())
                        .map(|i| vec![block_rng(i).random_range(separable::X_LO..separable::X_HI)])
                        .collect();
                    let (mu, lambda) = match params.variant.kind() {
                        ConstraintKind::Equality => (vec![], vec![g.random_range(-1.0..1.0)]),
                        ConstraintKind::Inequality => (vec![g.random::<f64>()], vec![]),
                    };
                    InitialPoint { x: BlockVector::new(x), y: vec![], mu, lambda }
                }
            }
        })
        .collect()
}

/// Thresholds of the ten-iteration convergence test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceCriterion {
    /// Per-block mean positive inequality violation (coupling-variable family).
    pub mean_ineq_tol: f64,
    /// Worst positive inequality violation (coupling-variable family).
    pub max_ineq_tol: f64,
    /// Positive part of the summed coupled constraint (coupling-constraint family).
    pub coupling_tol: f64,
    pub rel_objective_tol: f64,
    pub coupling_variable: bool,
}

impl ConvergenceCriterion {
    pub fn for_variant(v: Variant) -> Self {
        Self {
            mean_ineq_tol: 1e-6,
            max_ineq_tol: 1e-5,
            coupling_tol: 1e-2,
            rel_objective_tol: 0.05,
            coupling_variable: v.has_coupling_variable(),
        }
    }
}

/// True when iterations 9 and 10 are feasible within tolerance and the objective moved
/// by at most `rel_objective_tol` relative to iteration 9.
pub fn check_convergence(trajectory: &Trajectory, c: &ConvergenceCriterion) -> Result<bool, ExampleError> {
    let r = &trajectory.records;
    if r.len() < 11 {
        return Err(ExampleError::TrajectoryTooShort { len: r.len() });
    }
    let (r9, r10) = (&r[9], &r[10]);
    let feasible = [r9, r10].iter().all(|rec| {
        let m = &rec.metrics;
        if c.coupling_variable {
            m.mean_ineq < c.mean_ineq_tol && m.max_ineq < c.max_ineq_tol
        } else {
            m.coupling < c.coupling_tol
        }
    });
    let stable = (r10.objective - r9.objective).abs() <= c.rel_objective_tol * r9.objective.abs();
    Ok(feasible && stable && r10.objective.is_finite())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestObjective {
    /// Objective plus the variant's reporting offset.
    pub value: f64,
    pub k: usize,
    pub elapsed_s: f64,
}

/// Lowest objective among iterates `k ≥ 1` that pass the feasibility filter, plus the
/// reporting offset. `None` when no iterate qualifies.
pub fn best_objective(trajectory: &Trajectory, v: Variant) -> Option<BestObjective> {
    let c = ConvergenceCriterion::for_variant(v);
    trajectory
        .records
        .iter()
        .filter(|r| r.k >= 1 && r.objective.is_finite())
        .filter(|r| {
            let m = &r.metrics;
            if c.coupling_variable {
                m.mean_ineq < c.mean_ineq_tol && m.max_eq < c.max_ineq_tol
            } else {
                m.coupling < c.coupling_tol
            }
        })
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.k.cmp(&b.k)))
        .map(|r| BestObjective { value: r.objective + v.report_offset(), k: r.k, elapsed_s: r.elapsed_s })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ViolationMetrics;
    use crate::trajectory::IterationRecord;

    fn traj(objectives: &[f64], coupling: f64) -> Trajectory {
        Trajectory {
            records: objectives
                .iter()
                .enumerate()
                .map(|(k, &objective)| IterationRecord {
                    k,
                    objective,
                    metrics: ViolationMetrics { coupling, ..Default::default() },
                    step: 0.0,
                    displacement: 0.0,
                    elapsed_s: 0.0,
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn criterion_boundary_cases() {
        let c = ConvergenceCriterion::for_variant(Variant::Ex4);
        let mut o = vec![1.0; 11];
        assert!(check_convergence(&traj(&o, 0.0), &c).unwrap());
        o[10] = 1.1;
        assert!(!check_convergence(&traj(&o, 0.0), &c).unwrap());
        o[10] = 1.049;
        assert!(check_convergence(&traj(&o, 0.0), &c).unwrap());
        assert!(!check_convergence(&traj(&o, 0.02), &c).unwrap());
        assert_eq!(check_convergence(&traj(&o[..5], 0.0), &c), Err(ExampleError::TrajectoryTooShort { len: 5 }));
    }

    #[test]
    fn best_objective_applies_offset_and_filter() {
        let mut o = vec![0.0; 11];
        o[3] = -40.5;
        let b = best_objective(&traj(&o, 0.0), Variant::Ex4).unwrap();
        assert_eq!((b.value, b.k), (0.5, 3));
        assert!(best_objective(&traj(&o, 1.0), Variant::Ex4).is_none());
        let b1 = best_objective(&traj(&[5.0, 3.0, 4.0], 0.0), Variant::Ex1).unwrap();
        assert_eq!(b1.value, 3.0);
    }

    #[test]
    fn applicability_matrix() {
        let expected = [
            (Algorithm::Pd, [true, true, true, false, false, false]),
            (Algorithm::Spd, [false, true, true, false, false, false]),
            (Algorithm::Dd, [false, false, false, true, true, true]),
            (Algorithm::Sdd, [false, false, false, false, true, true]),
        ];
        for (a, row) in expected {
            for (v, ok) in Variant::ALL.into_iter().zip(row) {
                assert_eq!(a.applies_to(v), ok, "{a} on {v}");
                assert_eq!(AlgorithmParams::tuned(a, v).is_some(), ok);
            }
        }
    }

    #[test]
    fn sampling_is_deterministic_and_shaped() {
        let a = sample_example(Variant::Ex1, 7, 11);
        assert_eq!(a, sample_example(Variant::Ex1, 7, 11));
        assert_ne!(a, sample_example(Variant::Ex1, 7, 12));
        let p = a.pd_problem().unwrap();
        assert_eq!(p.block_count(), 7);
        assert!(p.blocks.iter().all(|b| b.dim() == 2));
        assert_eq!(p.coupling_dim(), 1);
        // block draws do not depend on the block count
        let Coefficients::Coupled(small) = sample_example(Variant::Ex1, 3, 11).coefficients else { panic!() };
        let Coefficients::Coupled(big) = a.coefficients else { panic!() };
        assert_eq!(small.blocks[..], big.blocks[..3]);
    }

    #[test]
    fn coupled_initial_points_are_feasible() {
        let params = sample_example(Variant::Ex1, 5, 3);
        let p = params.pd_problem().unwrap();
        for init in sample_initial_points(&params, 4, 9) {
            let m = p.violation_metrics(&init.x, &init.y).unwrap();
            assert!(m.max_eq < 1e-12);
        }
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("4".parse::<Variant>().unwrap(), Variant::Ex4);
        assert_eq!("ex6".parse::<Variant>().unwrap(), Variant::Ex6);
        assert!("7".parse::<Variant>().is_err());
        assert_eq!("SDD".parse::<Algorithm>().unwrap(), Algorithm::Sdd);
    }
}
