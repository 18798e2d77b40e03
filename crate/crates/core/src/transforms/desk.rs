//! Small random problems with a known exact stationary point.
//!
//! All functions are quadratics. The point, the active pattern and the multipliers
//! are drawn first; constraint constants are then set so the pattern holds, and the
//! linear objective terms are set so that the Lagrangian gradient vanishes (or
//! points out of the box at coordinates sitting on a bound).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dd::FullDdNlp;
use crate::kkt::{MultiplierSet, Nlp};
use crate::model::{BlockVector, BoxSet, DdBlock, FunctionOracle, Matrix, PdBlock, ProblemDD, ProblemPD, Vector, VectorOracle};
use crate::pd::FullPdNlp;
use crate::rng::stream;

use super::{DdPoint, PdPoint};

const STREAM_PD: u64 = 0;
const STREAM_DD: u64 = 1;

/// `½ xᵀHx + qᵀx + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub hessian: Matrix,
    pub linear: Vector,
    pub constant: f64,
}

impl Quadratic {
    fn random(rng: &mut ChaCha8Rng, dim: usize) -> Self {
        let m = Matrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        Self {
            hessian: (&m + m.transpose()) * 0.5,
            linear: Vector::from_fn(dim, |_, _| rng.sample(StandardNormal)),
            constant: 0.0,
        }
    }
}

impl FunctionOracle for Quadratic {
    fn dim(&self) -> usize {
        self.linear.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        let v = Vector::from_column_slice(x);
        0.5 * v.dot(&(&self.hessian * &v)) + self.linear.dot(&v) + self.constant
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (&self.hessian * Vector::from_column_slice(x) + &self.linear).as_slice().to_vec()
    }
}

/// Stacked quadratics sharing one input.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticMap(pub Vec<Quadratic>);

impl VectorOracle for QuadraticMap {
    fn dim_in(&self) -> usize {
        self.0[0].dim()
    }
    fn dim_out(&self) -> usize {
        self.0.len()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|q| q.value(x)).collect()
    }
    fn jacobian_t(&self, x: &[f64]) -> Matrix {
        let cols: Vec<Vector> = self.0.iter().map(|q| Vector::from_vec(q.gradient(x))).collect();
        Matrix::from_columns(&cols)
    }
}

fn shared_map(rows: Vec<Quadratic>) -> Option<std::sync::Arc<dyn VectorOracle>> {
    (!rows.is_empty()).then(|| std::sync::Arc::new(QuadraticMap(rows)) as _)
}

const BOUND: f64 = 1.0;

/// Coordinates on a bound with probability 0.4, split evenly between the two.
fn draw_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| match rng.random_range(0..10) {
            0 | 1 => -BOUND,
            2 | 3 => BOUND,
            _ => rng.random_range(-0.8..0.8),
        })
        .collect()
}

/// Desired Lagrangian gradient: positive on the lower bound, negative on the upper.
fn target_gradient(rng: &mut ChaCha8Rng, v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&c| {
            if c <= -BOUND {
                rng.random_range(0.1..1.0)
            } else if c >= BOUND {
                -rng.random_range(0.1..1.0)
            } else {
                0.0
            }
        })
        .collect()
}

/// An inequality row through `z` that is active (with a positive multiplier) or
/// strictly inactive (with a zero multiplier).
fn ineq_row(rng: &mut ChaCha8Rng, z: &[f64]) -> (Quadratic, f64) {
    let mut q = Quadratic::random(rng, z.len());
    if rng.random_bool(0.5) {
        q.constant = -q.value(z);
        (q, rng.random_range(0.1..2.0))
    } else {
        q.constant = -q.value(z) - rng.random_range(0.2..1.0);
        (q, 0.0)
    }
}

fn eq_row(rng: &mut ChaCha8Rng, z: &[f64]) -> (Quadratic, f64) {
    let mut q = Quadratic::random(rng, z.len());
    q.constant = -q.value(z);
    (q, rng.sample(StandardNormal))
}

fn box_multipliers(target: &[f64], ineq: Vec<f64>, eq: Vec<f64>) -> MultiplierSet {
    MultiplierSet {
        ineq,
        eq,
        lower: target.iter().map(|t| t.max(0.0)).collect(),
        upper: target.iter().map(|t| (-t).max(0.0)).collect(),
    }
}

struct PdDraw {
    n0: usize,
    master: Quadratic,
    master_ineq: Vec<Quadratic>,
    blocks: Vec<PdBlockDraw>,
}

struct PdBlockDraw {
    dim: usize,
    objective: Quadratic,
    coupled_ineq: Vec<Quadratic>,
    coupled_eq: Vec<Quadratic>,
    local_ineq: Vec<Quadratic>,
}

impl PdDraw {
    fn build(&self) -> ProblemPD {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                let mut block = PdBlock::new(BoxSet::uniform(b.dim, -BOUND, BOUND).unwrap(), b.objective.clone().into_func());
                block.coupled_ineq = shared_map(b.coupled_ineq.clone());
                block.coupled_eq = shared_map(b.coupled_eq.clone());
                block.local_ineq = shared_map(b.local_ineq.clone());
                block
            })
            .collect();
        let mut p = ProblemPD::new(BoxSet::uniform(self.n0, -BOUND, BOUND).unwrap(), blocks).unwrap();
        p.master_objective = Some(self.master.clone().into_func());
        p.master_ineq = shared_map(self.master_ineq.clone());
        p
    }
}

impl Quadratic {
    fn into_func(self) -> crate::model::Func {
        std::sync::Arc::new(self)
    }
}

/// Coupling-variable instance with 1 to 3 blocks and a stationary point of it.
pub fn random_pd_instance(seed: u64) -> (ProblemPD, PdPoint) {
    let mut rng = stream(seed, &[STREAM_PD]);
    let n0 = rng.random_range(1..=2);
    let count = rng.random_range(1..=3);
    let y = draw_point(&mut rng, n0);
    let mut xs = Vec::with_capacity(count);
    let (mut ineq, mut eq) = (Vec::new(), Vec::new());
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let dim = rng.random_range(1..=2);
        let x = draw_point(&mut rng, dim);
        let z = [x.as_slice(), y.as_slice()].concat();
        let objective = Quadratic::random(&mut rng, dim + n0);
        let mut block = PdBlockDraw { dim, objective, coupled_ineq: vec![], coupled_eq: vec![], local_ineq: vec![] };
        for _ in 0..rng.random_range(0..=2) {
            let (q, m) = ineq_row(&mut rng, &z);
            block.coupled_ineq.push(q);
            ineq.push(m);
        }
        for _ in 0..rng.random_range(0..=1) {
            let (q, m) = ineq_row(&mut rng, &x);
            block.local_ineq.push(q);
            ineq.push(m);
        }
        for _ in 0..rng.random_range(0..=1) {
            let (q, l) = eq_row(&mut rng, &z);
            block.coupled_eq.push(q);
            eq.push(l);
        }
        blocks.push(block);
        xs.push(x);
    }
    let mut draw = PdDraw { n0, master: Quadratic::random(&mut rng, n0), master_ineq: vec![], blocks };
    for _ in 0..rng.random_range(0..=1) {
        let (q, m) = ineq_row(&mut rng, &y);
        draw.master_ineq.push(q);
        ineq.push(m);
    }

    let x = BlockVector::new(xs);
    let problem = draw.build();
    let nlp = FullPdNlp::new(&problem);
    let v = nlp.pack(&x, &y);
    let target = target_gradient(&mut rng, &v);
    let current = nlp.lagrangian_gradient(&v, &ineq, &eq);
    let mut offset = 0;
    for b in &mut draw.blocks {
        for k in 0..b.dim {
            b.objective.linear[k] += target[offset + k] - current[offset + k];
        }
        offset += b.dim;
    }
    for k in 0..n0 {
        draw.master.linear[k] += target[offset + k] - current[offset + k];
    }
    let problem = draw.build();
    let multipliers = box_multipliers(&target, ineq, eq);
    (problem, PdPoint { x, y, multipliers })
}

/// Coupling-constraint instance with 1 to 3 blocks and a stationary point of it.
pub fn random_dd_instance(seed: u64) -> (ProblemDD, DdPoint) {
    let mut rng = stream(seed, &[STREAM_DD]);
    let count = rng.random_range(1..=3);
    let r = rng.random_range(0..=2);
    let m = rng.random_range(0..=2);
    let xs: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let dim = rng.random_range(1..=2);
            draw_point(&mut rng, dim)
        })
        .collect();
    let mut objectives: Vec<Quadratic> = xs.iter().map(|x| Quadratic::random(&mut rng, x.len())).collect();
    let mut coupled_ineq: Vec<Vec<Quadratic>> = xs.iter().map(|x| (0..r).map(|_| Quadratic::random(&mut rng, x.len())).collect()).collect();
    let mut coupled_eq: Vec<Vec<Quadratic>> = xs.iter().map(|x| (0..m).map(|_| Quadratic::random(&mut rng, x.len())).collect()).collect();

    // The last block's constants fix the summed values.
    let last = count - 1;
    let mut mu = Vec::with_capacity(r);
    for k in 0..r {
        let sum: f64 = (0..count).map(|i| coupled_ineq[i][k].value(&xs[i])).sum();
        let active = rng.random_bool(0.5);
        let slack = if active { 0.0 } else { rng.random_range(0.2..1.0) };
        coupled_ineq[last][k].constant -= sum + slack;
        mu.push(if active { rng.random_range(0.1..2.0) } else { 0.0 });
    }
    let mut lambda = Vec::with_capacity(m);
    for k in 0..m {
        let sum: f64 = (0..count).map(|i| coupled_eq[i][k].value(&xs[i])).sum();
        coupled_eq[last][k].constant -= sum;
        lambda.push(rng.sample(StandardNormal));
    }
    let mut local = Vec::with_capacity(count);
    let mut ineq = mu;
    for x in &xs {
        let mut rows = Vec::new();
        for _ in 0..rng.random_range(0..=1) {
            let (q, mult) = ineq_row(&mut rng, x);
            rows.push(q);
            ineq.push(mult);
        }
        local.push(rows);
    }

    let build = |objectives: &[Quadratic]| {
        let blocks = (0..count)
            .map(|i| {
                let mut b = DdBlock::new(BoxSet::uniform(xs[i].len(), -BOUND, BOUND).unwrap(), objectives[i].clone().into_func());
                b.coupled_ineq = shared_map(coupled_ineq[i].clone());
                b.coupled_eq = shared_map(coupled_eq[i].clone());
                b.local_ineq = shared_map(local[i].clone());
                b
            })
            .collect();
        ProblemDD::new(r, m, blocks).unwrap()
    };
    let x = BlockVector::new(xs.clone());
    let v = x.flatten();
    let problem = build(&objectives);
    let current = FullDdNlp::new(&problem).lagrangian_gradient(&v, &ineq, &lambda);
    let target = target_gradient(&mut rng, &v);
    let mut offset = 0;
    for q in &mut objectives {
        for k in 0..q.dim() {
            q.linear[k] += target[offset + k] - current[offset + k];
        }
        offset += q.dim();
    }
    let problem = build(&objectives);
    let multipliers = box_multipliers(&target, ineq, lambda);
    (problem, DdPoint { x, multipliers })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drawn_points_are_stationary() {
        for seed in 0..50 {
            let (p, point) = random_pd_instance(seed);
            assert!(point.residual(&p).unwrap().total() <= 1e-12, "pd seed {seed}");
            let (p, point) = random_dd_instance(seed);
            assert!(point.residual(&p).unwrap().total() <= 1e-12, "dd seed {seed}");
        }
    }

    #[test]
    fn quadratic_gradient_matches_differences() {
        let mut rng = stream(5, &[9]);
        let q = Quadratic::random(&mut rng, 3);
        let x = [0.2, -0.4, 0.7];
        let g = q.gradient(&x);
        for k in 0..3 {
            let mut a = x;
            let mut b = x;
            a[k] += 1e-6;
            b[k] -= 1e-6;
            assert!(((q.value(&a) - q.value(&b)) / 2e-6 - g[k]).abs() < 1e-8);
        }
    }
}
