//! Reformulations between the coupling-variable and coupling-constraint families,
//! and the maps that carry stationary points with their multipliers across.
//!
//! [`pd_to_dd`] copies the coupling variable into every block and ties the copies
//! together with consensus equalities. [`dd_to_pd`] gives every block a slack for
//! its share of the coupling constraints and lets the slacks play the coupling
//! variable. Neither adds objective terms, so objective values carry over.

pub mod desk;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dd::FullDdNlp;
use crate::kkt::{kkt_residual, KktError, KktResidual, MultiplierSet, Nlp};
use crate::model::{
    concat, AffineMap, BlockVector, BoxSet, DdBlock, FnOracle, FnVectorOracle, Matrix, ModelError, PdBlock,
    ProblemDD, ProblemPD, Vector, VecFunc,
};
use crate::pd::FullPdNlp;

/// Image residuals below this are treated as exact.
pub const IMAGE_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("source point is not stationary: KKT residual {residual:e} exceeds {tol:e}")]
    NotStationary { residual: f64, tol: f64 },
    #[error("point has {got} blocks, the problem has {expected}")]
    BlockCount { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kkt(#[from] KktError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    PdToDd,
    DdToPd,
}

/// Forward maps a point of the original problem into the reformulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapDirection {
    Forward,
    Backward,
}

/// Multipliers on both sides, each in the ordering of its full problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierRecord {
    pub source: MultiplierSet,
    pub image: MultiplierSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformCertificate {
    pub transform: Transform,
    pub direction: MapDirection,
    pub source_residual: KktResidual,
    pub image_residual: KktResidual,
    pub multipliers: MultiplierRecord,
}

impl TransformCertificate {
    pub fn preserves_stationarity(&self) -> bool {
        self.image_residual.total() <= self.source_residual.total().max(IMAGE_FLOOR)
    }
}

/// Point of a coupling-variable problem with multipliers ordered as in [`FullPdNlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct PdPoint {
    pub x: BlockVector,
    pub y: Vec<f64>,
    pub multipliers: MultiplierSet,
}

impl PdPoint {
    pub fn residual(&self, problem: &ProblemPD) -> Result<KktResidual, TransformError> {
        let nlp = FullPdNlp::new(problem);
        Ok(kkt_residual(&nlp, &nlp.pack(&self.x, &self.y), &self.multipliers)?)
    }
}

/// Point of a coupling-constraint problem with multipliers ordered as in [`FullDdNlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct DdPoint {
    pub x: BlockVector,
    pub multipliers: MultiplierSet,
}

impl DdPoint {
    pub fn residual(&self, problem: &ProblemDD) -> Result<KktResidual, TransformError> {
        let nlp = FullDdNlp::new(problem);
        Ok(kkt_residual(&nlp, &self.x.flatten(), &self.multipliers)?)
    }
}

fn require_stationary(residual: KktResidual, tol: f64) -> Result<(), TransformError> {
    let r = residual.total();
    if r.is_nan() || r > tol {
        Err(TransformError::NotStationary { residual: r, tol })
    } else {
        Ok(())
    }
}

/// Box multipliers read off the Lagrangian gradient at coordinates sitting on a bound.
fn bound_multipliers<P: Nlp>(nlp: &P, v: &[f64], ineq: Vec<f64>, eq: Vec<f64>) -> MultiplierSet {
    let g = nlp.lagrangian_gradient(v, &ineq, &eq);
    let b = nlp.bounds();
    let mut m = MultiplierSet { ineq, eq, lower: vec![0.0; v.len()], upper: vec![0.0; v.len()] };
    for j in 0..v.len() {
        if v[j] <= b.lower()[j] {
            m.lower[j] = g[j].max(0.0);
        } else if v[j] >= b.upper()[j] {
            m.upper[j] = (-g[j]).max(0.0);
        }
    }
    m
}

fn stack_oracles(dim_in: usize, parts: Vec<(VecFunc, usize)>) -> Option<VecFunc> {
    // Each part reads the first `width` coordinates of the input.
    if parts.is_empty() {
        return None;
    }
    let rows: usize = parts.iter().map(|(o, _)| o.dim_out()).sum();
    let eval_parts = parts.clone();
    Some(
        FnVectorOracle::new(
            dim_in,
            rows,
            move |z| eval_parts.iter().flat_map(|(o, w)| o.eval(&z[..*w])).collect(),
            move |z| {
                let mut j = Matrix::zeros(dim_in, rows);
                let mut col = 0;
                for (o, w) in &parts {
                    j.view_mut((0, col), (*w, o.dim_out())).copy_from(&o.jacobian_t(&z[..*w]));
                    col += o.dim_out();
                }
                j
            },
        )
        .shared(),
    )
}

/// The coupling-constraint reformulation of a coupling-variable problem.
///
/// Image block 0 is the coupling variable itself, carrying the master objective and
/// master inequalities. Image block `i ≥ 1` is `(x_i, y_i)` with its own copy of the
/// coupling variable. The coupled equality stacks the consensus rows `y_i − y_0`
/// followed by every block's original coupled equalities, each in its own rows.
/// There are no coupled inequalities.
#[derive(Clone)]
pub struct PdToDd {
    source: ProblemPD,
    image: ProblemDD,
    eq_offsets: Vec<usize>,
}

pub fn pd_to_dd(problem: &ProblemPD) -> Result<PdToDd, TransformError> {
    problem.validate()?;
    let n0 = problem.coupling_dim();
    let count = problem.block_count();
    let consensus_rows = count * n0;
    let mut eq_offsets = Vec::with_capacity(count);
    let mut rows = consensus_rows;
    for b in &problem.blocks {
        eq_offsets.push(rows);
        rows += b.n_coupled_eq();
    }

    let mut master = DdBlock::new(
        problem.coupling_set.clone(),
        problem.master_objective.clone().unwrap_or_else(|| FnOracle::zero(n0).shared()),
    );
    master.local_ineq = problem.master_ineq.clone();
    master.coupled_eq = Some(Arc::new(AffineMap { a: master_consensus(count, n0, rows), b: Vector::zeros(rows) }));
    let mut blocks = vec![master];

    for (i, b) in problem.blocks.iter().enumerate() {
        let (d, dim) = (b.dim(), b.dim() + n0);
        let mut parts = Vec::new();
        if let Some(g) = &b.coupled_ineq {
            parts.push((g.clone(), dim));
        }
        if let Some(g) = &b.local_ineq {
            parts.push((g.clone(), d));
        }
        let copy_row = i * n0;
        let (h, h_row) = (b.coupled_eq.clone(), eq_offsets[i]);
        let h_jac = h.clone();
        let coupled_eq = FnVectorOracle::new(
            dim,
            rows,
            move |z| {
                let mut out = vec![0.0; rows];
                out[copy_row..copy_row + n0].copy_from_slice(&z[d..]);
                if let Some(h) = &h {
                    for (t, v) in out[h_row..].iter_mut().zip(h.eval(z)) {
                        *t = v;
                    }
                }
                out
            },
            move |z| {
                let mut j = Matrix::zeros(dim, rows);
                for k in 0..n0 {
                    j[(d + k, copy_row + k)] = 1.0;
                }
                if let Some(h) = &h_jac {
                    j.view_mut((0, h_row), (dim, h.dim_out())).copy_from(&h.jacobian_t(z));
                }
                j
            },
        );
        blocks.push(DdBlock {
            set: b.set.product(&problem.coupling_set),
            objective: b.objective.clone(),
            coupled_ineq: None,
            coupled_eq: Some(coupled_eq.shared()),
            local_ineq: stack_oracles(dim, parts),
            solver: None,
        });
    }
    let image = ProblemDD::new(0, rows, blocks)?;
    Ok(PdToDd { source: problem.clone(), image, eq_offsets })
}

/// `−[I … I]ᵀ`, padded with zero rows up to `rows`.
fn master_consensus(count: usize, n0: usize, rows: usize) -> Matrix {
    let mut a = Matrix::zeros(rows, n0);
    for i in 0..count {
        for k in 0..n0 {
            a[(i * n0 + k, k)] = -1.0;
        }
    }
    a
}

impl PdToDd {
    pub fn source(&self) -> &ProblemPD {
        &self.source
    }
    pub fn image(&self) -> &ProblemDD {
        &self.image
    }

    /// Matrix of the consensus part of the coupled equality for image block `i`
    /// (0 is the coupling copy). Only the consensus rows are included.
    pub fn consensus_block(&self, i: usize) -> Matrix {
        let (count, n0) = (self.source.block_count(), self.source.coupling_dim());
        let rows = count * n0;
        if i == 0 {
            return master_consensus(count, n0, rows);
        }
        let d = self.source.blocks[i - 1].dim();
        let mut a = Matrix::zeros(rows, d + n0);
        for k in 0..n0 {
            a[((i - 1) * n0 + k, d + k)] = 1.0;
        }
        a
    }

    pub fn lift(&self, x: &BlockVector, y: &[f64]) -> BlockVector {
        let mut z = vec![y.to_vec()];
        z.extend(x.blocks().iter().map(|xi| concat(xi, y)));
        BlockVector::new(z)
    }

    /// Inverse of [`lift`](Self::lift); the coupling variable is read from block 0.
    pub fn restrict(&self, z: &BlockVector) -> (BlockVector, Vec<f64>) {
        let x = self.source.blocks.iter().zip(&z.blocks()[1..]).map(|(b, zi)| zi[..b.dim()].to_vec()).collect();
        (BlockVector::new(x), z.block(0).to_vec())
    }

    /// The consensus multiplier of block `i` cancels the block's Lagrangian
    /// gradient in its copy of the coupling variable.
    pub fn forward(&self, point: &PdPoint, tol: f64) -> Result<(DdPoint, TransformCertificate), TransformError> {
        self.check_blocks(point.x.block_count())?;
        let source_residual = point.residual(&self.source)?;
        require_stationary(source_residual, tol)?;
        let n0 = self.source.coupling_dim();
        let src = &point.multipliers;
        let n_master = self.source.master_ineq.as_ref().map_or(0, |g| g.dim_out());
        let split = src.ineq.len() - n_master;
        let mut ineq = src.ineq[split..].to_vec();
        ineq.extend_from_slice(&src.ineq[..split]);

        let mut eq = Vec::with_capacity(self.image.n_coupled_eq);
        let (mut ic, mut ec) = (0, 0);
        for (b, xi) in self.source.blocks.iter().zip(point.x.blocks()) {
            let z = concat(xi, &point.y);
            let d = b.dim();
            let (r, m) = (b.n_coupled_ineq(), b.n_coupled_eq());
            let mut grad = Vector::from_vec(b.objective.gradient(&z));
            if let Some(g) = &b.coupled_ineq {
                grad += g.jacobian_t(&z) * Vector::from_column_slice(&src.ineq[ic..ic + r]);
            }
            if let Some(h) = &b.coupled_eq {
                grad += h.jacobian_t(&z) * Vector::from_column_slice(&src.eq[ec..ec + m]);
            }
            eq.extend(grad.rows(d, n0).iter().map(|v| -v));
            ic += r + b.n_local_ineq();
            ec += m;
        }
        eq.extend_from_slice(&src.eq);

        let z = self.lift(&point.x, &point.y);
        let nlp = FullDdNlp::new(&self.image);
        let image = DdPoint { multipliers: bound_multipliers(&nlp, &z.flatten(), ineq, eq), x: z };
        let image_residual = image.residual(&self.image)?;
        let cert = certificate(Transform::PdToDd, MapDirection::Forward, source_residual, image_residual, src, &image.multipliers);
        Ok((image, cert))
    }

    pub fn backward(&self, point: &DdPoint, tol: f64) -> Result<(PdPoint, TransformCertificate), TransformError> {
        self.check_blocks(point.x.block_count().saturating_sub(1))?;
        let source_residual = point.residual(&self.image)?;
        require_stationary(source_residual, tol)?;
        let src = &point.multipliers;
        let n_master = self.source.master_ineq.as_ref().map_or(0, |g| g.dim_out());
        let mut ineq = src.ineq[n_master..].to_vec();
        ineq.extend_from_slice(&src.ineq[..n_master]);
        let eq = src.eq[self.eq_offsets.first().copied().unwrap_or(0)..].to_vec();

        let (x, y) = self.restrict(&point.x);
        let nlp = FullPdNlp::new(&self.source);
        let multipliers = bound_multipliers(&nlp, &nlp.pack(&x, &y), ineq, eq);
        let image = PdPoint { x, y, multipliers };
        let image_residual = image.residual(&self.source)?;
        let cert = certificate(Transform::PdToDd, MapDirection::Backward, source_residual, image_residual, src, &image.multipliers);
        Ok((image, cert))
    }

    fn check_blocks(&self, got: usize) -> Result<(), TransformError> {
        let expected = self.source.block_count();
        if got == expected {
            Ok(())
        } else {
            Err(TransformError::BlockCount { expected, got })
        }
    }
}

fn certificate(
    transform: Transform,
    direction: MapDirection,
    source_residual: KktResidual,
    image_residual: KktResidual,
    source: &MultiplierSet,
    image: &MultiplierSet,
) -> TransformCertificate {
    TransformCertificate {
        transform,
        direction,
        source_residual,
        image_residual,
        multipliers: MultiplierRecord { source: source.clone(), image: image.clone() },
    }
}

/// The coupling-variable reformulation of a coupling-constraint problem.
///
/// The coupling variable stacks per-block slacks: first the inequality slacks of
/// every block, then the equality slacks. Block `i` keeps its variable and local
/// constraints and gains `g̃_i(x_i) − s_i ≤ 0` and `h̃_i(x_i) − t_i = 0`. The slack
/// set `Σ s_i ≤ 0, Σ t_i = 0` is not a box, so it is expressed through master
/// inequalities, with the equality written as a pair of opposite inequalities.
#[derive(Clone)]
pub struct DdToPd {
    source: ProblemDD,
    image: ProblemPD,
}

pub fn dd_to_pd(problem: &ProblemDD) -> Result<DdToPd, TransformError> {
    let (r, m, count) = (problem.n_coupled_ineq, problem.n_coupled_eq, problem.block_count());
    let ny = count * (r + m);
    let mut blocks = Vec::with_capacity(count);
    for (i, b) in problem.blocks.iter().enumerate() {
        let d = b.dim();
        let dim = d + ny;
        let f = b.objective.clone();
        let fg = f.clone();
        let objective = FnOracle::new(
            dim,
            move |z| f.value(&z[..d]),
            move |z| {
                let mut g = fg.gradient(&z[..d]);
                g.resize(dim, 0.0);
                g
            },
        );
        let mut block = PdBlock::new(b.set.clone(), objective.shared());
        block.coupled_ineq = b.coupled_ineq.as_ref().map(|g| slack_constraint(g.clone(), d, ny, i * r));
        block.coupled_eq = b.coupled_eq.as_ref().map(|h| slack_constraint(h.clone(), d, ny, count * r + i * m));
        block.local_ineq = b.local_ineq.clone();
        blocks.push(block);
    }
    let mut image = ProblemPD::new(BoxSet::unbounded(ny), blocks)?;
    if r + m > 0 {
        let mut a = Matrix::zeros(r + 2 * m, ny);
        for i in 0..count {
            for k in 0..r {
                a[(k, i * r + k)] = 1.0;
            }
            for k in 0..m {
                a[(r + k, count * r + i * m + k)] = 1.0;
                a[(r + m + k, count * r + i * m + k)] = -1.0;
            }
        }
        image = image.with_master_ineq(Arc::new(AffineMap { a, b: Vector::zeros(r + 2 * m) }))?;
    }
    Ok(DdToPd { source: problem.clone(), image })
}

/// `c(x) − s` where `s` is the slice of the slack vector starting at `at`.
fn slack_constraint(c: VecFunc, d: usize, ny: usize, at: usize) -> VecFunc {
    let rows = c.dim_out();
    let cj = c.clone();
    FnVectorOracle::new(
        d + ny,
        rows,
        move |z| c.eval(&z[..d]).iter().zip(&z[d + at..d + at + rows]).map(|(v, s)| v - s).collect(),
        move |z| {
            let mut j = Matrix::zeros(d + ny, rows);
            j.view_mut((0, 0), (d, rows)).copy_from(&cj.jacobian_t(&z[..d]));
            for k in 0..rows {
                j[(d + at + k, k)] = -1.0;
            }
            j
        },
    )
    .shared()
}

impl DdToPd {
    pub fn source(&self) -> &ProblemDD {
        &self.source
    }
    pub fn image(&self) -> &ProblemPD {
        &self.image
    }

    /// Slacks set to each block's own constraint values.
    pub fn lift(&self, x: &BlockVector) -> (BlockVector, Vec<f64>) {
        let (r, m, count) = (self.source.n_coupled_ineq, self.source.n_coupled_eq, self.source.block_count());
        let mut slack = vec![0.0; count * (r + m)];
        for (i, (b, xi)) in self.source.blocks.iter().zip(x.blocks()).enumerate() {
            if let Some(g) = &b.coupled_ineq {
                slack[i * r..(i + 1) * r].copy_from_slice(&g.eval(xi));
            }
            if let Some(h) = &b.coupled_eq {
                slack[count * r + i * m..count * r + (i + 1) * m].copy_from_slice(&h.eval(xi));
            }
        }
        (x.clone(), slack)
    }

    /// Every block's slack multipliers equal the coupling multipliers; the equality
    /// multiplier splits into the positive and negative parts of its inequality pair.
    pub fn forward(&self, point: &DdPoint, tol: f64) -> Result<(PdPoint, TransformCertificate), TransformError> {
        self.check_blocks(point.x.block_count())?;
        let source_residual = point.residual(&self.source)?;
        require_stationary(source_residual, tol)?;
        let (r, m) = (self.source.n_coupled_ineq, self.source.n_coupled_eq);
        let src = &point.multipliers;
        let (mu, lambda) = (&src.ineq[..r], &src.eq[..m]);
        let mut ineq = Vec::new();
        let mut eq = Vec::new();
        let mut lc = r;
        for b in &self.source.blocks {
            if b.coupled_ineq.is_some() {
                ineq.extend_from_slice(mu);
            }
            let l = b.local_ineq.as_ref().map_or(0, |g| g.dim_out());
            ineq.extend_from_slice(&src.ineq[lc..lc + l]);
            lc += l;
            if b.coupled_eq.is_some() {
                eq.extend_from_slice(lambda);
            }
        }
        if r + m > 0 {
            ineq.extend_from_slice(mu);
            ineq.extend(lambda.iter().map(|v| v.max(0.0)));
            ineq.extend(lambda.iter().map(|v| (-v).max(0.0)));
        }
        let (x, y) = self.lift(&point.x);
        let nlp = FullPdNlp::new(&self.image);
        let multipliers = bound_multipliers(&nlp, &nlp.pack(&x, &y), ineq, eq);
        let image = PdPoint { x, y, multipliers };
        let image_residual = image.residual(&self.image)?;
        let cert = certificate(Transform::DdToPd, MapDirection::Forward, source_residual, image_residual, src, &image.multipliers);
        Ok((image, cert))
    }

    /// The coupling multipliers are read from the master inequalities.
    pub fn backward(&self, point: &PdPoint, tol: f64) -> Result<(DdPoint, TransformCertificate), TransformError> {
        self.check_blocks(point.x.block_count())?;
        let source_residual = point.residual(&self.image)?;
        require_stationary(source_residual, tol)?;
        let (r, m) = (self.source.n_coupled_ineq, self.source.n_coupled_eq);
        let src = &point.multipliers;
        let master = &src.ineq[src.ineq.len() - if r + m > 0 { r + 2 * m } else { 0 }..];
        let mut ineq = master[..r].to_vec();
        let eq: Vec<f64> = (0..m).map(|k| master[r + k] - master[r + m + k]).collect();
        let mut pc = 0;
        for b in &self.source.blocks {
            if b.coupled_ineq.is_some() {
                pc += r;
            }
            let l = b.local_ineq.as_ref().map_or(0, |g| g.dim_out());
            ineq.extend_from_slice(&src.ineq[pc..pc + l]);
            pc += l;
        }
        let nlp = FullDdNlp::new(&self.source);
        let multipliers = bound_multipliers(&nlp, &point.x.flatten(), ineq, eq);
        let image = DdPoint { x: point.x.clone(), multipliers };
        let image_residual = image.residual(&self.source)?;
        let cert = certificate(Transform::DdToPd, MapDirection::Backward, source_residual, image_residual, src, &image.multipliers);
        Ok((image, cert))
    }

    fn check_blocks(&self, got: usize) -> Result<(), TransformError> {
        let expected = self.source.block_count();
        if got == expected {
            Ok(())
        } else {
            Err(TransformError::BlockCount { expected, got })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_block(d: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> crate::model::Func {
        let grad = move |_: &[f64]| vec![0.0; d];
        FnOracle::new(d, f, grad).shared()
    }

    #[test]
    fn single_block_consensus_shapes() {
        let block = PdBlock::new(BoxSet::unbounded(1), scalar_block(2, |_| 0.0));
        let problem = ProblemPD::new(BoxSet::unbounded(1), vec![block]).unwrap();
        let t = pd_to_dd(&problem).unwrap();
        assert_eq!(t.consensus_block(0), Matrix::from_row_slice(1, 1, &[-1.0]));
        assert_eq!(t.consensus_block(1), Matrix::from_row_slice(1, 2, &[0.0, 1.0]));
        assert_eq!(t.image().n_coupled_ineq, 0);
        assert_eq!(t.image().n_coupled_eq, 1);

        // z-consistency is exactly the consensus equality
        let (_, h) = t.image().coupling_sums(&BlockVector::new(vec![vec![0.3], vec![5.0, 0.3]])).unwrap();
        assert_eq!(h, vec![0.0]);
        let (_, h) = t.image().coupling_sums(&BlockVector::new(vec![vec![0.3], vec![5.0, 0.5]])).unwrap();
        assert!((h[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn lifting_keeps_feasibility_and_objective() {
        for seed in 0..20 {
            let (problem, point) = desk::random_pd_instance(seed);
            let t = pd_to_dd(&problem).unwrap();
            let z = t.lift(&point.x, &point.y);
            let m = t.image().violation_metrics(&z).unwrap();
            assert!(m.coupling <= 1e-12 && m.max_ineq <= 1e-12, "seed {seed}: {m:?}");
            let a = problem.objective(&point.x, &point.y).unwrap();
            let b = t.image().objective(&z).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn slack_lifting_keeps_feasibility() {
        for seed in 0..20 {
            let (problem, point) = desk::random_dd_instance(seed);
            let t = dd_to_pd(&problem).unwrap();
            let (x, s) = t.lift(&point.x);
            let m = t.image().violation_metrics(&x, &s).unwrap();
            assert!(m.max_ineq <= 1e-12 && m.max_eq <= 1e-12, "seed {seed}: {m:?}");
            let a = problem.objective(&point.x).unwrap();
            assert!((a - t.image().objective(&x, &s).unwrap()).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn perturbed_point_is_rejected() {
        let (problem, mut point) = desk::random_pd_instance(3);
        let t = pd_to_dd(&problem).unwrap();
        point.y[0] += 1e-3;
        point.multipliers.eq.iter_mut().for_each(|v| *v += 0.1);
        let err = t.forward(&point, 1e-10).unwrap_err();
        assert!(matches!(err, TransformError::NotStationary { .. }));
    }

    #[test]
    fn forward_then_backward_returns_the_source() {
        for seed in 0..10 {
            let (problem, point) = desk::random_pd_instance(seed);
            let t = pd_to_dd(&problem).unwrap();
            let (image, c1) = t.forward(&point, 1e-10).unwrap();
            let (back, c2) = t.backward(&image, 1e-8).unwrap();
            assert!(c1.preserves_stationarity() && c2.preserves_stationarity());
            assert_eq!(back.x, point.x);
            assert_eq!(back.y, point.y);
            assert!((c2.image_residual.total() - c1.source_residual.total()).abs() <= 1e-10);

            let (problem, point) = desk::random_dd_instance(seed);
            let t = dd_to_pd(&problem).unwrap();
            let (image, c1) = t.forward(&point, 1e-10).unwrap();
            let (back, c2) = t.backward(&image, 1e-8).unwrap();
            assert_eq!(back.x, point.x);
            assert!((c2.image_residual.total() - c1.source_residual.total()).abs() <= 1e-10);
        }
    }

    #[test]
    fn wrong_block_count_is_reported() {
        let (problem, point) = desk::random_dd_instance(1);
        let t = dd_to_pd(&problem).unwrap();
        let mut short = point.clone();
        short.x = BlockVector::new(vec![]);
        assert!(matches!(t.forward(&short, 1.0), Err(TransformError::BlockCount { .. })));
    }
}
