use ncdecomp::dd::solve_subproblem_dd;
use ncdecomp::examples::coupled::{AnchorTerm, CoupledBlockParams};
use ncdecomp::examples::separable::{SeparableBlockParams, X_HI, X_LO};
use ncdecomp::examples::{sample_example, Algorithm, AlgorithmParams, Coefficients, ConstraintKind, ExampleParams, Variant};
use ncdecomp::model::BlockVector;
use ncdecomp::pd::solve_subproblem_pd;
use ncdecomp::rng;
use ncdecomp::sdd::SddApproxBuilder;
use ncdecomp::spd::SpdApproxBuilder;
use rand::Rng;
use rayon::prelude::*;

use super::{scaled_error, Check, Suite};

pub const BLOCKS: usize = 1000;
pub const TOL: f64 = 1e-6;
const COUPLED_STEP: f64 = 1e-4;
const SEPARABLE_STEP: f64 = 1e-5;
const ZOOM_ROUNDS: usize = 8;
const ZOOM_POINTS: usize = 80;

/// Dense grid over `[lo, hi]`, then repeated refinement around every grid-local
/// minimum so narrow basins are not lost.
pub fn grid_minimum(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).ceil() as usize;
    let xs: Vec<f64> = (0..=n).map(|k| (lo + k as f64 * step).min(hi)).collect();
    let vs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut best = vs.iter().copied().fold(f64::INFINITY, f64::min);
    for k in 0..vs.len() {
        let left = if k == 0 { f64::INFINITY } else { vs[k - 1] };
        let right = vs.get(k + 1).copied().unwrap_or(f64::INFINITY);
        if vs[k] > left || vs[k] > right {
            continue;
        }
        let (mut x, mut h) = (xs[k], step);
        for _ in 0..ZOOM_ROUNDS {
            let (a, b) = ((x - 2.0 * h).max(lo), (x + 2.0 * h).min(hi));
            h = (b - a) / ZOOM_POINTS as f64;
            x = (0..=ZOOM_POINTS).map(|j| a + j as f64 * h).min_by(|p, q| f(*p).total_cmp(&f(*q))).unwrap_or(x);
        }
        best = best.min(f(x));
    }
    best
}

/// Minimizer of `b1 x2 + b2 x2²` subject to `c1 x2 ≤ rhs`.
fn best_x2(b1: f64, b2: f64, c1: f64, rhs: f64, equality: bool) -> f64 {
    let boundary = rhs / c1;
    let free = -b1 / (2.0 * b2);
    if equality || c1 * free > rhs { boundary } else { free }
}

/// Block objective written out from the coefficients.
fn coupled_objective(p: &CoupledBlockParams, shift: u32, x1: f64, x2: f64, y: f64) -> f64 {
    let poly: f64 = (0..3)
        .map(|j| (p.a[j][0] + p.a[j][1] * y + p.a[j][2] * y * y) * x1.powi((j as u32 + 1 + shift) as i32))
        .sum();
    poly + p.b1 * x2 + p.b2 * x2 * x2
}

fn coupled_blocks(params: &ExampleParams) -> &[CoupledBlockParams] {
    match &params.coefficients {
        Coefficients::Coupled(c) => &c.blocks,
        Coefficients::Separable(_) => &[],
    }
}

fn separable_blocks(params: &ExampleParams) -> (&[SeparableBlockParams], f64) {
    match &params.coefficients {
        Coefficients::Separable(s) => (&s.blocks, s.share()),
        Coefficients::Coupled(_) => (&[], 0.0),
    }
}

fn summarize(name: String, errors: Vec<Option<f64>>) -> Check {
    let total = errors.len();
    let ok = errors.iter().filter(|e| e.is_some_and(|e| e <= TOL)).count();
    let worst = errors.iter().flatten().copied().fold(0.0, f64::max);
    Check::asserted(name, ok == total, format!("{ok}/{total} blocks within {TOL:.0e}, worst scaled gap {worst:.2e}"))
}

fn uniform(seed: u64, tag: u64, i: usize, lo: f64, hi: f64) -> f64 {
    rng::stream(seed, &[tag, i as u64]).random_range(lo..hi)
}

fn pd_blocks(v: Variant, seed: u64) -> Check {
    let params = sample_example(v, BLOCKS, seed);
    let Ok(problem) = params.pd_problem() else {
        return Check::asserted(format!("{v} pd block"), false, "instance could not be built");
    };
    let equality = v.kind() == ConstraintKind::Equality;
    let errors = coupled_blocks(&params)
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let y = uniform(seed, 1, i, 0.0, 1.0);
            let closed = solve_subproblem_pd(&problem, i, &[y]).ok()?.value;
            let reduced = |x1: f64| {
                let x2 = best_x2(p.b1, p.b2, p.c1, p.c2 * x1 * x1 / (y + 1.0) - p.c0, equality);
                coupled_objective(p, v.shift(), x1, x2, y)
            };
            Some(scaled_error(closed, grid_minimum(reduced, -1.0, 1.0, COUPLED_STEP)))
        })
        .collect();
    summarize(format!("{v} pd block"), errors)
}

fn spd_blocks(v: Variant, seed: u64) -> Check {
    let params = sample_example(v, BLOCKS, seed);
    let name = format!("{v} spd block");
    let Some(builder) = AlgorithmParams::tuned(Algorithm::Spd, v).and_then(|t| params.spd_builder(&t).ok()) else {
        return Check::asserted(name, false, "approximation could not be built");
    };
    let blocks = coupled_blocks(&params);
    let yk = uniform(seed, 2, 0, 0.0, 1.0);
    let anchors: Vec<Vec<f64>> = blocks
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let x1 = uniform(seed, 3, i, -1.0, 1.0);
            vec![x1, p.active_x2(x1, yk)]
        })
        .collect();
    let Ok(approx) = builder.build(&BlockVector::new(anchors.clone()), &[yk]) else {
        return Check::asserted(name, false, "approximation could not be built");
    };
    let errors = blocks
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let y = uniform(seed, 4, i, 0.0, 1.0);
            let block = &approx.blocks[i];
            let sol = block.solve(i, &[y]).ok()?;
            let closed = block.value(&sol.x, &[y]);
            let majorant = p.constraint_majorant([anchors[i][0], anchors[i][1], yk], AnchorTerm::Curvature);
            let reduced = |x1: f64| {
                let x2 = best_x2(p.b1, p.b2, p.c1, -majorant(x1, 0.0, y), false);
                block.value(&[x1, x2], &[y])
            };
            Some(scaled_error(closed, grid_minimum(reduced, -1.0, 1.0, COUPLED_STEP)))
        })
        .collect();
    summarize(name, errors)
}

fn lagrangian(p: &SeparableBlockParams, shift: u32, share: f64, weight: f64, x: f64) -> f64 {
    let f: f64 = (0..3).map(|j| p.a[j] * x.powi((j as u32 + 1 + shift) as i32)).sum();
    let g: f64 = share + (0..3).map(|j| p.b[j] * x.powi(j as i32 + 1)).sum::<f64>();
    f + weight * g
}

fn dd_blocks(v: Variant, seed: u64) -> Check {
    let params = sample_example(v, BLOCKS, seed);
    let Ok(problem) = params.dd_problem() else {
        return Check::asserted(format!("{v} dd block"), false, "instance could not be built");
    };
    let (blocks, share) = separable_blocks(&params);
    let errors = blocks
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let (mu, lambda, w) = match v.kind() {
                ConstraintKind::Equality => {
                    let l = uniform(seed, 5, i, -2.0, 2.0);
                    (vec![], vec![l], l)
                }
                ConstraintKind::Inequality => {
                    let m = uniform(seed, 5, i, 0.0, 2.0);
                    (vec![m], vec![], m)
                }
            };
            let closed = solve_subproblem_dd(&problem, i, &mu, &lambda, None).ok()?.value;
            let oracle = grid_minimum(|x| lagrangian(p, v.shift(), share, w, x), X_LO, X_HI, SEPARABLE_STEP);
            Some(scaled_error(closed, oracle))
        })
        .collect();
    summarize(format!("{v} dd block"), errors)
}

fn sdd_blocks(v: Variant, seed: u64) -> Check {
    let params = sample_example(v, BLOCKS, seed);
    let name = format!("{v} sdd block");
    let (blocks, _) = separable_blocks(&params);
    let anchors: Vec<Vec<f64>> = (0..blocks.len()).map(|i| vec![uniform(seed, 6, i, X_LO, X_HI)]).collect();
    let approx = AlgorithmParams::tuned(Algorithm::Sdd, v)
        .and_then(|t| params.sdd_builder(&t).ok())
        .and_then(|b| b.build(&BlockVector::new(anchors)).ok());
    let Some(approx) = approx else {
        return Check::asserted(name, false, "approximation could not be built");
    };
    let errors = (0..blocks.len())
        .into_par_iter()
        .map(|i| {
            let block = &approx.blocks[i];
            let mu = uniform(seed, 7, i, 0.0, 2.0);
            let model = |x: f64| block.objective(&[x]) + mu * block.coupled_ineq(&[x])[0];
            let closed = model(block.solve(&[mu], &[])[0]);
            Some(scaled_error(closed, grid_minimum(model, X_LO, X_HI, SEPARABLE_STEP)))
        })
        .collect();
    summarize(name, errors)
}

/// Closed-form block solvers of every example against grid search.
pub fn closed_form_oracle() -> Suite {
    Suite::timed("closed-form block solvers", || {
        let seed = |v: Variant, a: Algorithm| rng::stream_key(0x0C, &[v.number() as u64, a as u64]);
        let mut checks = Vec::new();
        for v in Variant::ALL {
            for a in Algorithm::ALL.into_iter().filter(|a| a.applies_to(v)) {
                checks.push(match a {
                    Algorithm::Pd => pd_blocks(v, seed(v, a)),
                    Algorithm::Spd => spd_blocks(v, seed(v, a)),
                    Algorithm::Dd => dd_blocks(v, seed(v, a)),
                    Algorithm::Sdd => sdd_blocks(v, seed(v, a)),
                });
            }
        }
        checks
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_finds_interior_and_boundary_minima() {
        assert!((grid_minimum(|x| (x - 0.123456789).powi(2), -1.0, 1.0, 1e-3)).abs() < 1e-14);
        assert!((grid_minimum(|x| x, -1.0, 1.0, 1e-3) + 1.0).abs() < 1e-15);
        // two basins whose depths differ by less than the coarse grid error
        let f = |x: f64| 1e4 * (x * x - 0.25).powi(2) + 1e-9 * x;
        assert!((grid_minimum(f, -1.0, 1.0, 1e-2) - f(-0.5)).abs() < 1e-9);
    }

    #[test]
    fn best_x2_respects_the_half_line() {
        // free minimizer 1 is feasible for x2 ≤ 2, infeasible for x2 ≤ 0.5
        assert_eq!(best_x2(-2.0, 1.0, 1.0, 2.0, false), 1.0);
        assert_eq!(best_x2(-2.0, 1.0, 1.0, 0.5, false), 0.5);
        assert_eq!(best_x2(-2.0, 1.0, -1.0, 0.5, false), 1.0);
        assert_eq!(best_x2(-2.0, 1.0, 1.0, 2.0, true), 2.0);
    }
}
