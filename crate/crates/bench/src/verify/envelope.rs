use ncdecomp::dd::{dual_gradients, partial_lagrangian, solve_subproblem_dd, DdBlockSolution};
use ncdecomp::examples::{sample_example, Variant};
use ncdecomp::model::{ProblemDD, ProblemPD};
use ncdecomp::pd::{master_gradient_block, solve_subproblem_pd, BlockSolution};
use ncdecomp::rng;
use rand::Rng;

use super::{scaled_error, Check, Suite};

pub const INSTANCES: usize = 20;
pub const PRIMAL_TOL: f64 = 1e-4;
pub const DUAL_TOL: f64 = 1e-3;
const STEP: f64 = 1e-5;
/// Larger block moves between `y ± STEP` mean a switch of minimizer inside the stencil.
const BRANCH_JUMP: f64 = 1e-3;
const RETRIES: usize = 20;

fn block_sizes(n: usize) -> usize {
    if n % 2 == 0 { 2 } else { 5 }
}

fn solve_all(problem: &ProblemPD, y: f64) -> Option<Vec<BlockSolution>> {
    (0..problem.block_count()).map(|i| solve_subproblem_pd(problem, i, &[y]).ok()).collect()
}

fn max_move(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().zip(b).flat_map(|(u, v)| u.iter().zip(v).map(|(p, q)| (p - q).abs())).fold(0.0, f64::max)
}

/// Scaled error at a smooth point of one instance, or `None` if none was found.
fn primal_instance(v: Variant, n: usize) -> Option<f64> {
    let blocks = block_sizes(n);
    let params = sample_example(v, blocks, rng::stream_key(0xE1, &[v.number() as u64, n as u64]));
    let problem = params.pd_problem().ok()?;
    let mut r = rng::stream(0xE2, &[v.number() as u64, n as u64]);
    for _ in 0..RETRIES {
        let y = r.random_range(0.05..0.95);
        let (Some(mid), Some(up), Some(down)) = (solve_all(&problem, y), solve_all(&problem, y + STEP), solve_all(&problem, y - STEP))
        else {
            continue;
        };
        let xs = |s: &[BlockSolution]| s.iter().map(|b| b.x.clone()).collect::<Vec<_>>();
        if max_move(&xs(&mid), &xs(&up)) > BRANCH_JUMP || max_move(&xs(&mid), &xs(&down)) > BRANCH_JUMP {
            continue;
        }
        let value = |s: &[BlockSolution]| s.iter().map(|b| b.value).sum::<f64>();
        let fd = (value(&up) - value(&down)) / (2.0 * STEP);
        let analytic: f64 = mid
            .iter()
            .enumerate()
            .map(|(i, b)| master_gradient_block(&problem, i, &[y], &b.x, &b.multipliers)[0])
            .sum();
        return Some(scaled_error(analytic, fd));
    }
    None
}

fn dual_value(problem: &ProblemDD, sols: &[DdBlockSolution], lambda: f64) -> f64 {
    problem.blocks.iter().zip(sols).map(|(b, s)| partial_lagrangian(b, &s.x, &[], &[lambda])).sum()
}

fn tracked(problem: &ProblemDD, lambda: f64, warm: &[DdBlockSolution]) -> Option<Vec<DdBlockSolution>> {
    (0..problem.block_count()).map(|i| solve_subproblem_dd(problem, i, &[], &[lambda], Some(&warm[i].x)).ok()).collect()
}

fn dual_instance(n: usize) -> Option<f64> {
    let params = sample_example(Variant::Ex4, block_sizes(n), rng::stream_key(0xE3, &[n as u64]));
    let problem = params.dd_problem().ok()?;
    let mut r = rng::stream(0xE4, &[n as u64]);
    for _ in 0..RETRIES {
        let lambda = r.random_range(-1.0..1.0);
        let mid: Option<Vec<_>> = (0..problem.block_count()).map(|i| solve_subproblem_dd(&problem, i, &[], &[lambda], None).ok()).collect();
        let Some(mid) = mid else { continue };
        let (Some(up), Some(down)) = (tracked(&problem, lambda + STEP, &mid), tracked(&problem, lambda - STEP, &mid)) else {
            continue;
        };
        let xs = |s: &[DdBlockSolution]| s.iter().map(|b| b.x.clone()).collect::<Vec<_>>();
        if max_move(&xs(&mid), &xs(&up)) > BRANCH_JUMP || max_move(&xs(&mid), &xs(&down)) > BRANCH_JUMP {
            continue;
        }
        let fd = (dual_value(&problem, &up, lambda + STEP) - dual_value(&problem, &down, lambda - STEP)) / (2.0 * STEP);
        let (_, eq) = dual_gradients(&problem, &mid).ok()?;
        return Some(scaled_error(eq[0], fd));
    }
    None
}

fn summarize(name: String, errors: Vec<Option<f64>>, tol: f64) -> Check {
    let found: Vec<f64> = errors.iter().flatten().copied().collect();
    let worst = found.iter().copied().fold(0.0, f64::max);
    let passed = found.len() == errors.len() && worst <= tol;
    Check::asserted(name, passed, format!("{}/{} instances, worst scaled error {worst:.2e} (limit {tol:.0e})", found.len(), errors.len()))
}

/// Summed block envelope gradients against central differences of the optimal value.
pub fn primal_envelope() -> Suite {
    Suite::timed("primal envelope gradient", || {
        [Variant::Ex1, Variant::Ex2]
            .into_iter()
            .map(|v| summarize(format!("{v} envelope"), (0..INSTANCES).map(|n| primal_instance(v, n)).collect(), PRIMAL_TOL))
            .collect()
    })
}

/// Dual gradients against central differences of the branch-tracked dual function.
pub fn dual_envelope() -> Suite {
    Suite::timed("dual envelope gradient", || {
        vec![summarize(format!("{} dual gradient", Variant::Ex4), (0..INSTANCES).map(dual_instance).collect(), DUAL_TOL)]
    })
}
