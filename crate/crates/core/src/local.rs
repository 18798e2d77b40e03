//! Small dense local solver used when a block has no problem-specific solver:
//! an augmented-Lagrangian outer loop around a projected-gradient inner loop.

use crate::kkt::{MultiplierSet, Nlp};
use crate::model::Vector;

#[derive(Debug, Clone, Copy)]
pub struct LocalOptions {
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol: f64,
    pub penalty: f64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self { max_outer: 60, max_inner: 5000, tol: 1e-11, penalty: 10.0 }
    }
}

#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub x: Vec<f64>,
    pub multipliers: MultiplierSet,
    pub violation: f64,
    pub feasible: bool,
}

fn violation(g: &[f64], h: &[f64]) -> f64 {
    g.iter().map(|v| v.max(0.0)).chain(h.iter().map(|v| v.abs())).fold(0.0, f64::max)
}

struct Augmented<'a, P: Nlp + ?Sized> {
    nlp: &'a P,
    mu: Vec<f64>,
    lambda: Vec<f64>,
    rho: f64,
}

impl<P: Nlp + ?Sized> Augmented<'_, P> {
    fn value(&self, x: &[f64]) -> f64 {
        let g = self.nlp.ineq(x);
        let h = self.nlp.eq(x);
        let mut v = self.nlp.objective(x);
        for (gj, mj) in g.iter().zip(&self.mu) {
            let s = (gj + mj / self.rho).max(0.0);
            v += 0.5 * self.rho * (s * s - (mj / self.rho).powi(2));
        }
        for (hj, lj) in h.iter().zip(&self.lambda) {
            v += lj * hj + 0.5 * self.rho * hj * hj;
        }
        v
    }

    fn gradient(&self, x: &[f64]) -> Vector {
        let g = self.nlp.ineq(x);
        let h = self.nlp.eq(x);
        let wg: Vec<f64> = g.iter().zip(&self.mu).map(|(gj, mj)| (mj + self.rho * gj).max(0.0)).collect();
        let wh: Vec<f64> = h.iter().zip(&self.lambda).map(|(hj, lj)| lj + self.rho * hj).collect();
        self.nlp.lagrangian_gradient(x, &wg, &wh)
    }
}

fn projected_gradient<P: Nlp + ?Sized>(al: &Augmented<'_, P>, x0: &[f64], opts: &LocalOptions) -> Vec<f64> {
    let bounds = al.nlp.bounds();
    let mut x = bounds.project(x0);
    let mut fx = al.value(&x);
    let mut step = 1.0;
    for _ in 0..opts.max_inner {
        let g = al.gradient(&x);
        let full: Vec<f64> = x.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
        let pg = bounds.project(&full);
        let res = x.iter().zip(&pg).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if res <= opts.tol * (1.0 + g.amax()) {
            break;
        }
        let mut accepted = false;
        for _ in 0..80 {
            let trial: Vec<f64> = x.iter().zip(g.iter()).map(|(a, b)| a - step * b).collect();
            let trial = bounds.project(&trial);
            let decrease: f64 = x.iter().zip(&trial).zip(g.iter()).map(|((a, t), gi)| gi * (a - t)).sum();
            let ft = al.value(&trial);
            if ft <= fx - 1e-4 * decrease {
                let moved = x.iter().zip(&trial).map(|(a, t)| (a - t).abs()).fold(0.0, f64::max);
                x = trial;
                fx = ft;
                step *= 2.0;
                accepted = moved > 0.0;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    x
}

/// Local minimizer of `nlp` from `x0`, with multiplier estimates from the outer loop.
pub fn solve_local<P: Nlp + ?Sized>(nlp: &P, x0: &[f64], opts: &LocalOptions) -> LocalSolution {
    let mut al = Augmented { nlp, mu: vec![0.0; nlp.n_ineq()], lambda: vec![0.0; nlp.n_eq()], rho: opts.penalty };
    let mut x = nlp.bounds().project(x0);
    let mut prev = f64::INFINITY;
    for _ in 0..opts.max_outer {
        x = projected_gradient(&al, &x, opts);
        let g = nlp.ineq(&x);
        let h = nlp.eq(&x);
        let viol = violation(&g, &h);
        for (m, gj) in al.mu.iter_mut().zip(&g) {
            *m = (*m + al.rho * gj).max(0.0);
        }
        for (l, hj) in al.lambda.iter_mut().zip(&h) {
            *l += al.rho * hj;
        }
        if viol <= 1e-12 {
            break;
        }
        if viol > 0.25 * prev {
            al.rho = (al.rho * 10.0).min(1e12);
        }
        prev = viol;
    }
    let viol = violation(&nlp.ineq(&x), &nlp.eq(&x));
    let mut multipliers = MultiplierSet::zeros(nlp.n_ineq(), nlp.n_eq(), nlp.dim());
    multipliers.ineq = al.mu;
    multipliers.eq = al.lambda;
    LocalSolution { x, multipliers, violation: viol, feasible: viol <= 1e-7 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kkt::OracleNlp;
    use crate::model::{BoxSet, FnOracle, FnVectorOracle};

    #[test]
    fn equality_constrained_quadratic() {
        // min x² + y² s.t. x + y = 1
        let nlp = OracleNlp {
            objective: FnOracle::new(2, |x| x[0] * x[0] + x[1] * x[1], |x| vec![2.0 * x[0], 2.0 * x[1]]).shared(),
            ineq: None,
            eq: Some(FnVectorOracle::scalar(2, |x| x[0] + x[1] - 1.0, |_| vec![1.0, 1.0]).shared()),
            bounds: BoxSet::unbounded(2),
        };
        let s = solve_local(&nlp, &[3.0, -2.0], &LocalOptions::default());
        assert!((s.x[0] - 0.5).abs() < 1e-7 && (s.x[1] - 0.5).abs() < 1e-7);
        assert!((s.multipliers.eq[0] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn infeasible_is_flagged() {
        let nlp = OracleNlp {
            objective: FnOracle::new(1, |x| x[0], |_| vec![1.0]).shared(),
            ineq: Some(FnVectorOracle::scalar(1, |x| 2.0 - x[0], |_| vec![-1.0]).shared()),
            eq: None,
            bounds: BoxSet::uniform(1, -1.0, 1.0).unwrap(),
        };
        assert!(!solve_local(&nlp, &[0.0], &LocalOptions::default()).feasible);
    }
}
