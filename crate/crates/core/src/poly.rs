//! Univariate polynomials on closed intervals: real roots, global minimization and
//! descent-basin tracking.
//!
//! Roots of polynomials up to degree three use closed forms followed by a few
//! Newton polishing steps. Higher degrees are isolated recursively: the roots of
//! `p'` split the interval into monotone pieces, each bracketing at most one root.

use std::f64::consts::PI;
use std::ops::{Add, Mul};

/// Coefficients in ascending order: `c[0] + c[1] x + c[2] x² + …`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly(Vec<f64>);

impl Poly {
    pub fn new(coeffs: Vec<f64>) -> Self {
        let mut p = Poly(coeffs);
        p.trim();
        p
    }

    /// `c·x^k`.
    pub fn monomial(c: f64, k: usize) -> Self {
        let mut v = vec![0.0; k + 1];
        v[k] = c;
        Poly::new(v)
    }

    fn trim(&mut self) {
        while self.0.len() > 1 && self.0.last() == Some(&0.0) {
            self.0.pop();
        }
        if self.0.is_empty() {
            self.0.push(0.0);
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len() - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly::new(vec![0.0]);
        }
        Poly::new(self.0.iter().enumerate().skip(1).map(|(k, &c)| k as f64 * c).collect())
    }

    fn scale_max(&self) -> f64 {
        self.0.iter().map(|c| c.abs()).fold(0.0, f64::max)
    }

    /// Drops leading coefficients that are negligible relative to the rest.
    fn effective(&self) -> Poly {
        let m = self.scale_max();
        let mut v = self.0.clone();
        while v.len() > 1 && v.last().is_some_and(|c| c.abs() <= 1e-14 * m) {
            v.pop();
        }
        Poly::new(v)
    }
}

impl Add for &Poly {
    type Output = Poly;
    fn add(self, rhs: &Poly) -> Poly {
        let n = self.0.len().max(rhs.0.len());
        Poly::new(
            (0..n)
                .map(|k| self.0.get(k).copied().unwrap_or(0.0) + rhs.0.get(k).copied().unwrap_or(0.0))
                .collect(),
        )
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut v = vec![0.0; self.0.len() + rhs.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in rhs.0.iter().enumerate() {
                v[i + j] += a * b;
            }
        }
        Poly::new(v)
    }
}

impl Mul<f64> for &Poly {
    type Output = Poly;
    fn mul(self, s: f64) -> Poly {
        Poly::new(self.0.iter().map(|c| c * s).collect())
    }
}

/// Real roots of `a x² + b x + c` (cancellation-free form), ascending.
pub fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { vec![] } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut r = if q == 0.0 { vec![0.0, 0.0] } else { vec![q / a, c / q] };
    r.sort_by(f64::total_cmp);
    r
}

/// Real roots of `a x³ + b x² + c x + d` by the depressed-cubic formulas, ascending.
///
/// A conjugate pair whose imaginary part is below `1e-10` (relative to the root
/// scale) is reported as a real root.
pub fn cubic_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    if a == 0.0 {
        return quadratic_roots(b, c, d);
    }
    let (bb, cc, dd) = (b / a, c / a, d / a);
    let shift = bb / 3.0;
    let p = cc - bb * bb / 3.0;
    let q = 2.0 * bb * bb * bb / 27.0 - bb * cc / 3.0 + dd;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let mut roots = Vec::with_capacity(3);
    if p == 0.0 && q == 0.0 {
        roots.push(-shift);
    } else if disc > 0.0 {
        let u = (-q / 2.0 - q.signum() * disc.sqrt()).cbrt();
        let v = if u == 0.0 { 0.0 } else { -p / (3.0 * u) };
        let t = u + v;
        roots.push(t - shift);
        let imag = 0.5 * 3f64.sqrt() * (u - v).abs();
        if imag <= 1e-10 * t.abs().max(1.0) {
            roots.push(-t / 2.0 - shift);
        }
    } else {
        let r = (-p / 3.0).sqrt();
        let arg = (3.0 * q / (2.0 * p) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
        let phi = arg.acos();
        for k in 0..3 {
            roots.push(2.0 * r * (phi / 3.0 - 2.0 * PI * k as f64 / 3.0).cos() - shift);
        }
    }
    roots.sort_by(f64::total_cmp);
    roots
}

fn polish(p: &Poly, dp: &Poly, mut x: f64) -> f64 {
    let mut fx = p.eval(x).abs();
    for _ in 0..6 {
        let d = dp.eval(x);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let cand = x - p.eval(x) / d;
        let fc = p.eval(cand).abs();
        if !(fc < fx) {
            break;
        }
        x = cand;
        fx = fc;
    }
    x
}

/// Root of `p` in `[a, b]` given `p(a)` and `p(b)` of opposite signs (safeguarded Newton).
fn bracketed_root(p: &Poly, dp: &Poly, mut a: f64, mut b: f64) -> f64 {
    let fa = p.eval(a);
    if fa > 0.0 {
        std::mem::swap(&mut a, &mut b);
    }
    // now p(a) < 0 < p(b), a and b possibly in either order
    let mut x = 0.5 * (a + b);
    for _ in 0..200 {
        let fx = p.eval(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let d = dp.eval(x);
        let newton = x - fx / d;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let next = if d != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (a + b) };
        if (hi - lo) <= 4.0 * f64::EPSILON * x.abs().max(1e-300) || next == x {
            return next;
        }
        x = next;
    }
    x
}

fn isolate(p: &Poly, lo: f64, hi: f64) -> Vec<f64> {
    match p.degree() {
        0 => vec![],
        1 => {
            let r = -p.0[0] / p.0[1];
            if (lo..=hi).contains(&r) {
                vec![r]
            } else {
                vec![]
            }
        }
        _ => {
            let dp = p.derivative();
            let mut knots = vec![lo];
            knots.extend(isolate(&dp, lo, hi).into_iter().filter(|&c| c > lo && c < hi));
            knots.push(hi);
            let mut roots = Vec::new();
            for w in knots.windows(2) {
                let (a, b) = (w[0], w[1]);
                let (fa, fb) = (p.eval(a), p.eval(b));
                if fa == 0.0 {
                    roots.push(a);
                } else if fa * fb < 0.0 {
                    roots.push(bracketed_root(p, &dp, a, b));
                }
            }
            if p.eval(hi) == 0.0 {
                roots.push(hi);
            }
            roots
        }
    }
}

fn dedup_sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * a.abs().max(b.abs()).max(1.0));
    v
}

/// Real roots of `p` lying in `[lo, hi]`, ascending and deduplicated.
pub fn roots_in(p: &Poly, lo: f64, hi: f64) -> Vec<f64> {
    let e = p.effective();
    let dp = p.derivative();
    let width = (hi - lo).abs().max(1.0);
    let raw = match e.degree() {
        0 => vec![],
        1 | 2 | 3 => {
            let c = |k: usize| e.0.get(k).copied().unwrap_or(0.0);
            cubic_roots(c(3), c(2), c(1), c(0))
                .into_iter()
                .filter(|r| r.is_finite())
                .map(|r| polish(p, &dp, r))
                .filter(|&r| r >= lo - 1e-12 * width && r <= hi + 1e-12 * width)
                .map(|r| r.clamp(lo, hi))
                .collect()
        }
        _ => isolate(&e, lo, hi).into_iter().map(|r| polish(p, &dp, r)).map(|r| r.clamp(lo, hi)).collect(),
    };
    dedup_sorted(raw)
}

/// Lowest value of `p` on `[lo, hi]`; ties go to the smaller argument.
pub fn minimize(p: &Poly, lo: f64, hi: f64) -> (f64, f64) {
    let mut cands = vec![lo, hi];
    cands.extend(roots_in(&p.derivative(), lo, hi));
    argmin_of(p, cands)
}

pub(crate) fn argmin_of(p: &Poly, cands: Vec<f64>) -> (f64, f64) {
    let mut best = (f64::NAN, f64::INFINITY);
    for x in cands {
        let v = p.eval(x);
        if v < best.1 || (v == best.1 && x < best.0) {
            best = (x, v);
        }
    }
    best
}

/// First-order stationary points of `min p` over `[lo, hi]`: interior critical points
/// and the endpoints where the derivative does not point inward.
pub fn stationary_points(p: &Poly, lo: f64, hi: f64) -> Vec<f64> {
    let dp = p.derivative();
    let mut pts: Vec<f64> = roots_in(&dp, lo, hi).into_iter().filter(|&x| x > lo && x < hi).collect();
    if dp.eval(lo) >= 0.0 {
        pts.push(lo);
    }
    if dp.eval(hi) <= 0.0 {
        pts.push(hi);
    }
    dedup_sorted(pts)
}

/// Local minimizer reached by descending from `start`.
///
/// This is the selection rule behind branch tracking: as the polynomial varies
/// continuously, so does the minimizer of the basin containing the previous point.
pub fn basin_minimizer(p: &Poly, lo: f64, hi: f64, start: f64) -> f64 {
    let x0 = start.clamp(lo, hi);
    let dp = p.derivative();
    let crit = roots_in(&dp, lo, hi);
    let slope = dp.eval(x0);
    let walk_left = |from: f64| -> f64 {
        let mut left: Vec<f64> = crit.iter().copied().filter(|&c| c < from && c > lo).collect();
        left.reverse();
        for (n, &c) in left.iter().enumerate() {
            let next = left.get(n + 1).copied().unwrap_or(lo);
            if dp.eval(0.5 * (c + next)) < 0.0 {
                return c;
            }
        }
        lo
    };
    let walk_right = |from: f64| -> f64 {
        let right: Vec<f64> = crit.iter().copied().filter(|&c| c > from && c < hi).collect();
        for (n, &c) in right.iter().enumerate() {
            let next = right.get(n + 1).copied().unwrap_or(hi);
            if dp.eval(0.5 * (c + next)) > 0.0 {
                return c;
            }
        }
        hi
    };
    if slope > 0.0 {
        if x0 == lo {
            lo
        } else {
            walk_left(x0)
        }
    } else if slope < 0.0 {
        if x0 == hi {
            hi
        } else {
            walk_right(x0)
        }
    } else {
        let curv = dp.derivative().eval(x0);
        if curv > 0.0 || x0 == lo || x0 == hi {
            return x0;
        }
        let (l, r) = (walk_left(x0), walk_right(x0));
        if p.eval(r) < p.eval(l) {
            r
        } else {
            l
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic_with_three_real_roots() {
        // (x-1)(x-2)(x+3) = x³ - 7x + 6
        let r = cubic_roots(1.0, 0.0, -7.0, 6.0);
        assert_eq!(r.len(), 3);
        for (a, b) in r.iter().zip([-3.0, 1.0, 2.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cubic_with_one_real_root() {
        // x³ + x + 10 has the single real root -2
        let r = cubic_roots(1.0, 0.0, 1.0, 10.0);
        assert_eq!(r.len(), 1);
        assert!((r[0] + 2.0).abs() < 1e-12);
    }

    #[test]
    fn cubic_double_root_is_kept() {
        // (x-1)²(x+2) = x³ - 3x + 2
        let r = roots_in(&Poly::new(vec![2.0, -3.0, 0.0, 1.0]), -5.0, 5.0);
        assert!(r.iter().any(|x| (x - 1.0).abs() < 1e-7));
        assert!(r.iter().any(|x| (x + 2.0).abs() < 1e-12));
    }

    #[test]
    fn quintic_roots_by_isolation() {
        // (x+0.5)(x-0.1)(x-0.3)(x-0.9)(x-2)
        let factors = [-0.5, 0.1, 0.3, 0.9, 2.0];
        let p = factors.iter().fold(Poly::new(vec![1.0]), |acc, &r| &acc * &Poly::new(vec![-r, 1.0]));
        let r = roots_in(&p, -1.0, 1.0);
        assert_eq!(r.len(), 4);
        for (a, b) in r.iter().zip([-0.5, 0.1, 0.3, 0.9]) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn nearly_vanishing_leading_coefficient() {
        // 1e-20 x³ + x - 0.25
        let r = roots_in(&Poly::new(vec![-0.25, 1.0, 0.0, 1e-20]), -1.0, 1.0);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn minimize_linear_picks_endpoint() {
        let (x, v) = minimize(&Poly::new(vec![0.0, 1.0]), -0.05, 0.05);
        assert_eq!((x, v), (-0.05, -0.05));
    }

    #[test]
    fn minimize_quartic_against_grid() {
        let p = Poly::new(vec![0.3, -1.2, -2.0, 0.7, 3.0]);
        let (_, v) = minimize(&p, -1.0, 1.0);
        let grid = (0..=200_000).map(|k| p.eval(-1.0 + k as f64 * 1e-5)).fold(f64::INFINITY, f64::min);
        assert!(v <= grid + 1e-12 && grid - v < 1e-8);
    }

    #[test]
    fn basin_follows_descent() {
        // double well x⁴ - x² with minima at ±1/√2
        let p = Poly::new(vec![0.0, 0.0, -1.0, 0.0, 1.0]);
        let m = 0.5f64.sqrt();
        assert!((basin_minimizer(&p, -1.0, 1.0, 0.2) - m).abs() < 1e-12);
        assert!((basin_minimizer(&p, -1.0, 1.0, -0.9) + m).abs() < 1e-12);
        // start on the local maximum
        let s = basin_minimizer(&p, -1.0, 1.0, 0.0);
        assert!((s.abs() - m).abs() < 1e-12);
    }

    #[test]
    fn stationary_points_include_kkt_endpoints() {
        // p = x on [-1, 1]: only -1 is stationary
        assert_eq!(stationary_points(&Poly::new(vec![0.0, 1.0]), -1.0, 1.0), vec![-1.0]);
    }
}
