use ncdecomp::examples::coupled::{AnchorTerm, CoupledBlockParams};
use ncdecomp::examples::separable::{constraint_majorant, sdd_surrogates, SeparableBlockParams, X_HI, X_LO};
use ncdecomp::examples::{sample_example, Algorithm, AlgorithmParams, Coefficients, Variant};
use ncdecomp::model::{BlockVector, FnOracle, FunctionOracle};
use ncdecomp::poly::Poly;
use ncdecomp::rng;
use ncdecomp::sca::{dc_linearize, taylor_quadratic_surrogate, verify_surrogate, SurrogateReport, SurrogateRole};
use ncdecomp::spd::SpdApproxBuilder;
use rand::Rng;

use super::{Check, Suite};

pub const SAMPLES: usize = 1000;
pub const TOUCH_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-6;
const BLOCKS: usize = 50;
/// Coupled-family samples draw `x2` from this range.
const X2_RANGE: f64 = 10.0;

/// Oracle whose gradient is a central difference. Only used for surrogates that
/// are at most quadratic, where the stencil is exact up to rounding.
struct SecantOracle<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> FunctionOracle for SecantOracle<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let h = 1e-3 * x[j].abs().max(1.0);
                let (mut p, mut m) = (x.to_vec(), x.to_vec());
                p[j] += h;
                m[j] -= h;
                ((self.f)(&p) - (self.f)(&m)) / (2.0 * h)
            })
            .collect()
    }
}

fn poly_oracle(p: Poly) -> FnOracle {
    let d = p.derivative();
    FnOracle::new(1, move |x| p.eval(x[0]), move |x| vec![d.eval(x[0])])
}

/// Worst-case merge of per-anchor reports.
#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    report: SurrogateReport,
    anchors: usize,
    anchors_violated: usize,
    samples: usize,
}

impl Tally {
    fn add(&mut self, r: SurrogateReport, samples: usize) {
        self.report.touching_err = self.report.touching_err.max(r.touching_err);
        self.report.gradient_err = self.report.gradient_err.max(r.gradient_err);
        self.report.majorization_violations += r.majorization_violations;
        self.anchors += 1;
        self.anchors_violated += usize::from(r.majorization_violations > 0);
        self.samples += samples;
    }

    fn ok(&self, role: SurrogateRole) -> bool {
        let r = &self.report;
        r.gradient_err <= GRADIENT_TOL
            && (role == SurrogateRole::Objective || (r.touching_err <= TOUCH_TOL && r.majorization_violations == 0))
    }

    fn detail(&self, role: SurrogateRole) -> String {
        let r = &self.report;
        match role {
            SurrogateRole::Objective => format!("{} anchors, worst gradient error {:.1e}", self.anchors, r.gradient_err),
            SurrogateRole::Constraint => format!(
                "{} anchors, touching {:.1e}, gradient {:.1e}, {} violations in {} samples ({} anchors affected)",
                self.anchors, r.touching_err, r.gradient_err, r.majorization_violations, self.samples, self.anchors_violated
            ),
        }
    }
}

fn separable(v: Variant, seed: u64) -> (Vec<SeparableBlockParams>, f64) {
    match sample_example(v, BLOCKS, seed).coefficients {
        Coefficients::Separable(s) => {
            let share = s.share();
            (s.blocks, share)
        }
        Coefficients::Coupled(_) => (vec![], 0.0),
    }
}

fn box_samples(r: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..SAMPLES).map(|_| vec![r.random_range(X_LO..=X_HI)]).collect()
}

/// The cubic constraint majorant with curvature allowance `l(block)`.
fn cubic_majorant(l: impl Fn(&SeparableBlockParams) -> f64, tag: u64) -> Tally {
    let mut tally = Tally::default();
    for v in [Variant::Ex5, Variant::Ex6] {
        let (blocks, share) = separable(v, rng::stream_key(0x5A, &[tag, v.number() as u64]));
        let mut r = rng::stream(0x5B, &[tag, v.number() as u64]);
        for p in &blocks {
            let xk = r.random_range(X_LO..X_HI);
            let samples = box_samples(&mut r);
            let surrogate = poly_oracle(constraint_majorant(p, share, xk, l(p)));
            let original = poly_oracle(p.constraint_poly(share));
            tally.add(verify_surrogate(&surrogate, &original, &[xk], &samples, SurrogateRole::Constraint), samples.len());
        }
    }
    tally
}

fn coupled(v: Variant, seed: u64) -> Vec<CoupledBlockParams> {
    match sample_example(v, BLOCKS, seed).coefficients {
        Coefficients::Coupled(c) => c.blocks,
        Coefficients::Separable(_) => vec![],
    }
}

/// `(x1, x2, y)` anchor and samples for the coupled family.
fn coupled_points(r: &mut impl Rng) -> ([f64; 3], Vec<Vec<f64>>) {
    fn draw(r: &mut impl Rng) -> [f64; 3] {
        [r.random_range(-1.0..=1.0), r.random_range(-X2_RANGE..=X2_RANGE), r.random_range(0.0..=1.0)]
    }
    let anchor = draw(r);
    (anchor, (0..SAMPLES).map(|_| draw(r).to_vec()).collect())
}

fn constraint_oracle(p: &CoupledBlockParams) -> FnOracle {
    let (q, g) = (p.clone(), p.clone());
    FnOracle::new(
        3,
        move |z| -q.c2 * z[0] * z[0] / (z[2] + 1.0) + q.c1 * z[1] + q.c0,
        move |z| {
            let s = z[2] + 1.0;
            vec![-2.0 * g.c2 * z[0] / s, g.c1, g.c2 * z[0] * z[0] / (s * s)]
        },
    )
}

/// The negated concave part `c2 x1²/(y+1)`, jointly convex for `y > −1`.
fn curvature_oracle(c2: f64) -> FnOracle {
    FnOracle::new(
        3,
        move |z| c2 * z[0] * z[0] / (z[2] + 1.0),
        move |z| {
            let s = z[2] + 1.0;
            vec![2.0 * c2 * z[0] / s, 0.0, -c2 * z[0] * z[0] / (s * s)]
        },
    )
}

/// With the curvature anchor, the DC construction built here from the constraint's
/// convex and concave parts is verified and the library's majorant compared to it.
/// The full-constraint anchor is verified as the library builds it.
fn coupled_constraint(term: AnchorTerm) -> (Tally, f64) {
    let mut tally = Tally::default();
    let mut gap: f64 = 0.0;
    for v in [Variant::Ex2, Variant::Ex3] {
        let mut r = rng::stream(0x5C, &[v.number() as u64]);
        for p in coupled(v, rng::stream_key(0x5D, &[v.number() as u64])) {
            let (anchor, samples) = coupled_points(&mut r);
            let original = constraint_oracle(&p);
            let library = p.constraint_majorant(anchor, term);
            let lib = SecantOracle { dim: 3, f: move |z: &[f64]| library(z[0], z[1], z[2]) };
            let report = if term == AnchorTerm::Curvature {
                let (c0, c1) = (p.c0, p.c1);
                let affine = FnOracle::new(3, move |z| c1 * z[1] + c0, move |_| vec![0.0, c1, 0.0]);
                let dc = dc_linearize(affine, &curvature_oracle(p.c2), &anchor);
                gap = samples.iter().map(|z| (dc.value(z) - lib.value(z)).abs()).fold(gap, f64::max);
                verify_surrogate(&dc, &original, &anchor, &samples, SurrogateRole::Constraint)
            } else {
                verify_surrogate(&lib, &original, &anchor, &samples, SurrogateRole::Constraint)
            };
            tally.add(report, samples.len());
        }
    }
    (tally, gap)
}

/// Anchored gradients of the block objective approximations.
fn spd_objective() -> Tally {
    let mut tally = Tally::default();
    for v in [Variant::Ex2, Variant::Ex3] {
        let params = sample_example(v, BLOCKS, rng::stream_key(0x5E, &[v.number() as u64]));
        let Coefficients::Coupled(c) = &params.coefficients else { continue };
        let Some(builder) = AlgorithmParams::tuned(Algorithm::Spd, v).and_then(|t| params.spd_builder(&t).ok()) else {
            continue;
        };
        let mut r = rng::stream(0x5F, &[v.number() as u64]);
        let yk = r.random_range(0.0..1.0);
        let anchors: Vec<Vec<f64>> = c.blocks.iter().map(|p| {
            let x1 = r.random_range(-1.0..1.0);
            vec![x1, p.active_x2(x1, yk)]
        }).collect();
        let Ok(approx) = builder.build(&BlockVector::new(anchors.clone()), &[yk]) else { continue };
        for (i, p) in c.blocks.iter().enumerate() {
            let block = approx.blocks[i].clone();
            let surrogate = SecantOracle { dim: 3, f: move |z: &[f64]| block.value(&z[..2], &z[2..]) };
            let (q, g, shift) = (p.clone(), p.clone(), v.shift());
            let original = FnOracle::new(
                3,
                move |z| q.objective(shift, z[0], z[1], z[2]),
                move |z| g.objective_grad(shift, z[0], z[1], z[2]).to_vec(),
            );
            let anchor = [anchors[i][0], anchors[i][1], yk];
            tally.add(verify_surrogate(&surrogate, &original, &anchor, &[], SurrogateRole::Objective), 0);
        }
    }
    tally
}

fn sdd_objective() -> Tally {
    let mut tally = Tally::default();
    for v in [Variant::Ex5, Variant::Ex6] {
        let Some(t) = AlgorithmParams::tuned(Algorithm::Sdd, v) else { continue };
        let (blocks, share) = separable(v, rng::stream_key(0x60, &[v.number() as u64]));
        let mut r = rng::stream(0x61, &[v.number() as u64]);
        for p in &blocks {
            let xk = r.random_range(X_LO..X_HI);
            let s = sdd_surrogates(p, v.shift(), share, xk, t.tau, t.curvature_l);
            let report = verify_surrogate(&poly_oracle(s.objective), &poly_oracle(p.objective_poly(v.shift())), &[xk], &[], SurrogateRole::Objective);
            tally.add(report, 0);
        }
    }
    tally
}

/// Proximal Taylor model of the coupling-variable master, checked against the
/// first master objective it is built for.
fn taylor_master() -> Tally {
    let mut tally = Tally::default();
    let mut r = rng::stream(0x62, &[]);
    for _ in 0..BLOCKS {
        let (a, y0, yk) = (r.random_range(0.0..5000.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0));
        let original = FnOracle::new(1, move |y| a * (y[0] - y0).powi(2), move |y| vec![2.0 * a * (y[0] - y0)]);
        let surrogate = taylor_quadratic_surrogate(&original.gradient(&[yk]), &[yk], 1.0);
        tally.add(verify_surrogate(&surrogate, &original, &[yk], &[], SurrogateRole::Objective), 0);
    }
    tally
}

pub fn surrogates() -> Suite {
    Suite::timed("surrogate conditions", || {
        let tuned_l = AlgorithmParams::tuned(Algorithm::Sdd, Variant::Ex6).map_or(0.0, |t| t.curvature_l);
        let c = SurrogateRole::Constraint;
        let o = SurrogateRole::Objective;
        let tuned = cubic_majorant(|_| tuned_l, 0);
        let admissible = cubic_majorant(|p| 0.3 * p.b[2].abs(), 1);
        let (dc, gap) = coupled_constraint(AnchorTerm::Curvature);
        let (full, _) = coupled_constraint(AnchorTerm::FullConstraint);
        let dc_ok = dc.ok(c) && gap <= TOUCH_TOL;
        let objectives = [("spd block objective", spd_objective()), ("sdd block objective", sdd_objective()), ("taylor master", taylor_master())];
        let mut checks = vec![
            Check::asserted(format!("sdd cubic majorant, L = {tuned_l}"), tuned.ok(c), tuned.detail(c)),
            Check::asserted("sdd cubic majorant, L = 0.3|b3|", admissible.ok(c), admissible.detail(c)),
            Check::asserted("dc curvature majorant", dc_ok, format!("{}; matches library within {gap:.1e}", dc.detail(c))),
            Check::reported("full-constraint anchor", full.ok(c), full.detail(c)),
        ];
        checks.extend(objectives.into_iter().map(|(name, t)| Check::asserted(name, t.ok(o), t.detail(o))));
        checks
    })
}
