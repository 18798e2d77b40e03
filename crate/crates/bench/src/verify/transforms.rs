use ncdecomp::dd::FullDdNlp;
use ncdecomp::kkt::{MultiplierSet, Nlp};
use ncdecomp::pd::FullPdNlp;
use ncdecomp::transforms::desk::{random_dd_instance, random_pd_instance};
use ncdecomp::transforms::{dd_to_pd, pd_to_dd, TransformCertificate, TransformError};

use super::{Check, Suite};

pub const INSTANCES: u64 = 50;
pub const SOURCE_TOL: f64 = 1e-10;
pub const IMAGE_TOL: f64 = 1e-8;
/// Central differences cost a few digits, so the independent residual gets more room.
const DIFFERENCE_TOL: f64 = 1e-6;

/// KKT residual from objective and constraint values only: the Lagrangian gradient
/// is a central difference and stationarity is measured in projected form.
fn difference_residual<P: Nlp + ?Sized>(nlp: &P, v: &[f64], m: &MultiplierSet) -> f64 {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let lagrangian = |x: &[f64]| nlp.objective(x) + dot(&m.ineq, &nlp.ineq(x)) + dot(&m.eq, &nlp.eq(x));
    let bounds = nlp.bounds();
    let mut worst: f64 = 0.0;
    for j in 0..v.len() {
        let h = 1e-5 * v[j].abs().max(1.0);
        let (mut p, mut q) = (v.to_vec(), v.to_vec());
        p[j] += h;
        q[j] -= h;
        let grad = (lagrangian(&p) - lagrangian(&q)) / (2.0 * h);
        let stepped = (v[j] - grad).clamp(bounds.lower()[j], bounds.upper()[j]);
        worst = worst.max((v[j] - stepped).abs());
    }
    let g = nlp.ineq(v);
    let h = nlp.eq(v);
    let comp = g.iter().zip(&m.ineq).map(|(g, mu)| (g * mu).abs()).fold(0.0, f64::max);
    let feas = g.iter().map(|g| g.max(0.0)).chain(h.iter().map(|h| h.abs())).fold(0.0, f64::max);
    let dual = m.ineq.iter().map(|mu| (-mu).max(0.0)).fold(0.0, f64::max);
    worst.max(comp).max(feas).max(dual)
}

#[derive(Default)]
struct Tally {
    ok: usize,
    total: usize,
    worst_source: f64,
    worst_image: f64,
    worst_difference: f64,
    errors: Vec<String>,
}

impl Tally {
    fn add(&mut self, outcome: Outcome) {
        self.total += 1;
        match outcome {
            Ok((c, diff)) => {
                let (s, i) = (c.source_residual.total(), c.image_residual.total());
                self.worst_source = self.worst_source.max(s);
                self.worst_image = self.worst_image.max(i);
                self.worst_difference = self.worst_difference.max(diff);
                if s <= SOURCE_TOL && i <= IMAGE_TOL && diff <= DIFFERENCE_TOL {
                    self.ok += 1;
                }
            }
            Err(e) => self.errors.push(e.to_string()),
        }
    }

    fn check(self, name: &str) -> Check {
        let mut detail = format!(
            "{}/{} within {IMAGE_TOL:.0e}; worst source {:.1e}, image {:.1e}, difference check {:.1e}",
            self.ok, self.total, self.worst_source, self.worst_image, self.worst_difference
        );
        if let Some(e) = self.errors.first() {
            detail.push_str(&format!("; first error: {e}"));
        }
        Check::asserted(name, self.ok == self.total, detail)
    }
}

type Outcome = Result<(TransformCertificate, f64), TransformError>;

/// Forward map of a drawn stationary point, then the backward map of its image.
fn pd_round_trip(seed: u64) -> (Outcome, Outcome) {
    let (problem, point) = random_pd_instance(seed);
    let map = match pd_to_dd(&problem) {
        Ok(m) => m,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    let (image, forward) = match map.forward(&point, SOURCE_TOL) {
        Ok(r) => r,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    let image_nlp = FullDdNlp::new(map.image());
    let forward_diff = difference_residual(&image_nlp, &image.x.flatten(), &image.multipliers);
    let back = map.backward(&image, IMAGE_TOL).map(|(back, c)| {
        let nlp = FullPdNlp::new(&problem);
        (c, difference_residual(&nlp, &nlp.pack(&back.x, &back.y), &back.multipliers))
    });
    (Ok((forward, forward_diff)), back)
}

fn dd_round_trip(seed: u64) -> (Outcome, Outcome) {
    let (problem, point) = random_dd_instance(seed);
    let map = match dd_to_pd(&problem) {
        Ok(m) => m,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    let (image, forward) = match map.forward(&point, SOURCE_TOL) {
        Ok(r) => r,
        Err(e) => return (Err(e.clone()), Err(e)),
    };
    let image_nlp = FullPdNlp::new(map.image());
    let forward_diff = difference_residual(&image_nlp, &image_nlp.pack(&image.x, &image.y), &image.multipliers);
    let back = map.backward(&image, IMAGE_TOL).map(|(back, c)| {
        let nlp = FullDdNlp::new(&problem);
        (c, difference_residual(&nlp, &back.x.flatten(), &back.multipliers))
    });
    (Ok((forward, forward_diff)), back)
}

pub fn transforms() -> Suite {
    Suite::timed("stationary-point transforms", || {
        let mut tallies: [Tally; 4] = Default::default();
        for seed in 0..INSTANCES {
            let (a, b) = pd_round_trip(seed);
            let (c, d) = dd_round_trip(seed);
            for (t, o) in tallies.iter_mut().zip([a, b, c, d]) {
                t.add(o);
            }
        }
        let names = [
            "coupling variable to consensus, forward",
            "coupling variable to consensus, back",
            "coupling constraint to slacks, forward",
            "coupling constraint to slacks, back",
        ];
        tallies.into_iter().zip(names).map(|(t, n)| t.check(n)).collect()
    })
}
