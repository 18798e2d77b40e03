use ncdecomp::examples::{Algorithm, AlgorithmParams, Variant};
use ncdecomp::sca::{InnerStepSchedule, StepSchedule};

use super::{Check, Suite};

const DECAY_TARGET: f64 = 1e-4;
const RANGE_HORIZON: usize = 100_000;
const SUM_WINDOWS: [usize; 4] = [1_000, 10_000, 100_000, 1_000_000];
const INNER_HORIZON: usize = 1_000_000;

/// `1/(α + β k^ε)` for real `k`, needed where the decay index overflows `usize`.
fn step_at(s: &StepSchedule, k: f64) -> f64 {
    1.0 / (s.alpha + s.beta * k.powf(s.epsilon))
}

fn outer(name: &str, s: &StepSchedule) -> Vec<Check> {
    let in_range = (0..=RANGE_HORIZON).map(|k| s.outer_step(k)).all(|g| g > 0.0 && g <= 1.0);
    let monotone = (1..RANGE_HORIZON).all(|k| s.outer_step(k + 1) <= s.outer_step(k));
    let starts_high = s.outer_step(0) >= s.outer_step(1);

    // the real-valued formula must agree with the library wherever both exist
    let agrees = [1usize, 1_000, 1 << 40].iter().all(|&k| (step_at(s, k as f64) - s.outer_step(k)).abs() <= 1e-15);
    let decay_k = (1e4 / s.beta).powf(1.0 / s.epsilon);
    let decayed = step_at(s, decay_k);

    let partial = |k: usize| -> f64 { (k + 1..=2 * k).map(|j| s.outer_step(j)).sum() };
    let sums: Vec<(usize, f64, f64)> =
        SUM_WINDOWS.iter().map(|&k| (k, partial(k), (k as f64).powf(1.0 - s.epsilon) / (2.0 * s.beta))).collect();
    let diverges = sums.iter().all(|(_, got, bound)| got >= bound);
    let worst = sums.iter().map(|(_, got, bound)| got / bound).fold(f64::INFINITY, f64::min);

    vec![
        Check::asserted(format!("{name} range"), in_range, format!("γ(k) in (0, 1] for k ≤ {RANGE_HORIZON}")),
        Check::asserted(format!("{name} monotone"), monotone, "nonincreasing from k = 1".to_string()),
        Check::reported(format!("{name} first step"), starts_high, format!("γ(0) = {}, γ(1) = {:.4}", s.outer_step(0), s.outer_step(1))),
        Check::asserted(
            format!("{name} decay"),
            agrees && decayed <= DECAY_TARGET,
            format!("γ({decay_k:.3e}) = {decayed:.3e}"),
        ),
        Check::asserted(
            format!("{name} divergent sums"),
            diverges,
            format!("Σ over (k, 2k] ≥ k^(1-ε)/(2β) for k up to 1e6, smallest ratio {worst:.3}"),
        ),
    ]
}

/// Positivity, and the tail of `Σγ²` against the bound `γ(t) ≤ 1/(β_in t)`.
fn inner(name: &str, s: &InnerStepSchedule) -> Vec<Check> {
    let steps: Vec<f64> = s.steps().take(INNER_HORIZON + 1).collect();
    let positive = steps.iter().all(|g| *g > 0.0 && g.is_finite());
    let bounded = steps.iter().enumerate().skip(1).all(|(t, g)| *g <= 1.0 / (s.beta_in * t as f64) * (1.0 + 1e-12));
    let tails: Vec<f64> = SUM_WINDOWS[..3].iter().map(|&t| steps[t + 1..=2 * t].iter().map(|g| g * g).sum()).collect();
    let shrinking = tails.windows(2).all(|w| w[1] < w[0]);
    let tail_ok = SUM_WINDOWS[..3].iter().zip(&tails).all(|(&t, tail)| *tail <= 1.0 / (s.beta_in * s.beta_in * t as f64));
    let total: f64 = steps.iter().map(|g| g * g).sum();
    vec![
        Check::asserted(format!("{name} positive"), positive, format!("first {INNER_HORIZON} steps positive")),
        Check::asserted(
            format!("{name} square-summable"),
            bounded && shrinking && tail_ok,
            format!("Σγ² = {total:.6} over {INNER_HORIZON} steps, tails {:.1e} → {:.1e}", tails[0], tails[tails.len() - 1]),
        ),
    ]
}

pub fn schedules() -> Suite {
    Suite::timed("step schedules", || {
        let mut seen_outer: Vec<StepSchedule> = Vec::new();
        let mut seen_inner: Vec<InnerStepSchedule> = Vec::new();
        let mut checks = Vec::new();
        for a in Algorithm::ALL {
            for v in Variant::ALL.into_iter().filter(|v| a.applies_to(*v)) {
                let Some(t) = AlgorithmParams::tuned(a, v) else { continue };
                let name = format!("{a} {v}");
                match t.schedule() {
                    Ok(s) if !seen_outer.contains(&s) => {
                        seen_outer.push(s);
                        checks.extend(outer(&name, &s));
                    }
                    Ok(_) => {}
                    Err(e) => checks.push(Check::asserted(name.clone(), false, e.to_string())),
                }
                if matches!(a, Algorithm::Spd | Algorithm::Sdd) {
                    match t.inner() {
                        Ok(c) if !seen_inner.contains(&c.schedule) => {
                            seen_inner.push(c.schedule);
                            checks.extend(inner(&format!("{name} inner"), &c.schedule));
                        }
                        Ok(_) => {}
                        Err(e) => checks.push(Check::asserted(format!("{name} inner"), false, e.to_string())),
                    }
                }
            }
        }
        checks
    })
}
