use ncdecomp::examples::{
    check_convergence, sample_example, sample_initial_points, Algorithm, AlgorithmParams, ConvergenceCriterion, Variant,
};
use ncdecomp::model::{BlockVector, ViolationMetrics};
use ncdecomp::pd::{run_pd, FullPdNlp, PdConfig};
use ncdecomp::sca::smooth_update;
use ncdecomp::sdd::{inner_dual_ascent, SddApproxBuilder};
use ncdecomp::trajectory::{IterationRecord, Trajectory};
use ncdecomp::transforms::{pd_to_dd, PdPoint};
use proptest::prelude::*;

fn trajectory(objectives: &[f64], metrics: &[ViolationMetrics]) -> Trajectory {
    Trajectory {
        records: objectives
            .iter()
            .zip(metrics)
            .enumerate()
            .map(|(k, (&objective, &metrics))| IterationRecord {
                k,
                objective,
                metrics,
                step: 0.0,
                displacement: 0.0,
                elapsed_s: 0.0,
            })
            .collect(),
        ..Default::default()
    }
}

fn metrics() -> impl Strategy<Value = ViolationMetrics> {
    (0.0..2e-5f64, 0.0..2e-5f64, 0.0..2e-5f64, 0.0..2e-2f64)
        .prop_map(|(mean_ineq, max_ineq, max_eq, coupling)| ViolationMetrics { mean_ineq, max_ineq, max_eq, coupling })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tightening_the_criterion_never_admits_more(
        objectives in prop::collection::vec(-10.0..10.0f64, 11),
        metrics in prop::collection::vec(metrics(), 11),
        shrink in prop::array::uniform4(0.0..=1.0f64),
        coupling_variable in any::<bool>(),
    ) {
        let t = trajectory(&objectives, &metrics);
        let loose = ConvergenceCriterion {
            mean_ineq_tol: 1e-5,
            max_ineq_tol: 1e-5,
            coupling_tol: 1e-2,
            rel_objective_tol: 0.05,
            coupling_variable,
        };
        let tight = ConvergenceCriterion {
            mean_ineq_tol: loose.mean_ineq_tol * shrink[0],
            max_ineq_tol: loose.max_ineq_tol * shrink[1],
            coupling_tol: loose.coupling_tol * shrink[2],
            rel_objective_tol: loose.rel_objective_tol * shrink[3],
            coupling_variable,
        };
        if check_convergence(&t, &tight).unwrap() {
            prop_assert!(check_convergence(&t, &loose).unwrap());
        }
    }

    #[test]
    fn smoothing_stays_on_the_segment(
        pair in prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..8),
        gamma in 0.0..=1.0f64,
    ) {
        let (current, target): (Vec<f64>, Vec<f64>) = pair.into_iter().unzip();
        let next = smooth_update(&current, &target, gamma);
        for ((c, t), n) in current.iter().zip(&target).zip(&next) {
            let slack = 1e-12 * c.abs().max(t.abs()).max(1.0);
            prop_assert!(*n >= c.min(*t) - slack && *n <= c.max(*t) + slack);
        }
    }

    #[test]
    fn inner_ascent_keeps_inequality_duals_nonnegative(seed in 0u64..1000, mu0 in -1.0..1.0f64, blocks in 1usize..6) {
        let params = sample_example(Variant::Ex6, blocks, seed);
        let problem = params.sdd_problem().unwrap();
        let tuning = AlgorithmParams::tuned(Algorithm::Sdd, Variant::Ex6).unwrap();
        let init = &sample_initial_points(&params, 1, seed)[0];
        let approx = params.sdd_builder(&tuning).unwrap().build(&init.x).unwrap();
        let result = inner_dual_ascent(&approx, &problem, &[mu0], &[], &tuning.inner().unwrap(), false);
        prop_assert!(result.mu.iter().all(|m| *m >= 0.0));
        prop_assert!(result.trace.iter().all(|q| q.is_finite()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Converged coupling-variable runs map to stationary points of the consensus form.
    #[test]
    fn pd_output_maps_to_a_consensus_stationary_point(seed in 0u64..1000, blocks in 2usize..6) {
        let params = sample_example(Variant::Ex1, blocks, seed);
        let problem = params.pd_problem().unwrap();
        let tuning = AlgorithmParams::tuned(Algorithm::Pd, Variant::Ex1).unwrap();
        let y0 = &sample_initial_points(&params, 1, seed)[0].y;
        let config = PdConfig { parallel: false, ..PdConfig::new(tuning.schedule().unwrap(), tuning.tau) };
        let state = run_pd(&problem, y0, &config).state.unwrap();
        let point = PdPoint {
            x: BlockVector::new(state.blocks.iter().map(|b| b.x.clone()).collect()),
            y: state.y.clone(),
            multipliers: FullPdNlp::new(&problem).assemble_multipliers(&state.blocks),
        };
        let source = point.residual(&problem).unwrap().total();
        prop_assume!(source <= 1e-6);
        let (_, certificate) = pd_to_dd(&problem).unwrap().forward(&point, 1e-6).unwrap();
        prop_assert!(certificate.image_residual.total() <= source.max(1e-8), "source {source:e}, image {:e}", certificate.image_residual.total());
    }
}
