//! Randomized invariants across the library.

use ndarray::Array2;
use proptest::prelude::*;

use ovrlab::dataset::{self, empirical_occupancy, generate, generate_regime, BehaviourKind};
use ovrlab::mdp::{exact_occupancy, families, policy_return_both, OccupancyMeasure, Policy, TabularMdp};
use ovrlab::offline::{ovr_train, Algorithm, OptimizerConfig, TrainFlag};
use ovrlab::ratio::{dualdice, estimate, exact_ratio, Estimator, RatioConfig, RatioProblem};
use ovrlab::theory::{cantelli_lower_bound, check_lemma2_tv, renyi2, BoundReport};
use ovrlab::variance::{
    augment_rewards, closed_form_dual, marginalized_variance, scalar_dual_variance, DualMode,
    VarianceDecomposition,
};

fn random_instance(ns: usize, na: usize, gamma: f64, seed: u64) -> (TabularMdp, Policy) {
    (
        families::random(ns, na, gamma, seed).unwrap(),
        families::random_policy(ns, na, seed ^ 0x5eed),
    )
}

/// Rescales nonnegative weights to sum to one.
fn normalize(raw: &[f64]) -> Vec<f64> {
    let z: f64 = raw.iter().sum();
    raw.iter().map(|x| x / z).collect()
}

fn occupancy_from(raw: Vec<f64>, dim: (usize, usize)) -> OccupancyMeasure {
    OccupancyMeasure::new(Array2::from_shape_vec(dim, normalize(&raw)).unwrap(), 0.9).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn returns_agree_through_occupancy_and_values(
        ns in 1usize..=8, na in 1usize..=4, gamma in 0.0f64..0.99, seed in any::<u64>()
    ) {
        let (m, pi) = random_instance(ns, na, gamma, seed);
        let check = policy_return_both(&m, &pi).unwrap();
        prop_assert!((check.via_occupancy - check.via_initial_values).abs() < 1e-9);
    }

    #[test]
    fn occupancy_is_a_normalized_fixed_point(
        ns in 1usize..=8, na in 1usize..=4, gamma in 0.0f64..0.99, seed in any::<u64>()
    ) {
        let (m, pi) = random_instance(ns, na, gamma, seed);
        let d = exact_occupancy(&m, &pi).unwrap();
        prop_assert!((d.table().sum() - 1.0).abs() < 1e-9);
        // ρ(s') = (1-γ)β(s') + γ Σ_{s,a} d(s,a) P(s'|s,a), and d(s,a) = ρ(s)π(a|s).
        let rho = d.state_marginal();
        for s2 in 0..ns {
            let mut inflow = (1.0 - gamma) * m.initial()[s2];
            for s in 0..ns {
                for a in 0..na {
                    inflow += gamma * d.get(s, a) * m.transition()[[s, a, s2]];
                }
            }
            prop_assert!((inflow - rho[s2]).abs() < 1e-9);
            for a in 0..na {
                prop_assert!((d.get(s2, a) - rho[s2] * pi.prob(s2, a)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn datasets_are_reproducible_and_occupancies_normalized(
        ns in 2usize..=6, na in 1usize..=3, seed in any::<u64>(), episodes in 1usize..20, horizon in 1usize..20
    ) {
        let (m, pi) = random_instance(ns, na, 0.9, seed);
        let a = generate(&m, &pi, episodes, horizon, seed).unwrap();
        let b = generate(&m, &pi, episodes, horizon, seed).unwrap();
        prop_assert_eq!(dataset::to_text(&a), dataset::to_text(&b));
        let occ = empirical_occupancy(&a, 0.9).unwrap();
        prop_assert!((occ.occupancy.table().sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn variance_outputs_are_nonnegative_and_fenchel_tight(
        raw_w in prop::collection::vec(0.01f64..1.0, 6), x in prop::collection::vec(-10.0f64..10.0, 6)
    ) {
        let d = occupancy_from(raw_w, (3, 2));
        let x = Array2::from_shape_vec((3, 2), x).unwrap();
        let direct = VarianceDecomposition::of_table(&x, d.table());
        prop_assert!(direct.variance >= -1e-12);
        let dual = scalar_dual_variance(&x, d.table()).unwrap();
        prop_assert!((dual - direct.variance).abs() < 1e-10 * (1.0 + direct.second_moment));
        let ones = Array2::ones((3, 2));
        prop_assert!(marginalized_variance(&x, &ones, &d).unwrap().variance >= -1e-12);
    }

    #[test]
    fn heavier_penalty_never_raises_the_surrogate(
        raw_w in prop::collection::vec(0.01f64..1.0, 6),
        omega in prop::collection::vec(0.0f64..5.0, 6),
        r in prop::collection::vec(0.0f64..2.0, 6),
        nu in prop::collection::vec(0.0f64..3.0, 6),
        l1 in 0.0f64..2.0, dl in 0.0f64..2.0,
    ) {
        let d = occupancy_from(raw_w, (3, 2));
        let omega = Array2::from_shape_vec((3, 2), omega).unwrap();
        let r = Array2::from_shape_vec((3, 2), r).unwrap();
        let nu = Array2::from_shape_vec((3, 2), nu).unwrap();
        let lo = augment_rewards(&r, &nu, l1).unwrap().r_tilde;
        let hi = augment_rewards(&r, &nu, l1 + dl).unwrap().r_tilde;
        prop_assert!(d.expect(&(&omega * &hi)) <= d.expect(&(&omega * &lo)) + 1e-12);
    }

    #[test]
    fn closed_form_dual_is_pessimistic(
        raw_w in prop::collection::vec(0.01f64..1.0, 6),
        omega in prop::collection::vec(0.0f64..3.0, 6),
        r in prop::collection::vec(0.0f64..1.0, 6),
        lambda in 0.001f64..1.0,
        scalar in any::<bool>(),
    ) {
        let d = occupancy_from(raw_w, (3, 2));
        let omega = Array2::from_shape_vec((3, 2), omega).unwrap();
        let r = Array2::from_shape_vec((3, 2), r).unwrap();
        let mode = if scalar { DualMode::AppendixScalar } else { DualMode::PaperMain };
        let dual = closed_form_dual(&omega, &r, lambda, mode, &d).unwrap();
        prop_assume!(dual.nu.iter().all(|&v| v >= 0.0));
        let aug = augment_rewards(&r, &dual.nu, lambda).unwrap().r_tilde;
        prop_assert!(d.expect(&(&omega * &aug)) <= d.expect(&(&omega * &r)) + 1e-12);
    }

    #[test]
    fn renyi_identity_and_report_orientation(
        p in prop::collection::vec(0.0f64..1.0, 2..10), seed in any::<u64>()
    ) {
        prop_assume!(p.iter().sum::<f64>() > 0.0);
        let p = normalize(&p);
        let q_raw: Vec<f64> = (0..p.len()).map(|i| 0.05 + ((seed >> (i % 60)) & 0xf) as f64).collect();
        let q = normalize(&q_raw);
        let r = renyi2(&p, &q).unwrap();
        prop_assert!((r.ratio_variance - (r.exponentiated - 1.0)).abs() < 1e-12 * r.exponentiated.max(1.0));
        let report = BoundReport::new("renyi", r.ratio_variance, r.exponentiated - 1.0 + 1e-12, "x", true);
        prop_assert_eq!(report.holds(), report.rhs - report.lhs >= -1e-9);
    }

    #[test]
    fn cantelli_monotonicity(j in -5.0f64..5.0, v1 in 0.0f64..4.0, dv in 0.0f64..4.0, d1 in 0.01f64..0.99, dd in 0.0f64..0.5) {
        let d2 = (d1 + dd).min(1.0);
        let base = cantelli_lower_bound(j, v1, d1).unwrap();
        prop_assert!(cantelli_lower_bound(j, v1 + dv, d1).unwrap() <= base + 1e-15);
        prop_assert!(cantelli_lower_bound(j, v1, d2).unwrap() >= base - 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tv_improvement_bound_holds_on_random_triples(
        ns in 1usize..=6, na in 1usize..=3, gamma in 0.0f64..0.99, seed in any::<u64>()
    ) {
        let (m, pi) = random_instance(ns, na, gamma, seed);
        let pp = families::random_policy(ns, na, seed.wrapping_add(1));
        let r = check_lemma2_tv(&m, &pi, &pp, "prop").unwrap();
        prop_assert!(r.holds(), "{:?}", r);
    }

    #[test]
    fn exact_expectation_estimators_keep_unit_moment(
        ns in 2usize..=5, na in 2usize..=3, seed in any::<u64>()
    ) {
        let (m, pi) = random_instance(ns, na, 0.9, seed);
        let mu = families::random_policy(ns, na, seed.wrapping_add(7));
        let d_mu = exact_occupancy(&m, &mu).unwrap();
        let problem = RatioProblem::exact(&m, &d_mu).unwrap();
        let truth = exact_ratio(&exact_occupancy(&m, &pi).unwrap(), &d_mu).unwrap();
        let cfg = RatioConfig::default();
        for est in [Estimator::DualDice, Estimator::Mwl, Estimator::DvKl] {
            let t = estimate(est, &problem, None, &pi, &cfg).unwrap();
            prop_assert!((t.diagnostics.raw_moment - 1.0).abs() < 1e-2, "{} moment {}", est, t.diagnostics.raw_moment);
            prop_assert!(t.linf_distance(&truth) < 5e-3, "{} error {}", est, t.linf_distance(&truth));
        }
        let (t, nu) = dualdice(&problem, &pi, &RatioConfig { renormalize: false, ..cfg }).unwrap();
        prop_assert_eq!(t.omega, problem.bellman_residual(&pi, &nu.nu).mapv(|v| v.max(0.0)));
    }

    #[test]
    fn zero_lambda_regularization_is_the_base_optimizer(
        ns in 2usize..=6, na in 2usize..=3, seed in any::<u64>(), constrained in any::<bool>(), tau in 0.0f64..=1.0
    ) {
        let m = families::random(ns, na, 0.9, seed).unwrap();
        let ds = generate_regime(&m, BehaviourKind::Mixed, 10, 15, seed).unwrap();
        let algorithm = if constrained { Algorithm::ConstrainedQ } else { Algorithm::BatchQ };
        let base = OptimizerConfig { algorithm, bcq_threshold: tau, ..Default::default() };
        let a = ovr_train(&ds, &m, &base).unwrap();
        let b = ovr_train(&ds, &m, &OptimizerConfig { ovr_enabled: true, lambda: 0.0, ..base }).unwrap();
        prop_assert_eq!(a.q, b.q);
        prop_assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn constrained_policy_respects_the_behaviour_support(
        ns in 2usize..=6, na in 2usize..=4, seed in any::<u64>(), tau in 0.0f64..=1.0, lambda in 0.0f64..1.0
    ) {
        let m = families::random(ns, na, 0.9, seed).unwrap();
        let mu = families::random_policy(ns, na, seed.wrapping_add(3));
        let ds = generate(&m, &mu, 8, 12, seed).unwrap();
        let cfg = OptimizerConfig {
            algorithm: Algorithm::ConstrainedQ,
            bcq_threshold: tau,
            ovr_enabled: lambda > 0.5,
            lambda,
            ..Default::default()
        };
        let t = ovr_train(&ds, &m, &cfg).unwrap();
        let mu_hat = dataset::behaviour_estimate(&ds);
        let counts = ds.counts();
        for s in (0..ns).filter(|&s| counts.row(s).sum() > 0.0) {
            let top = mu_hat.row(s).iter().copied().fold(0.0, f64::max);
            for a in (0..na).filter(|&a| t.policy.prob(s, a) > 0.0) {
                prop_assert!(mu_hat.prob(s, a) >= tau * top);
                prop_assert!(counts[[s, a]] > 0.0);
            }
        }
        prop_assert!(!t.flags.contains(&TrainFlag::SweepsExhausted));
    }
}
