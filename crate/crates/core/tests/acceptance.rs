//! Acceptance run: one PASS/FAIL line per criterion, with timings.
//!
//! Run with `cargo test -p ovrlab --test acceptance`. The process exits
//! nonzero on a failed criterion only when `ACCEPTANCE_STRICT` is set, so the
//! ordinary test suite reports known failures without aborting.

use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use ovrlab::dataset::{corrupt_rewards, generate, generate_regime, mixture_policy, BehaviourKind};
use ovrlab::mdp::{exact_occupancy, families, policy_return, Policy, TabularMdp};
use ovrlab::offline::{evaluate, ovr_train, Algorithm, OptimizerConfig, ScoreAnchors, LAMBDA_GRID};
use ovrlab::ratio::{estimate, exact_ratio, Estimator, RatioConfig, RatioProblem};
use ovrlab::rng::seeded;
use ovrlab::theory::{
    check_lemma1, check_lemma2_tv, check_lemma3, coverage_experiment, renyi2, Battery, SampleSetup,
};
use ovrlab::variance::{
    fenchel_scalar_identity, scalar_dual_variance, uniform_grid, variance_bellman, variance_gradient,
    variance_objective, VarianceDecomposition,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_table(rng: &mut impl Rng, dim: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn(dim, |_| rng.random_range(lo..hi))
}

fn random_distribution(rng: &mut impl Rng, dim: (usize, usize)) -> Array2<f64> {
    let w = random_table(rng, dim, 0.01, 1.0);
    let z = w.sum();
    w / z
}

/// Small random instance: up to 6 states and 3 actions.
fn small_mdp(seed: u64, gamma: f64) -> (TabularMdp, usize, usize) {
    let ns = 2 + (seed as usize * 7) % 5;
    let na = 2 + (seed as usize * 3) % 2;
    (families::random(ns, na, gamma, seed).unwrap(), ns, na)
}

fn fenchel_identity() -> Outcome {
    let mut rng = seeded(1);
    let grid = uniform_grid(-10.5, 10.5, 1e-3);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-10.0..10.0);
        let m = fenchel_scalar_identity(x, &grid).unwrap();
        worst = worst.max((m.value - x * x).abs());
    }
    outcome(worst < 1e-6, format!("worst |max - x²| = {worst:.2e} over 1000 draws"))
}

fn scalar_dual_variance_check() -> Outcome {
    let mut rng = seeded(2);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let dim = (rng.random_range(1..8), rng.random_range(1..5));
        let x = random_table(&mut rng, dim, -5.0, 5.0);
        let w = random_distribution(&mut rng, dim);
        let direct = VarianceDecomposition::of_table(&x, &w).variance;
        worst = worst.max((scalar_dual_variance(&x, &w).unwrap() - direct).abs());
    }
    outcome(worst < 1e-10, format!("worst deviation {worst:.2e} over 1000 tables"))
}

fn ratio_oracles() -> Outcome {
    let cfg = RatioConfig::default();
    let errors: Vec<[f64; 3]> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let (m, ns, na) = small_mdp(seed, 0.9);
            let pi = families::random_policy(ns, na, seed + 100);
            let mu = families::random_policy(ns, na, seed + 200);
            let d_mu = exact_occupancy(&m, &mu).unwrap();
            let truth = exact_ratio(&exact_occupancy(&m, &pi).unwrap(), &d_mu).unwrap();
            let problem = RatioProblem::exact(&m, &d_mu).unwrap();
            let err = |e| estimate(e, &problem, None, &pi, &cfg).unwrap().linf_distance(&truth);
            [err(Estimator::DualDice), err(Estimator::Mwl), err(Estimator::DvKl)]
        })
        .collect();
    let worst = |k: usize| errors.iter().map(|e| e[k]).fold(0.0, f64::max);

    // The classifier separates (s, a) from (s, a ~ π) at the same logged states,
    // so it recovers π/μ; that is d_π/d_D exactly when dynamics ignore the action.
    let classifier_error = |m: &TabularMdp, seed: u64| {
        let (ns, na) = (m.n_states(), m.n_actions());
        let mu = Policy::uniform(ns, na);
        let pi = mixture_policy(&mu, &families::random_policy(ns, na, seed + 300), 0.5).unwrap();
        let truth = exact_ratio(&exact_occupancy(m, &pi).unwrap(), &exact_occupancy(m, &mu).unwrap()).unwrap();
        let ds = generate(m, &mu, 1_000, 100, seed).unwrap();
        let problem = RatioProblem::from_dataset(&ds, m.gamma()).unwrap();
        estimate(Estimator::Classifier, &problem, Some(&ds), &pi, &cfg)
            .unwrap()
            .linf_distance(&truth)
    };
    let blind: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let (_, ns, na) = small_mdp(seed, 0.9);
            classifier_error(&families::random_action_blind(ns, na, 0.9, seed).unwrap(), seed)
        })
        .collect();
    let general: Vec<f64> = (0..10u64)
        .into_par_iter()
        .map(|seed| classifier_error(&small_mdp(seed, 0.9).0, seed))
        .collect();
    let worst_blind = blind.iter().copied().fold(0.0, f64::max);
    let worst_general = general.iter().copied().fold(0.0, f64::max);
    let pass = worst(0) < 5e-3 && worst(1) < 5e-3 && worst(2) < 5e-3 && worst_blind < 0.05;
    outcome(
        pass,
        format!(
            "worst L∞ dualdice {:.1e}, mwl {:.1e}, dv_kl {:.1e} (50 MDPs); classifier 1e5 samples: {:.3} on \
             action-blind dynamics (10 MDPs), {:.3} on general dynamics (reported only)",
            worst(0),
            worst(1),
            worst(2),
            worst_blind,
            worst_general
        ),
    )
}

fn second_moment_battery() -> Outcome {
    let reports: Vec<_> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let ns = 2 + seed as usize % 3;
            let gamma = if seed % 2 == 0 { 0.5 } else { 0.9 };
            let m = families::random(ns, 2, gamma, seed).unwrap();
            let pi = families::random_policy(ns, 2, seed + 1000);
            let mu = families::random_policy(ns, 2, seed + 2000);
            check_lemma1(&m, &pi, &mu, 14, "battery").unwrap()
        })
        .collect();
    let endpoint = reports.iter().filter(|r| !r.second_moment.holds()).count();
    let chain_step = reports.iter().filter(|r| !r.cauchy_schwarz.holds()).count();
    let worst = reports.iter().map(|r| r.second_moment.slack()).fold(f64::INFINITY, f64::min);
    outcome(
        endpoint == 0,
        format!(
            "(1-γ)²E[D²] ≤ E_D[ω²r²] violated on {endpoint}/100 (worst slack {worst:.2e}); \
             the Cauchy-Schwarz step of the chain is violated on {chain_step}/100"
        ),
    )
}

fn renyi_identity() -> Outcome {
    let mut rng = seeded(5);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..12);
        let p = random_distribution(&mut rng, (n, 1));
        let q = random_distribution(&mut rng, (n, 1));
        let r = renyi2(p.as_slice().unwrap(), q.as_slice().unwrap()).unwrap();
        worst = worst.max((r.ratio_variance - (r.exponentiated - 1.0)).abs());
    }
    outcome(worst < 1e-12, format!("worst deviation {worst:.2e} over 1000 pairs"))
}

fn tv_bound_battery() -> Outcome {
    let slacks: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let (m, ns, na) = small_mdp(seed, 0.9);
            let pi = families::random_policy(ns, na, seed + 10);
            let pp = families::random_policy(ns, na, seed + 20);
            check_lemma2_tv(&m, &pi, &pp, "battery").unwrap().slack()
        })
        .collect();
    let worst = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(worst >= -1e-9, format!("worst slack {worst:.3e} over 200 triples"))
}

/// The canned battery with a random target and uniform data, as in the
/// verification suite.
fn canned_setups() -> Vec<(String, SampleSetup)> {
    Battery::canned(0.9)
        .unwrap()
        .members
        .into_iter()
        .enumerate()
        .map(|(k, (name, m))| {
            let (ns, na) = (m.n_states(), m.n_actions());
            let pi = families::random_policy(ns, na, 1000 * k as u64);
            let setup = SampleSetup::from_behaviour(&m, &pi, &Policy::uniform(ns, na)).unwrap();
            (name, setup)
        })
        .collect()
}

fn sample_variance_battery() -> Outcome {
    let mut failed = Vec::new();
    let mut count = 0;
    for (k, (name, setup)) in canned_setups().iter().enumerate() {
        for r in check_lemma3(setup, &[10, 100, 1000], 10_000, k as u64, name).unwrap() {
            count += 1;
            if !r.holds() {
                failed.push(r.context.clone());
            }
        }
    }
    let detail = if failed.is_empty() {
        format!("{count}/{count} cases hold")
    } else {
        format!("{}/{count} cases hold, failing: {}", count - failed.len(), failed.join("; "))
    };
    outcome(failed.is_empty(), detail)
}

fn coverage_battery() -> Outcome {
    let mut worst = f64::INFINITY;
    let mut failed = 0;
    let mut count = 0;
    for (k, (name, setup)) in canned_setups().iter().enumerate() {
        for delta in [0.05, 0.1, 0.5] {
            let r = coverage_experiment(setup, 100, delta, 10_000, 7 + k as u64, name).unwrap();
            count += 1;
            failed += usize::from(!r.holds());
            worst = worst.min(r.slack());
        }
    }
    outcome(failed == 0, format!("{}/{count} cases covered, worst margin {worst:.4}", count - failed))
}

fn gradient_check() -> Outcome {
    let results: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let (m, ns, na) = small_mdp(seed, 0.9);
            let mut rng = seeded(seed + 500);
            let theta = random_table(&mut rng, (ns, na), -1.0, 1.0);
            let d = exact_occupancy(&m, &families::random_policy(ns, na, seed + 600)).unwrap();
            let g = variance_gradient(&m, &theta, &d).unwrap();
            let h = 1e-5;
            let mut fd = Array2::zeros((ns, na));
            for idx in ndarray::indices((ns, na)) {
                let mut plus = theta.clone();
                plus[idx] += h;
                let mut minus = theta.clone();
                minus[idx] -= h;
                fd[idx] = (variance_objective(&m, &plus, &d).unwrap() - variance_objective(&m, &minus, &d).unwrap())
                    / (2.0 * h);
            }
            let rel = (&g.exact - &fd).mapv(f64::abs).sum() / fd.mapv(f64::abs).sum();
            (rel, g.literal_relative_error())
        })
        .collect();
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let literal = median(results.iter().map(|r| r.1).collect());
    outcome(
        worst < 1e-5,
        format!("worst relative error {worst:.2e} over 20 instances; literal expression deviates by {literal:.3} (median, reported)"),
    )
}

fn variance_bellman_identity() -> Outcome {
    let mut worst = 0.0_f64;
    for seed in 0..100u64 {
        let (m, ns, na) = small_mdp(seed, 0.9);
        let pi = families::random_policy(ns, na, seed + 40);
        let j = policy_return(&m, &pi).unwrap();
        let values = variance_bellman(&m, &pi, j).unwrap();
        let start: f64 = (0..ns).map(|s| m.initial()[s] * pi.row(s).dot(&values.variance.row(s))).sum();
        let d = exact_occupancy(&m, &pi).unwrap();
        let direct = d.expect(&m.reward().mapv(|r| (r - j) * (r - j)));
        worst = worst.max(((1.0 - m.gamma()) * start - direct).abs());
    }
    outcome(worst < 1e-9, format!("worst deviation {worst:.2e} over 100 MDPs"))
}

fn zero_lambda_equivalence() -> Outcome {
    let mismatches: usize = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let (m, ..) = small_mdp(seed, 0.9);
            let ds = generate_regime(&m, BehaviourKind::REGIMES[seed as usize % 4], 10, 20, seed).unwrap();
            let algorithm = if seed % 2 == 0 { Algorithm::BatchQ } else { Algorithm::ConstrainedQ };
            let base = OptimizerConfig {
                algorithm,
                ..Default::default()
            };
            let a = ovr_train(&ds, &m, &base).unwrap();
            let b = ovr_train(
                &ds,
                &m,
                &OptimizerConfig {
                    ovr_enabled: true,
                    lambda: 0.0,
                    ..base
                },
            )
            .unwrap();
            let same_bits = a.q.iter().zip(b.q.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
            usize::from(!(same_bits && a.policy == b.policy))
        })
        .sum();
    outcome(mismatches == 0, format!("{mismatches}/50 runs differ from the base optimizer"))
}

const EPISODES: usize = 4;
const HORIZON: usize = 10;

fn families_under_test() -> Vec<(&'static str, TabularMdp)> {
    vec![
        ("trap_bandit", families::trap_bandit(0.9).unwrap()),
        ("chain5", families::chain(5, 0.9).unwrap()),
    ]
}

fn trained_return(m: &TabularMdp, ds: &ovrlab::dataset::Dataset, lambda: f64) -> f64 {
    let cfg = OptimizerConfig {
        ovr_enabled: true,
        lambda,
        ..Default::default()
    };
    evaluate(m, &ovr_train(ds, m, &cfg).unwrap().policy).unwrap()
}

fn regime_comparison() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m) in families_under_test() {
        for kind in [BehaviourKind::Expert, BehaviourKind::Medium, BehaviourKind::Mixed] {
            let per_lambda: Vec<f64> = LAMBDA_GRID
                .iter()
                .map(|&lambda| {
                    let js: Vec<f64> = (0..20u64)
                        .into_par_iter()
                        .map(|seed| {
                            let ds = generate_regime(&m, kind, EPISODES, HORIZON, seed).unwrap();
                            trained_return(&m, &ds, lambda)
                        })
                        .collect();
                    median(js)
                })
                .collect();
            let (best_idx, best) = per_lambda[1..]
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i + 1, v) } else { acc });
            let required = kind != BehaviourKind::Expert;
            let ok = best >= per_lambda[0] - 1e-12;
            if required && !ok {
                pass = false;
            }
            parts.push(format!(
                "{name}/{kind}: λ=0 {:.4}, best λ={} {:.4}{}",
                per_lambda[0],
                LAMBDA_GRID[best_idx],
                best,
                if required { "" } else { " (not required)" }
            ));
        }
    }
    outcome(pass, parts.join("; "))
}

const CORRUPTION_LAMBDA: f64 = 0.1;

fn corruption_robustness() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, m) in families_under_test() {
        let anchors = ScoreAnchors::of(&m).unwrap();
        let drops: Vec<(f64, f64)> = (0..20u64)
            .into_par_iter()
            .map(|seed| {
                let clean = generate_regime(&m, BehaviourKind::Medium, EPISODES, HORIZON, seed).unwrap();
                let noisy = corrupt_rewards(&clean, 1.0, seed + 1000).unwrap();
                let drop = |lambda| {
                    anchors.score(trained_return(&m, &clean, lambda)).unwrap()
                        - anchors.score(trained_return(&m, &noisy, lambda)).unwrap()
                };
                (drop(0.0), drop(CORRUPTION_LAMBDA))
            })
            .collect();
        let base = median(drops.iter().map(|d| d.0).collect());
        let reg = median(drops.iter().map(|d| d.1).collect());
        let mean = |k: usize| drops.iter().map(|d| if k == 0 { d.0 } else { d.1 }).sum::<f64>() / drops.len() as f64;
        pass &= reg <= base + 1e-9;
        parts.push(format!(
            "{name}: median drop λ=0 {base:.2}, λ={CORRUPTION_LAMBDA} {reg:.2} (means {:.2} / {:.2})",
            mean(0),
            mean(1)
        ));
    }
    outcome(pass, parts.join("; "))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 13] = [
        ("Fenchel scalar identity", Duration::from_secs(1), fenchel_identity),
        ("exact scalar-dual variance", Duration::from_secs(1), scalar_dual_variance_check),
        ("ratio estimator oracle equivalence", Duration::from_secs(120), ratio_oracles),
        ("episodic vs marginalized second moment", Duration::from_secs(300), second_moment_battery),
        ("Rényi identity", Duration::from_secs(1), renyi_identity),
        ("TV improvement bound", Duration::from_secs(60), tv_bound_battery),
        ("sample variance of the ratio estimate", Duration::from_secs(120), sample_variance_battery),
        ("Cantelli coverage", Duration::from_secs(120), coverage_battery),
        ("variance gradient", Duration::from_secs(60), gradient_check),
        ("variance Bellman identity", Duration::from_secs(30), variance_bellman_identity),
        ("zero-λ equivalence", Duration::from_secs(60), zero_lambda_equivalence),
        ("regularization by data regime", Duration::from_secs(600), regime_comparison),
        ("reward-corruption robustness", Duration::from_secs(600), corruption_robustness),
    ];
    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = out.pass && in_time;
        failures += usize::from(!pass);
        println!(
            "criterion {:>2} {} {name}: {} [{:.2}s / budget {}s{}]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {}/{} criteria pass", criteria.len() - failures, criteria.len());
    if failures > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
