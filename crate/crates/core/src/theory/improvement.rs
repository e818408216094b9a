use rand::Rng;

use super::BoundReport;
use crate::mdp::{exact_occupancy, policy_return, q_values, Policy, TabularMdp};
use crate::rng::seeded;
use crate::{Error, Result};

/// Ingredients shared by the improvement bounds.
struct Surrogate {
    j: f64,
    j_prime: f64,
    /// `E_{s~d_π, a~π'}[A^π(s,a)]`.
    expected_advantage: f64,
    /// `max_s |E_{a~π'}[A^π(s,a)]|`.
    epsilon: f64,
    tv: f64,
    d_pi: Vec<f64>,
}

fn surrogate(mdp: &TabularMdp, pi: &Policy, pi_prime: &Policy) -> Result<Surrogate> {
    let values = q_values(mdp, pi)?;
    let d = exact_occupancy(mdp, pi)?;
    let d_prime = exact_occupancy(mdp, pi_prime)?;
    let rho = d.state_marginal();
    let mut expected_advantage = 0.0;
    let mut epsilon = 0.0_f64;
    for s in 0..mdp.n_states() {
        let abar = pi_prime.row(s).dot(&values.advantage.row(s));
        expected_advantage += rho[s] * abar;
        epsilon = epsilon.max(abar.abs());
    }
    Ok(Surrogate {
        j: policy_return(mdp, pi)?,
        j_prime: policy_return(mdp, pi_prime)?,
        expected_advantage,
        epsilon,
        tv: d_prime.total_variation(&d),
        d_pi: d.table().iter().copied().collect(),
    })
}

/// `J(π') ≥ J(π) + E_{s~d_π, a~π'}[A^π] - ε^π D_TV(d_π' ‖ d_π)`.
pub fn check_lemma2_tv(mdp: &TabularMdp, pi: &Policy, pi_prime: &Policy, context: &str) -> Result<BoundReport> {
    let s = surrogate(mdp, pi, pi_prime)?;
    let lower = s.j + s.expected_advantage - s.epsilon * s.tv;
    Ok(BoundReport::new("lemma2_tv", lower, s.j_prime, context, true))
}

/// The `f` class of the variance penalty: functions with values in `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FClass {
    /// Largest number of atoms whose binary vertices are enumerated exhaustively.
    pub max_enumerated: usize,
    /// Random-restart local searches used beyond that size; `None` makes large
    /// instances an error instead.
    pub restarts: Option<usize>,
    pub seed: u64,
}

impl Default for FClass {
    fn default() -> Self {
        Self {
            max_enumerated: 20,
            restarts: None,
            seed: 0,
        }
    }
}

/// `max Var_w[f]` over `f` with values in `[0,1]`.
///
/// The variance is convex in `f`, so the maximum sits at a binary vertex, where it
/// equals `p(1-p)` for the mass `p` of the set `{f = 1}`. Exact up to
/// `max_enumerated` atoms; above that, a lower bound from local search.
pub fn max_unit_range_variance(weights: &[f64], class: FClass) -> Result<f64> {
    let n = weights.len();
    let score = |p: f64| p * (1.0 - p);
    if n <= class.max_enumerated {
        let mut best = 0.0_f64;
        for mask in 0u64..(1u64 << n) {
            let p: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| weights[i]).sum();
            best = best.max(score(p));
        }
        return Ok(best);
    }
    let restarts = class.restarts.ok_or(Error::EnumerationTooLarge {
        count: 2f64.powi(n as i32),
        cap: 1u64 << class.max_enumerated,
    })?;
    let mut rng = seeded(class.seed);
    let mut best = 0.0_f64;
    for _ in 0..restarts.max(1) {
        let mut inside: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        let mut p: f64 = (0..n).filter(|&i| inside[i]).map(|i| weights[i]).sum();
        loop {
            let flip = (0..n)
                .map(|i| (i, if inside[i] { p - weights[i] } else { p + weights[i] }))
                .max_by(|a, b| score(a.1).total_cmp(&score(b.1)));
            match flip {
                Some((i, q)) if score(q) > score(p) => {
                    inside[i] = !inside[i];
                    p = q;
                }
                _ => break,
            }
        }
        best = best.max(score(p));
    }
    Ok(best)
}

/// `J(π') - J(π) ≥ E_{s~d_π, a~π'}[A^π] - C max_f Var_{d_π}[f]` over the
/// `[0,1]`-valued class, with `C = ε^π` unless given.
pub fn check_theorem1(
    mdp: &TabularMdp,
    pi: &Policy,
    pi_prime: &Policy,
    c: Option<f64>,
    class: FClass,
    context: &str,
) -> Result<BoundReport> {
    let s = surrogate(mdp, pi, pi_prime)?;
    let c = c.unwrap_or(s.epsilon);
    let max_var = max_unit_range_variance(&s.d_pi, class)?;
    Ok(BoundReport::new(
        "theorem1_variance",
        s.expected_advantage - c * max_var,
        s.j_prime - s.j,
        format!("{context} C={c:.6e} maxvar={max_var:.6e}"),
        false,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::families;

    #[test]
    fn same_policy_is_tight() {
        let m = families::random(4, 3, 0.9, 1).unwrap();
        let pi = families::random_policy(4, 3, 2);
        let r = check_lemma2_tv(&m, &pi, &pi, "same").unwrap();
        assert!(r.slack().abs() < 1e-12);
        let t = check_theorem1(&m, &pi, &pi, None, FClass::default(), "same").unwrap();
        assert!(t.holds());
        assert!(t.rhs.abs() < 1e-12);
    }

    #[test]
    fn tv_bound_on_random_triples() {
        for seed in 0..50 {
            let (ns, na) = (2 + seed as usize % 4, 2 + seed as usize % 2);
            let m = families::random(ns, na, 0.9, seed).unwrap();
            let pi = families::random_policy(ns, na, seed + 100);
            let pp = families::random_policy(ns, na, seed + 200);
            let r = check_lemma2_tv(&m, &pi, &pp, "random").unwrap();
            assert!(r.holds(), "{r:?}");
        }
    }

    #[test]
    fn small_deviation_is_second_order() {
        let m = families::random(4, 2, 0.9, 7).unwrap();
        let pi = families::random_policy(4, 2, 8);
        let mut probs = pi.probs().clone();
        probs[[1, 0]] += 1e-4;
        probs[[1, 1]] -= 1e-4;
        let pp = Policy::from_probs(probs).unwrap();
        let r = check_lemma2_tv(&m, &pi, &pp, "local").unwrap();
        assert!(r.holds());
        assert!(r.slack() < 1e-6, "slack {}", r.slack());
    }

    #[test]
    fn unit_range_variance_is_at_most_a_quarter() {
        let w = [0.1, 0.2, 0.3, 0.4];
        assert!((max_unit_range_variance(&w, FClass::default()).unwrap() - 0.25).abs() < 1e-15);
        let skewed = [0.9, 0.05, 0.05];
        assert!((max_unit_range_variance(&skewed, FClass::default()).unwrap() - 0.09).abs() < 1e-12);
    }

    #[test]
    fn large_classes_need_restarts() {
        let w = vec![1.0 / 30.0; 30];
        assert!(max_unit_range_variance(&w, FClass::default()).is_err());
        let v = max_unit_range_variance(
            &w,
            FClass {
                restarts: Some(5),
                ..Default::default()
            },
        )
        .unwrap();
        assert!((v - 0.25).abs() < 1e-12);
    }
}
