use ndarray::{Array1, Array2};

use super::{finalize, flatten, unflatten, Diagnostics, DualVariables, Estimator, Flag, RatioConfig, RatioProblem, RatioTable};
use crate::mdp::Policy;
use crate::optim::{minimize, unconstrained, Eval};
use crate::Result;

/// DualDICE: minimizes `½ E_{d_D}[(ν - Bν)²] - (1-γ) E_{β,π}[ν]` over tabular `ν`
/// and reads out `ω̂ = max(ν - Bν, 0)`.
pub fn dualdice(
    problem: &RatioProblem,
    policy: &Policy,
    cfg: &RatioConfig,
) -> Result<(RatioTable, DualVariables)> {
    problem.check_policy(policy)?;
    let a = problem.operator(policy);
    let at = a.t().to_owned();
    let b = problem.start_vector(policy);
    let w = flatten(problem.weights());
    let objective = |nu: &Array1<f64>| {
        let x = a.dot(nu);
        let wx = &w * &x;
        let value = 0.5 * wx.dot(&x) - b.dot(nu);
        Eval::new(value, at.dot(&wx) - &b)
    };
    let res = minimize(objective, Array1::zeros(b.len()), &cfg.optim, unconstrained);
    let nu = unflatten(&res.x, problem.weights().dim());
    let x = problem.bellman_residual(policy, &nu);
    let mut diagnostics = Diagnostics {
        iterations: res.iterations,
        final_objective: res.value,
        residual: res.grad_norm,
        ..Default::default()
    };
    if !res.converged {
        diagnostics.flags.push(Flag::NotConverged);
    }
    let table = finalize(x, problem.weights(), Estimator::DualDice, cfg, diagnostics);
    Ok((
        table,
        DualVariables {
            nu,
            origin: Estimator::DualDice,
        },
    ))
}

/// Donsker-Varadhan form: minimizes `log E_{d_D}[exp(ν - Bν)] - (1-γ) E_{β,π}[ν]`.
///
/// The objective is unchanged when `ν - Bν` shifts by a constant, so the readout
/// is the self-normalized `ω̂ = exp(x - log E_{d_D}[e^x])`, and the overflow guard
/// applies to that centered `x` over every pair.
pub fn dv_kl_ratio(
    problem: &RatioProblem,
    policy: &Policy,
    cfg: &RatioConfig,
) -> Result<(RatioTable, DualVariables)> {
    problem.check_policy(policy)?;
    let a = problem.operator(policy);
    let at = a.t().to_owned();
    let b = problem.start_vector(policy);
    let w = flatten(problem.weights());
    let support: Vec<bool> = w.iter().map(|&wi| wi > cfg.support_eps).collect();
    let mut peak = f64::NEG_INFINITY;
    let objective = |nu: &Array1<f64>| {
        let x = a.dot(nu);
        let log_z = log_mean_exp(&x, &w, &support);
        let centered_max = x.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v - log_z));
        peak = centered_max;
        let p: Array1<f64> = x
            .iter()
            .zip(w.iter())
            .zip(&support)
            .map(|((&xi, &wi), &ok)| if ok { wi * (xi - log_z).exp() } else { 0.0 })
            .collect();
        Eval {
            value: log_z - b.dot(nu),
            grad: at.dot(&p) - &b,
            abort: centered_max > cfg.exp_clip,
        }
    };
    let res = minimize(objective, Array1::zeros(b.len()), &cfg.optim, unconstrained);
    let nu = unflatten(&res.x, problem.weights().dim());
    let x = flatten(&problem.bellman_residual(policy, &nu));
    let log_z = log_mean_exp(&x, &w, &support);
    let omega: Array2<f64> = unflatten(&x.mapv(|v| (v - log_z).exp()), problem.weights().dim());
    let mut diagnostics = Diagnostics {
        iterations: res.iterations,
        final_objective: res.value,
        residual: res.grad_norm,
        ..Default::default()
    };
    if res.aborted {
        diagnostics.flags.push(Flag::ExpClip { max_log_ratio: peak });
    } else if !res.converged {
        diagnostics.flags.push(Flag::NotConverged);
    }
    let table = finalize(omega, problem.weights(), Estimator::DvKl, cfg, diagnostics);
    Ok((
        table,
        DualVariables {
            nu,
            origin: Estimator::DvKl,
        },
    ))
}

/// Stable `log Σ_i w_i e^{x_i}` over supported atoms.
fn log_mean_exp(x: &Array1<f64>, w: &Array1<f64>, support: &[bool]) -> f64 {
    let m = x
        .iter()
        .zip(support)
        .filter(|(_, ok)| **ok)
        .fold(f64::NEG_INFINITY, |m, (&v, _)| m.max(v));
    let s: f64 = x
        .iter()
        .zip(w.iter())
        .zip(support)
        .filter(|(_, ok)| **ok)
        .map(|((&xi, &wi), _)| wi * (xi - m).exp())
        .sum();
    m + s.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_occupancy, families, OccupancyMeasure};
    use crate::ratio::exact_ratio;

    fn two_state_problem() -> (RatioProblem, RatioTable) {
        let m = families::two_state(0.9).unwrap();
        let pi = families::two_state_greedy();
        let d_mu = exact_occupancy(&m, &Policy::uniform(2, 2)).unwrap();
        let truth = exact_ratio(&exact_occupancy(&m, &pi).unwrap(), &d_mu).unwrap();
        (RatioProblem::exact(&m, &d_mu).unwrap(), truth)
    }

    #[test]
    fn dualdice_on_policy_constant_solution() {
        let m = families::random(4, 2, 0.9, 3).unwrap();
        let pi = families::random_policy(4, 2, 1);
        let d = exact_occupancy(&m, &pi).unwrap();
        let prob = RatioProblem::exact(&m, &d).unwrap();
        let constant = Array2::from_elem((4, 2), 1.0 / (1.0 - 0.9));
        let x = prob.bellman_residual(&pi, &constant);
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let (r, _) = dualdice(&prob, &pi, &RatioConfig::default()).unwrap();
        assert!(r.omega.iter().all(|w| (w - 1.0).abs() < 1e-6));
    }

    #[test]
    fn dualdice_two_state_matches_oracle() {
        let (prob, truth) = two_state_problem();
        let (r, _) = dualdice(&prob, &families::two_state_greedy(), &RatioConfig::default()).unwrap();
        assert!(r.diagnostics.converged());
        assert!(r.linf_distance(&truth) < 1e-3, "{}", r.linf_distance(&truth));
    }

    #[test]
    fn dualdice_omega_is_residual_of_returned_nu() {
        let (prob, _) = two_state_problem();
        let pi = families::two_state_greedy();
        let cfg = RatioConfig {
            renormalize: false,
            ..Default::default()
        };
        let (r, nu) = dualdice(&prob, &pi, &cfg).unwrap();
        let x = prob.bellman_residual(&pi, &nu.nu);
        assert_eq!(r.omega, x.mapv(|v| v.max(0.0)));
    }

    #[test]
    fn dualdice_gamma_zero_least_squares() {
        let m = families::random(3, 2, 0.0, 4).unwrap();
        let pi = families::random_policy(3, 2, 5);
        let mu = families::random_policy(3, 2, 6);
        let d_mu = exact_occupancy(&m, &mu).unwrap();
        let prob = RatioProblem::exact(&m, &d_mu).unwrap();
        let (r, _) = dualdice(&prob, &pi, &RatioConfig::default()).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                let expect = m.initial()[s] * pi.prob(s, a) / d_mu.get(s, a);
                assert!((r.get(s, a) - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dv_kl_two_state_matches_oracle() {
        let (prob, truth) = two_state_problem();
        let (r, _) = dv_kl_ratio(&prob, &families::two_state_greedy(), &RatioConfig::default()).unwrap();
        assert!(r.linf_distance(&truth) < 2e-3, "{}", r.linf_distance(&truth));
    }

    #[test]
    fn dv_kl_on_policy_is_zero_dual() {
        let m = families::random(3, 2, 0.9, 8).unwrap();
        let pi = families::random_policy(3, 2, 9);
        let prob = RatioProblem::exact(&m, &exact_occupancy(&m, &pi).unwrap()).unwrap();
        let (r, nu) = dv_kl_ratio(&prob, &pi, &RatioConfig::default()).unwrap();
        assert_eq!(r.diagnostics.iterations, 0);
        assert!(nu.nu.iter().all(|v| *v == 0.0));
        assert!(r.diagnostics.final_objective.abs() < 1e-12);
        assert!(r.omega.iter().all(|w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn dv_kl_flags_mismatched_support() {
        let m = families::two_state(0.9).unwrap();
        // Data never takes action 0 in s0, but the target does.
        let mut d = Array2::zeros((2, 2));
        d[[0, 1]] = 0.5;
        d[[1, 0]] = 0.25;
        d[[1, 1]] = 0.25;
        let prob = RatioProblem::exact(&m, &OccupancyMeasure::new(d, 0.9).unwrap()).unwrap();
        let (r, _) = dv_kl_ratio(&prob, &Policy::uniform(2, 2), &RatioConfig::default()).unwrap();
        assert!(r
            .diagnostics
            .flags
            .iter()
            .any(|f| matches!(f, Flag::ExpClip { .. })));
    }
}
