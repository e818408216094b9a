use ndarray::{Array1, Array2};

use super::{finalize, flatten, unflatten, Diagnostics, Estimator, Flag, RatioConfig, RatioProblem, RatioTable};
use crate::mdp::Policy;
use crate::optim::{minimize, Eval};
use crate::Result;

/// Minimax weight learning: `min_ω max_{‖Q‖₂ ≤ 1} J(ω,π,Q)²`.
///
/// `J` is linear in `Q`, `J = Qᵀ m(ω)` with `m(ω) = Aᵀ(d_D ∘ ω) - (1-γ)β_π`, so
/// the adversary's best response on the unit ball is `Q = m / ‖m‖` and the
/// inner value is `‖m‖²`. Each descent step on `ω` is taken against that
/// response, in the preconditioned coordinates `u = d_D ∘ ω` and projected
/// onto `ω ≥ 0` (unsupported pairs pinned at zero).
///
/// Returns the estimate and the final adversarial `Q`.
pub fn mwl(problem: &RatioProblem, policy: &Policy, cfg: &RatioConfig) -> Result<(RatioTable, Array2<f64>)> {
    problem.check_policy(policy)?;
    let a = problem.operator(policy);
    let at = a.t().to_owned();
    let b = problem.start_vector(policy);
    let w = flatten(problem.weights());
    let support: Vec<bool> = w.iter().map(|&wi| wi > cfg.support_eps).collect();
    let moments = |u: &Array1<f64>| at.dot(u) - &b;
    let objective = |u: &Array1<f64>| {
        let m = moments(u);
        let q = adversary(&m);
        // d/du of J(u, q)² with q held at the best response.
        let j = q.dot(&m);
        Eval::new(0.5 * j * j, a.dot(&q) * j)
    };
    let project = |u: &mut Array1<f64>| {
        for (ui, ok) in u.iter_mut().zip(&support) {
            *ui = if *ok { ui.max(0.0) } else { 0.0 };
        }
    };
    let res = minimize(objective, w.clone(), &cfg.optim, project);
    let m = moments(&res.x);
    let worst = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let omega: Array1<f64> = res
        .x
        .iter()
        .zip(w.iter())
        .zip(&support)
        .map(|((&u, &wi), &ok)| if ok { u / wi } else { 0.0 })
        .collect();
    let mut diagnostics = Diagnostics {
        iterations: res.iterations,
        final_objective: res.value,
        residual: worst,
        ..Default::default()
    };
    if worst >= cfg.mwl_tol {
        diagnostics.flags.push(Flag::NotConverged);
    }
    let dim = problem.weights().dim();
    let table = finalize(unflatten(&omega, dim), problem.weights(), Estimator::Mwl, cfg, diagnostics);
    Ok((table, unflatten(&adversary(&m), dim)))
}

fn adversary(m: &Array1<f64>) -> Array1<f64> {
    let n = m.dot(m).sqrt();
    if n > 0.0 {
        m / n
    } else {
        Array1::zeros(m.len())
    }
}
