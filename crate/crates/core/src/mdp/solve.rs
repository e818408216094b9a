use ndarray::{Array1, Array2};

use super::{Policy, TabularMdp};
use crate::linalg::solve;
use crate::{Error, Result};

const SOLVE_RESIDUAL: f64 = 1e-10;
const OCCUPANCY_SUM_TOL: f64 = 1e-9;

/// Normalized discounted state-action occupancy `d(s,a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure {
    d: Array2<f64>,
    gamma: f64,
}

impl OccupancyMeasure {
    /// Entries must be nonnegative and sum to one within 1e-9.
    pub fn new(d: Array2<f64>, gamma: f64) -> Result<Self> {
        if let Some(x) = d.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidArgument(format!("occupancy entry {x} is negative")));
        }
        let sum = d.sum();
        if (sum - 1.0).abs() > OCCUPANCY_SUM_TOL {
            return Err(Error::InvalidArgument(format!("occupancy sums to {sum}")));
        }
        Ok(Self { d, gamma })
    }

    /// Normalizes a nonnegative weight table into an occupancy.
    pub fn from_weights(w: Array2<f64>, gamma: f64) -> Result<Self> {
        let total = w.sum();
        if !(total > 0.0) {
            return Err(Error::InvalidArgument("weights have no mass".into()));
        }
        Self::new(w.mapv(|x| x / total), gamma)
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.d
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.d[[s, a]]
    }

    pub fn dim(&self) -> (usize, usize) {
        self.d.dim()
    }

    pub fn state_marginal(&self) -> Array1<f64> {
        self.d.sum_axis(ndarray::Axis(1))
    }

    /// `E_d[f]` for a table `f[s,a]`.
    pub fn expect(&self, f: &Array2<f64>) -> f64 {
        (&self.d * f).sum()
    }

    /// Total variation distance `½ Σ |d - d'|`.
    pub fn total_variation(&self, other: &OccupancyMeasure) -> f64 {
        0.5 * (&self.d - &other.d).mapv(f64::abs).sum()
    }
}

/// `Q`, `V` and `A = Q - V` for one policy under one reward (or cost) table.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    pub q: Array2<f64>,
    pub v: Array1<f64>,
    pub advantage: Array2<f64>,
}

/// Normalized discounted state occupancy `ρ = (1-γ)(I - γ P_πᵀ)⁻¹ β`.
pub fn exact_state_occupancy(mdp: &TabularMdp, policy: &Policy) -> Result<Array1<f64>> {
    mdp.check_policy(policy)?;
    let ns = mdp.n_states();
    let gamma = mdp.gamma();
    let kernel = mdp.state_kernel(policy);
    let mut a = Array2::eye(ns);
    a.scaled_add(-gamma, &kernel.t());
    let b = mdp.initial().mapv(|x| (1.0 - gamma) * x);
    let rho = solve(&a, &b, SOLVE_RESIDUAL)?;
    Ok(rho.mapv(|x| if x < 0.0 && x > -1e-13 { 0.0 } else { x }))
}

/// `d_π(s,a) = ρ(s) π(a|s)`, the fixed point of
/// `d(s,a) = (1-γ)β(s)π(a|s) + γ π(a|s) Σ P(s|s̄,ā) d(s̄,ā)`.
pub fn exact_occupancy(mdp: &TabularMdp, policy: &Policy) -> Result<OccupancyMeasure> {
    let rho = exact_state_occupancy(mdp, policy)?;
    let mut d = policy.probs().clone();
    for (s, mut row) in d.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|p| p * rho[s]);
    }
    let sum = d.sum();
    if (sum - 1.0).abs() > OCCUPANCY_SUM_TOL {
        return Err(Error::Numerical(format!("occupancy sums to {sum}")));
    }
    OccupancyMeasure::new(d, mdp.gamma())
}

/// Policy evaluation for an arbitrary per-step cost table: `Q = c + γ P V`, `V = Σ_a π Q`.
pub fn evaluate_cost(mdp: &TabularMdp, policy: &Policy, cost: &Array2<f64>) -> Result<ValueTables> {
    mdp.check_policy(policy)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    if cost.dim() != (ns, na) {
        return Err(Error::Shape(format!("cost table {:?} vs mdp ({ns}, {na})", cost.dim())));
    }
    let gamma = mdp.gamma();
    let kernel = mdp.state_kernel(policy);
    let mut a = Array2::eye(ns);
    a.scaled_add(-gamma, &kernel);
    let c_pi = Array1::from_iter((0..ns).map(|s| policy.row(s).dot(&cost.row(s))));
    let v = solve(&a, &c_pi, SOLVE_RESIDUAL)?;
    let p = mdp.transition();
    let mut q = cost.clone();
    for s in 0..ns {
        for act in 0..na {
            let next: f64 = (0..ns).map(|s2| p[[s, act, s2]] * v[s2]).sum();
            q[[s, act]] += gamma * next;
        }
    }
    let mut advantage = q.clone();
    for (s, mut row) in advantage.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|x| x - v[s]);
    }
    Ok(ValueTables { q, v, advantage })
}

pub fn q_values(mdp: &TabularMdp, policy: &Policy) -> Result<ValueTables> {
    evaluate_cost(mdp, policy, mdp.reward())
}

/// `J(π)` computed through the occupancy and through the initial-state values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnCheck {
    /// `E_{d_π}[r]`.
    pub via_occupancy: f64,
    /// `(1-γ) E_{s0~β, a0~π}[Q^π(s0,a0)]`.
    pub via_initial_values: f64,
}

pub fn policy_return_both(mdp: &TabularMdp, policy: &Policy) -> Result<ReturnCheck> {
    let d = exact_occupancy(mdp, policy)?;
    let values = q_values(mdp, policy)?;
    let via_occupancy = d.expect(mdp.reward());
    let start: f64 = (0..mdp.n_states())
        .map(|s| mdp.initial()[s] * policy.row(s).dot(&values.q.row(s)))
        .sum();
    Ok(ReturnCheck {
        via_occupancy,
        via_initial_values: (1.0 - mdp.gamma()) * start,
    })
}

/// Normalized return `J(π) = E_{d_π}[r]`; errors if the two routes disagree beyond 1e-9.
pub fn policy_return(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    let check = policy_return_both(mdp, policy)?;
    let gap = (check.via_occupancy - check.via_initial_values).abs();
    if gap > 1e-9 * mdp.r_max().max(1.0) {
        return Err(Error::Numerical(format!(
            "primal/dual return mismatch {gap:.3e}"
        )));
    }
    Ok(check.via_occupancy)
}

/// Optimal `Q*` by exact policy iteration.
pub fn optimal_q(mdp: &TabularMdp) -> Result<Array2<f64>> {
    let mut actions: Vec<usize> = mdp
        .reward()
        .rows()
        .into_iter()
        .map(super::policy::argmax)
        .collect();
    for _ in 0..10_000 {
        let policy = Policy::deterministic(&actions, mdp.n_actions())?;
        let q = q_values(mdp, &policy)?.q;
        let mut changed = false;
        for (s, row) in q.rows().into_iter().enumerate() {
            let best = super::policy::argmax(row);
            let scale = 1e-12 * (1.0 + row[best].abs());
            if row[best] > row[actions[s]] + scale {
                actions[s] = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(q);
        }
    }
    Err(Error::Numerical("policy iteration did not terminate".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::families;
    use ndarray::{array, Array3};

    fn one_state(r: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(Array3::from_elem((1, 1, 1), 1.0), array![[r]], gamma, array![1.0]).unwrap()
    }

    #[test]
    fn single_pair_occupancy_is_one() {
        for gamma in [0.0, 0.3, 0.99] {
            let m = one_state(1.0, gamma);
            let d = exact_occupancy(&m, &Policy::uniform(1, 1)).unwrap();
            assert!((d.get(0, 0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_series_q() {
        let m = one_state(1.0, 0.5);
        let v = q_values(&m, &Policy::uniform(1, 1)).unwrap();
        assert!((v.q[[0, 0]] - 2.0).abs() < 1e-12);
        assert!((policy_return(&m, &Policy::uniform(1, 1)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_zero_values() {
        let m = families::two_state(0.9).unwrap();
        let m = m.with_reward(Array2::zeros((2, 2))).unwrap();
        let v = q_values(&m, &Policy::uniform(2, 2)).unwrap();
        assert!(v.q.iter().all(|x| x.abs() < 1e-15));
        assert!(v.advantage.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn constant_reward_return_is_constant() {
        let m = families::random(5, 3, 0.8, 4).unwrap();
        let m = m.with_reward(Array2::from_elem((5, 3), 0.37)).unwrap();
        for seed in 0..5 {
            let pi = families::random_policy(5, 3, seed);
            assert!((policy_return(&m, &pi).unwrap() - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn value_consistency_invariants() {
        let m = families::random(6, 3, 0.9, 1).unwrap();
        let pi = families::random_policy(6, 3, 2);
        let v = q_values(&m, &pi).unwrap();
        for s in 0..6 {
            assert!((pi.row(s).dot(&v.q.row(s)) - v.v[s]).abs() < 1e-12);
            assert!(pi.row(s).dot(&v.advantage.row(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_q_dominates_uniform() {
        let m = families::random(5, 3, 0.9, 8).unwrap();
        let q_star = optimal_q(&m).unwrap();
        let q_unif = q_values(&m, &Policy::uniform(5, 3)).unwrap().q;
        for (a, b) in q_star.iter().zip(q_unif.iter()) {
            assert!(a + 1e-12 >= *b);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = families::two_state(0.9).unwrap();
        assert!(exact_occupancy(&m, &Policy::uniform(3, 2)).is_err());
    }
}
