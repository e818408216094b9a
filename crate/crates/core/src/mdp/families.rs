//! Canned MDP families used by tests, benchmarks and the CLI.

use ndarray::{array, Array1, Array2, Array3};
use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{Policy, TabularMdp};
use crate::rng::seeded;
use crate::{Error, Result};

/// Single state, single action, constant reward.
pub fn identity(gamma: f64, reward: f64) -> Result<TabularMdp> {
    TabularMdp::new(Array3::from_elem((1, 1, 1), 1.0), array![[reward]], gamma, array![1.0])
}

/// Two states, start in `s0`. Action 0 stays put, action 1 switches state.
/// Staying in `s1` pays 1, everything else pays 0.
pub fn two_state(gamma: f64) -> Result<TabularMdp> {
    let mut p = Array3::zeros((2, 2, 2));
    p[[0, 0, 0]] = 1.0;
    p[[0, 1, 1]] = 1.0;
    p[[1, 0, 1]] = 1.0;
    p[[1, 1, 0]] = 1.0;
    TabularMdp::new(p, array![[0.0, 0.0], [1.0, 0.0]], gamma, array![1.0, 0.0])
}

/// The policy that moves to `s1` and stays there.
pub fn two_state_greedy() -> Policy {
    Policy::deterministic(&[1, 0], 2).expect("valid actions")
}

/// Chain of `n` states starting at the left end.
///
/// Action 0 resets to the start, paying 0.1 when taken there. Action 1 advances
/// with probability 0.9 (otherwise it slips back to the start); advancing at the
/// right end pays 1.
pub fn chain(n: usize, gamma: f64) -> Result<TabularMdp> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("chain needs at least 2 states, got {n}")));
    }
    let mut p = Array3::zeros((n, 2, n));
    let mut r = Array2::zeros((n, 2));
    for s in 0..n {
        p[[s, 0, 0]] = 1.0;
        let next = (s + 1).min(n - 1);
        p[[s, 1, next]] += 0.9;
        p[[s, 1, 0]] += 0.1;
    }
    r[[0, 0]] = 0.1;
    r[[n - 1, 1]] = 1.0;
    let mut beta = Array1::zeros(n);
    beta[0] = 1.0;
    TabularMdp::new(p, r, gamma, beta)
}

/// One decision state followed by three outcome states that all return to it.
///
/// Action 0 at the decision state leads to a sure outcome paying `safe`;
/// action 1 leads to a jackpot paying `jackpot` with probability `p_jackpot`
/// and otherwise to an outcome paying 0. Rewards at the decision state are 0.
pub fn risky_bandit(gamma: f64, safe: f64, jackpot: f64, p_jackpot: f64) -> Result<TabularMdp> {
    if !(0.0..=1.0).contains(&p_jackpot) {
        return Err(Error::InvalidArgument(format!("p_jackpot {p_jackpot} outside [0,1]")));
    }
    let mut p = Array3::zeros((4, 2, 4));
    p[[0, 0, 1]] = 1.0;
    p[[0, 1, 2]] = p_jackpot;
    p[[0, 1, 3]] = 1.0 - p_jackpot;
    for s in 1..4 {
        for a in 0..2 {
            p[[s, a, 0]] = 1.0;
        }
    }
    let r = array![[0.0, 0.0], [safe, safe], [jackpot, jackpot], [0.0, 0.0]];
    TabularMdp::new(p, r, gamma, array![1.0, 0.0, 0.0, 0.0])
}

/// Equal-mean arms: a sure 1 against a fair coin between 0 and 2.
pub fn two_arm_bandit(gamma: f64) -> Result<TabularMdp> {
    risky_bandit(gamma, 1.0, 2.0, 0.5)
}

/// A risky arm whose best outcome beats the safe arm but whose mean (0.45) does not.
pub fn trap_bandit(gamma: f64) -> Result<TabularMdp> {
    risky_bandit(gamma, 0.5, 1.0, 0.45)
}

/// Random instance: Dirichlet(1) transition rows and initial distribution,
/// rewards uniform on [0,1].
pub fn random(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<TabularMdp> {
    let mut rng = seeded(seed);
    let mut p = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        for a in 0..n_actions {
            let row = dirichlet_row(&mut rng, n_states);
            p.slice_mut(ndarray::s![s, a, ..]).assign(&row);
        }
    }
    let r = Array2::from_shape_fn((n_states, n_actions), |_| rng.random::<f64>());
    let beta = dirichlet_row(&mut rng, n_states);
    TabularMdp::new(p, r, gamma, beta)
}

/// Random instance whose dynamics ignore the action: every action in a state
/// shares one Dirichlet(1) next-state row. State visitation is then the same
/// for every policy.
pub fn random_action_blind(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<TabularMdp> {
    let mut rng = seeded(seed);
    let mut p = Array3::zeros((n_states, n_actions, n_states));
    for s in 0..n_states {
        let row = dirichlet_row(&mut rng, n_states);
        for a in 0..n_actions {
            p.slice_mut(ndarray::s![s, a, ..]).assign(&row);
        }
    }
    let r = Array2::from_shape_fn((n_states, n_actions), |_| rng.random::<f64>());
    let beta = dirichlet_row(&mut rng, n_states);
    TabularMdp::new(p, r, gamma, beta)
}

/// Random full-support policy with Dirichlet(1) rows.
pub fn random_policy(n_states: usize, n_actions: usize, seed: u64) -> Policy {
    let mut rng = seeded(seed);
    let mut probs = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        probs.row_mut(s).assign(&dirichlet_row(&mut rng, n_actions));
    }
    Policy::from_probs(probs).expect("dirichlet rows are normalized")
}

fn dirichlet_row<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array1<f64> {
    let mut row: Array1<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>().into();
    row.mapv_inplace(|x: f64| x.max(1e-12));
    let z = row.sum();
    row.mapv_inplace(|x| x / z);
    // Push the rounding error onto the largest entry so the row sums to one.
    let err = 1.0 - row.sum();
    let big = super::policy::argmax(row.view());
    row[big] += err;
    row
}
