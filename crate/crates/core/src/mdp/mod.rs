//! Finite discounted MDPs and their exact solution.
//!
//! Conventions used throughout the crate:
//! - occupancies are normalized, `d(s,a) = (1-γ) Σ_t γ^t P(s_t=s, a_t=a)`, so they sum to one;
//! - the return is `J(π) = E_{d_π}[r] = (1-γ) E_{s0~β, a0~π}[Q^π(s0,a0)]`;
//! - Bellman backups marginalize `a'` under the evaluated policy.

pub mod families;
mod io;
mod policy;
mod solve;

use ndarray::{Array1, Array2, Array3};

pub use io::{parse_mdp, write_mdp};
pub use policy::Policy;
pub use solve::{
    evaluate_cost, exact_occupancy, exact_state_occupancy, optimal_q, policy_return,
    policy_return_both, q_values, OccupancyMeasure, ReturnCheck, ValueTables,
};

use crate::{Error, Result};

pub const MAX_STATES: usize = 64;
pub const MAX_ACTIONS: usize = 16;

/// Tolerance on row sums of transition rows and the initial distribution.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// A finite MDP `(S, A, P, r, γ, β)`.
///
/// Immutable once built; [`TabularMdp::new`] runs [`TabularMdp::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    transition: Array3<f64>,
    reward: Array2<f64>,
    gamma: f64,
    initial: Array1<f64>,
    r_max: f64,
}

impl TabularMdp {
    /// `transition[[s, a, s']]`, `reward[[s, a]]`, `initial[s]`.
    pub fn new(
        transition: Array3<f64>,
        reward: Array2<f64>,
        gamma: f64,
        initial: Array1<f64>,
    ) -> Result<Self> {
        let r_max = reward.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
        let mdp = Self {
            transition,
            reward,
            gamma,
            initial,
            r_max,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Checks every structural invariant and reports the first violation.
    pub fn validate(&self) -> Result<()> {
        let (ns, na, ns2) = self.transition.dim();
        if ns == 0 || na == 0 {
            return Err(Error::InvalidMdp("need at least one state and one action".into()));
        }
        if ns > MAX_STATES || na > MAX_ACTIONS {
            return Err(Error::InvalidMdp(format!(
                "size {ns}x{na} exceeds cap {MAX_STATES}x{MAX_ACTIONS}"
            )));
        }
        if ns2 != ns {
            return Err(Error::InvalidMdp(format!(
                "transition tensor is {ns}x{na}x{ns2}, next-state axis must equal {ns}"
            )));
        }
        if self.reward.dim() != (ns, na) {
            return Err(Error::InvalidMdp(format!(
                "reward table is {:?}, expected ({ns}, {na})",
                self.reward.dim()
            )));
        }
        if self.initial.len() != ns {
            return Err(Error::InvalidMdp(format!(
                "initial distribution has {} entries, expected {ns}",
                self.initial.len()
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidMdp(format!(
                "gamma must lie in [0,1), got {}",
                self.gamma
            )));
        }
        for s in 0..ns {
            for a in 0..na {
                let row = self.transition.slice(ndarray::s![s, a, ..]);
                if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                    return Err(Error::InvalidMdp(format!(
                        "negative or non-finite probability {p} at (s={s},a={a})"
                    )));
                }
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidMdp(format!(
                        "row sum {sum} at (s={s},a={a})"
                    )));
                }
            }
        }
        if let Some((s, r)) = self
            .reward
            .indexed_iter()
            .find(|(_, r)| !r.is_finite())
            .map(|(i, r)| (i, *r))
        {
            return Err(Error::InvalidMdp(format!("non-finite reward {r} at {s:?}")));
        }
        if let Some(b) = self.initial.iter().find(|b| !b.is_finite() || **b < 0.0) {
            return Err(Error::InvalidMdp(format!("negative initial probability {b}")));
        }
        let sum = self.initial.sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidMdp(format!(
                "initial distribution sums to {sum}"
            )));
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.reward.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.reward.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &Array2<f64> {
        &self.reward
    }

    pub fn initial(&self) -> &Array1<f64> {
        &self.initial
    }

    /// `‖r‖_∞`, used by the concentration bounds.
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Same dynamics with a different reward table.
    pub fn with_reward(&self, reward: Array2<f64>) -> Result<Self> {
        Self::new(self.transition.clone(), reward, self.gamma, self.initial.clone())
    }

    /// Same dynamics and rewards with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.transition.clone(), self.reward.clone(), gamma, self.initial.clone())
    }

    /// State-to-state kernel under `policy`: `P_π[s, s'] = Σ_a π(a|s) P(s'|s,a)`.
    pub fn state_kernel(&self, policy: &Policy) -> Array2<f64> {
        let ns = self.n_states();
        let mut k = Array2::zeros((ns, ns));
        for s in 0..ns {
            for a in 0..self.n_actions() {
                let p = policy.prob(s, a);
                if p == 0.0 {
                    continue;
                }
                for s2 in 0..ns {
                    k[[s, s2]] += p * self.transition[[s, a, s2]];
                }
            }
        }
        k
    }

    /// Short content hash of the canonical text serialization.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = write_mdp(self);
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub(crate) fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.n_states() != self.n_states() || policy.n_actions() != self.n_actions() {
            return Err(Error::Shape(format!(
                "policy is {}x{}, mdp is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states(),
                self.n_actions()
            )));
        }
        Ok(())
    }
}
