use ndarray::{Array1, Array2, Array3};

use crate::dataset::{behaviour_estimate, Dataset};
use crate::mdp::{exact_occupancy, OccupancyMeasure, Policy, TabularMdp};
use crate::ratio::RatioProblem;
use crate::{Error, Result};

/// Certainty-equivalent model of a dataset.
///
/// Transition and reward estimates are plain per-pair averages over the logged
/// transitions. The ratio problem keeps the `γ^t`-weighted data distribution the
/// ratio estimators work against.
#[derive(Debug, Clone)]
pub struct EmpiricalModel {
    pub transition: Array3<f64>,
    /// Mean logged reward `r̂(s,a)`.
    pub reward: Array2<f64>,
    /// Mean logged squared reward.
    pub reward_sq: Array2<f64>,
    pub supported: Array2<bool>,
    /// Smoothed behaviour estimate `μ̂`.
    pub behaviour: Policy,
    /// Empirical start distribution.
    pub initial: Array1<f64>,
    pub gamma: f64,
    pub problem: RatioProblem,
    dataset: Option<Dataset>,
}

impl EmpiricalModel {
    pub fn from_dataset(dataset: &Dataset, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma must lie in [0,1), got {gamma}")));
        }
        let (ns, na) = (dataset.n_states(), dataset.n_actions());
        let counts = dataset.counts();
        let mut transition = Array3::zeros((ns, na, ns));
        let mut reward = Array2::zeros((ns, na));
        let mut reward_sq = Array2::zeros((ns, na));
        let mut initial = Array1::zeros(ns);
        for tr in dataset.transitions() {
            transition[[tr.s, tr.a, tr.s_next]] += 1.0;
            reward[[tr.s, tr.a]] += tr.r;
            reward_sq[[tr.s, tr.a]] += tr.r * tr.r;
            if tr.t == 0 {
                initial[tr.s] += 1.0;
            }
        }
        for ((s, a), &n) in counts.indexed_iter() {
            if n > 0.0 {
                transition.slice_mut(ndarray::s![s, a, ..]).mapv_inplace(|x| x / n);
                reward[[s, a]] /= n;
                reward_sq[[s, a]] /= n;
            }
        }
        let starts = initial.sum();
        initial.mapv_inplace(|x| x / starts);
        Ok(Self {
            transition,
            reward,
            reward_sq,
            supported: counts.mapv(|n| n > 0.0),
            behaviour: behaviour_estimate(dataset),
            initial,
            gamma,
            problem: RatioProblem::from_dataset(dataset, gamma)?,
            dataset: Some(dataset.clone()),
        })
    }

    /// The true model with data distributed as the occupancy of `behaviour`.
    /// Pairs `behaviour` never takes count as unsupported.
    pub fn exact(mdp: &TabularMdp, behaviour: &Policy) -> Result<Self> {
        let d_data = exact_occupancy(mdp, behaviour)?;
        Ok(Self {
            transition: mdp.transition().clone(),
            reward: mdp.reward().clone(),
            reward_sq: mdp.reward().mapv(|r| r * r),
            supported: behaviour.probs().mapv(|p| p > 0.0),
            behaviour: behaviour.clone(),
            initial: mdp.initial().clone(),
            gamma: mdp.gamma(),
            problem: RatioProblem::exact(mdp, &d_data)?,
            dataset: None,
        })
    }

    pub fn n_states(&self) -> usize {
        self.reward.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.reward.ncols()
    }

    /// The logged transitions, when the model was built from a dataset.
    pub fn dataset(&self) -> Option<&Dataset> {
        self.dataset.as_ref()
    }

    /// The data distribution `d_D` as an occupancy.
    pub fn data_occupancy(&self) -> Result<OccupancyMeasure> {
        OccupancyMeasure::new(self.problem.weights().clone(), self.gamma)
    }

    /// States with at least one supported action.
    pub fn visited(&self, s: usize) -> bool {
        self.supported.row(s).iter().any(|&b| b)
    }

    /// Per-pair average of the per-transition augmented reward
    /// `r - λνr - λr²`, which is `r̂ - λνr̂ - λ·mean(r²)`.
    pub fn augmented_reward(&self, nu: &Array2<f64>, lambda: f64) -> Result<Array2<f64>> {
        let mut aug = crate::variance::augment_rewards(&self.reward, nu, lambda)?.r_tilde;
        if lambda != 0.0 {
            // augment_rewards subtracts λr̂²; the rest of λ·mean(r²) is the
            // within-pair reward variance.
            for ((idx, r), sq) in aug.indexed_iter_mut().zip(self.reward_sq.iter()) {
                let mean = self.reward[idx];
                *r -= lambda * (sq - mean * mean);
            }
        }
        Ok(aug)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate;
    use crate::mdp::families;

    #[test]
    fn counts_give_row_stochastic_model() {
        let m = families::random(4, 2, 0.9, 3).unwrap();
        let ds = generate(&m, &Policy::uniform(4, 2), 50, 20, 1).unwrap();
        let model = EmpiricalModel::from_dataset(&ds, 0.9).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                let sum: f64 = model.transition.slice(ndarray::s![s, a, ..]).sum();
                if model.supported[[s, a]] {
                    assert!((sum - 1.0).abs() < 1e-12);
                    assert!((model.reward[[s, a]] - m.reward()[[s, a]]).abs() < 1e-12);
                } else {
                    assert_eq!(sum, 0.0);
                }
            }
        }
        assert!((model.initial.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noisy_pairs_pay_their_reward_variance() {
        let m = families::two_state(0.9).unwrap();
        let ds = generate(&m, &Policy::uniform(2, 2), 20, 10, 0).unwrap();
        let ds = crate::dataset::corrupt_rewards(&ds, 1.0, 5).unwrap();
        let model = EmpiricalModel::from_dataset(&ds, 0.9).unwrap();
        let nu = Array2::zeros((2, 2));
        let aug = model.augmented_reward(&nu, 0.5).unwrap();
        for ((idx, &r), &sq) in model.reward.indexed_iter().zip(model.reward_sq.iter()) {
            assert!((aug[idx] - (r - 0.5 * sq)).abs() < 1e-12);
        }
        assert_eq!(model.augmented_reward(&nu, 0.0).unwrap(), model.reward);
    }
}
