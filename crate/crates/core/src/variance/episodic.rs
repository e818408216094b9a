use ndarray::{Array1, Array2};

use super::VarianceDecomposition;
use crate::mdp::{Policy, TabularMdp};
use crate::rng::{categorical, seeded};
use crate::{Error, Result};

/// How the trajectory distribution is integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodicMode {
    /// Backward recursion over time steps; exact and polynomial in the horizon.
    Exact,
    /// Walks every trajectory with positive probability. Fails when the number of
    /// candidate trajectories exceeds `cap`.
    Enumerate { cap: u64 },
    /// Rollouts under the behaviour policy.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Moments of the per-decision importance-sampled return
/// `D = Σ_{t<H} γ^t r_t ρ_{0:t}` over trajectories drawn with the behaviour policy,
/// where `ρ_{0:t} = Π_{k≤t} π(a_k|s_k)/μ(a_k|s_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodicVariance {
    pub decomposition: VarianceDecomposition,
    /// `E[Σ_{t<H} γ^t r_t² ρ_{0:t}²]`, the weighted sum that bounds `E[D²]` via Cauchy-Schwarz.
    pub weighted_square_sum: f64,
    /// Standard errors of the mean and of the variance (Monte-Carlo mode only).
    pub mean_std_error: Option<f64>,
    pub variance_std_error: Option<f64>,
    /// `γ^H r_max / (1-γ)`, the most the untruncated return can differ from `D`
    /// per unit of importance weight.
    pub truncation_bound: f64,
    pub horizon: usize,
}

pub fn episodic_is_variance(
    mdp: &TabularMdp,
    policy: &Policy,
    behaviour: &Policy,
    horizon: usize,
    mode: EpisodicMode,
) -> Result<EpisodicVariance> {
    mdp.check_policy(policy)?;
    mdp.check_policy(behaviour)?;
    let rho = importance_ratios(policy, behaviour)?;
    let gamma = mdp.gamma();
    let truncation_bound = if gamma < 1.0 {
        gamma.powi(horizon as i32) * mdp.r_max() / (1.0 - gamma)
    } else {
        f64::INFINITY
    };
    let mut out = match mode {
        EpisodicMode::Exact => backward(mdp, behaviour, &rho, horizon),
        EpisodicMode::Enumerate { cap } => enumerate(mdp, behaviour, &rho, horizon, cap)?,
        EpisodicMode::MonteCarlo { samples, seed } => monte_carlo(mdp, behaviour, &rho, horizon, samples, seed)?,
    };
    out.truncation_bound = truncation_bound;
    Ok(out)
}

fn importance_ratios(policy: &Policy, behaviour: &Policy) -> Result<Array2<f64>> {
    let mut rho = Array2::zeros(policy.probs().dim());
    for ((s, a), r) in rho.indexed_iter_mut() {
        let (p, m) = (policy.prob(s, a), behaviour.prob(s, a));
        if m > 0.0 {
            *r = p / m;
        } else if p > 0.0 {
            return Err(Error::Support(format!(
                "target takes action {a} in state {s} but the behaviour policy never does"
            )));
        }
    }
    Ok(rho)
}

fn result(mean: f64, second: f64, weighted_square_sum: f64, horizon: usize) -> EpisodicVariance {
    EpisodicVariance {
        decomposition: VarianceDecomposition::from_moments(second, mean),
        weighted_square_sum,
        mean_std_error: None,
        variance_std_error: None,
        truncation_bound: 0.0,
        horizon,
    }
}

/// With `G_t = ρ_t (r_t + γ G_{t+1})` the conditional moments satisfy
/// `m_t = Σ_a μ ρ (r + γ P m_{t+1})` and
/// `q_t = Σ_a μ ρ² (r² + 2γ r P m_{t+1} + γ² P q_{t+1})`.
fn backward(mdp: &TabularMdp, behaviour: &Policy, rho: &Array2<f64>, horizon: usize) -> EpisodicVariance {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let (p, r, gamma) = (mdp.transition(), mdp.reward(), mdp.gamma());
    let mut m = Array1::<f64>::zeros(ns);
    let mut q = Array1::<f64>::zeros(ns);
    let mut u = Array1::<f64>::zeros(ns);
    for _ in 0..horizon {
        let mut m_new = Array1::zeros(ns);
        let mut q_new = Array1::zeros(ns);
        let mut u_new = Array1::zeros(ns);
        for s in 0..ns {
            for a in 0..na {
                let mu = behaviour.prob(s, a);
                if mu == 0.0 {
                    continue;
                }
                let w = rho[[s, a]];
                let row = p.slice(ndarray::s![s, a, ..]);
                let (pm, pq, pu) = (row.dot(&m), row.dot(&q), row.dot(&u));
                let rr = r[[s, a]];
                m_new[s] += mu * w * (rr + gamma * pm);
                q_new[s] += mu * w * w * (rr * rr + 2.0 * gamma * rr * pm + gamma * gamma * pq);
                u_new[s] += mu * w * w * (rr * rr + gamma * pu);
            }
        }
        m = m_new;
        q = q_new;
        u = u_new;
    }
    let beta = mdp.initial();
    result(beta.dot(&m), beta.dot(&q), beta.dot(&u), horizon)
}

/// Number of candidate trajectories: start states times `(|A||S|)^{H-1} |A|`.
fn trajectory_count(mdp: &TabularMdp, horizon: usize) -> f64 {
    if horizon == 0 {
        return 1.0;
    }
    let starts = mdp.initial().iter().filter(|b| **b > 0.0).count() as f64;
    let branching = (mdp.n_states() * mdp.n_actions()) as f64;
    starts * branching.powi(horizon as i32 - 1) * mdp.n_actions() as f64
}

struct Walk<'a> {
    mdp: &'a TabularMdp,
    behaviour: &'a Policy,
    rho: &'a Array2<f64>,
    horizon: usize,
    mean: f64,
    second: f64,
    square_sum: f64,
}

impl Walk<'_> {
    fn visit(&mut self, s: usize, t: usize, prob: f64, weight: f64, ret: f64, sq: f64) {
        let gamma_t = self.mdp.gamma().powi(t as i32);
        for a in 0..self.mdp.n_actions() {
            let mu = self.behaviour.prob(s, a);
            if mu == 0.0 {
                continue;
            }
            let w = weight * self.rho[[s, a]];
            let r = self.mdp.reward()[[s, a]];
            let ret = ret + gamma_t * r * w;
            let sq = sq + gamma_t * r * r * w * w;
            let prob = prob * mu;
            if t + 1 == self.horizon {
                self.mean += prob * ret;
                self.second += prob * ret * ret;
                self.square_sum += prob * sq;
                continue;
            }
            for s2 in 0..self.mdp.n_states() {
                let ps = self.mdp.transition()[[s, a, s2]];
                if ps > 0.0 {
                    self.visit(s2, t + 1, prob * ps, w, ret, sq);
                }
            }
        }
    }
}

fn enumerate(mdp: &TabularMdp, behaviour: &Policy, rho: &Array2<f64>, horizon: usize, cap: u64) -> Result<EpisodicVariance> {
    let count = trajectory_count(mdp, horizon);
    if count > cap as f64 {
        return Err(Error::EnumerationTooLarge { count, cap });
    }
    if horizon == 0 {
        return Ok(result(0.0, 0.0, 0.0, 0));
    }
    let mut walk = Walk {
        mdp,
        behaviour,
        rho,
        horizon,
        mean: 0.0,
        second: 0.0,
        square_sum: 0.0,
    };
    for (s, &b) in mdp.initial().iter().enumerate() {
        if b > 0.0 {
            walk.visit(s, 0, b, 1.0, 0.0, 0.0);
        }
    }
    Ok(result(walk.mean, walk.second, walk.square_sum, horizon))
}

fn monte_carlo(
    mdp: &TabularMdp,
    behaviour: &Policy,
    rho: &Array2<f64>,
    horizon: usize,
    samples: usize,
    seed: u64,
) -> Result<EpisodicVariance> {
    if samples < 2 {
        return Err(Error::InvalidArgument("Monte-Carlo mode needs at least 2 samples".into()));
    }
    let mut rng = seeded(seed);
    let beta = mdp.initial().to_vec();
    let rows: Vec<Vec<f64>> = (0..mdp.n_states()).map(|s| behaviour.row(s).to_vec()).collect();
    let p = mdp.transition();
    let mut returns = Vec::with_capacity(samples);
    let mut square_sum = 0.0;
    for _ in 0..samples {
        let mut s = categorical(&mut rng, &beta);
        let (mut weight, mut ret, mut sq, mut disc) = (1.0, 0.0, 0.0, 1.0);
        for _ in 0..horizon {
            let a = categorical(&mut rng, &rows[s]);
            weight *= rho[[s, a]];
            let r = mdp.reward()[[s, a]];
            ret += disc * r * weight;
            sq += disc * r * r * weight * weight;
            disc *= mdp.gamma();
            let next = p.slice(ndarray::s![s, a, ..]);
            s = categorical(&mut rng, next.as_slice().expect("contiguous transition row"));
        }
        returns.push(ret);
        square_sum += sq;
    }
    let n = samples as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let second = returns.iter().map(|x| x * x).sum::<f64>() / n;
    let dev: Vec<f64> = returns.iter().map(|x| (x - mean) * (x - mean)).collect();
    let variance = dev.iter().sum::<f64>() / (n - 1.0);
    let dev_mean = dev.iter().sum::<f64>() / n;
    let dev_var = dev.iter().map(|d| (d - dev_mean) * (d - dev_mean)).sum::<f64>() / (n - 1.0);
    Ok(EpisodicVariance {
        decomposition: VarianceDecomposition {
            second_moment: second,
            mean,
            variance,
        },
        weighted_square_sum: square_sum / n,
        mean_std_error: Some((variance / n).sqrt()),
        variance_std_error: Some((dev_var / n).sqrt()),
        truncation_bound: 0.0,
        horizon,
    })
}
