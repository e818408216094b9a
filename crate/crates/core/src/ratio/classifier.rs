use ndarray::{Array1, Array2};

use super::{finalize, flatten, unflatten, Diagnostics, Estimator, Flag, RatioConfig, RatioTable};
use crate::dataset::Dataset;
use crate::mdp::Policy;
use crate::optim::{minimize, Eval, Method, OptimConfig};
use crate::rng::{categorical, seeded};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierObjective {
    /// Cross-entropy with target-policy resamples as the positive class and
    /// dataset pairs as the negative class.
    Symmetric,
    /// Both expectations enter as `log σ(φ)`; unbounded above, so the logits drift
    /// until the iteration cap.
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierReadout {
    /// `ω̂ = exp φ`. Both classes carry unit mass, so no prior correction is needed.
    Odds,
    /// `ω̂ = σ(φ)`, which can never exceed 1.
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    pub objective: ClassifierObjective,
    pub readout: ClassifierReadout,
    /// States with fewer dataset visits fall back to `ω = 1` and are flagged.
    pub min_samples: usize,
    /// Target-policy actions drawn per dataset transition; 0 uses the exact
    /// expectation over `π(·|s)` instead of sampling.
    pub resamples: usize,
    pub seed: u64,
    /// Weight records by `γ^t` instead of counting each logged pair once.
    pub discounted: bool,
    /// Step and stopping rule for the per-pair, curvature-scaled ascent.
    pub optim: OptimConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            objective: ClassifierObjective::Symmetric,
            readout: ClassifierReadout::Odds,
            min_samples: 10,
            resamples: 0,
            seed: 0,
            discounted: false,
            optim: OptimConfig {
                step: 1.0,
                max_iters: 50_000,
                grad_tol: 1e-10,
                method: Method::Nesterov,
            },
        }
    }
}

/// Trains one logit per state-action pair to tell dataset pairs `(s,a)` from
/// resampled pairs `(s, a~π(·|s))` and reads the ratio out of the logits.
///
/// Both classes share the dataset's states, so the estimate targets
/// `π(a|s) / μ(a|s)`; it equals `d_π / d_D` when the two state marginals agree.
pub fn classifier_ratio(
    dataset: &Dataset,
    policy: &Policy,
    gamma: f64,
    cfg: &RatioConfig,
) -> Result<RatioTable> {
    let ccfg = &cfg.classifier;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("classifier needs a nonempty dataset".into()));
    }
    let (ns, na) = (dataset.n_states(), dataset.n_actions());
    if policy.probs().dim() != (ns, na) {
        return Err(Error::Shape("policy does not match dataset".into()));
    }
    let mut rng = seeded(ccfg.seed);
    let mut w_data = Array2::<f64>::zeros((ns, na));
    let mut w_target = Array2::<f64>::zeros((ns, na));
    let mut visits = vec![0usize; ns];
    for tr in dataset.transitions() {
        let w = if ccfg.discounted { gamma.powi(tr.t as i32) } else { 1.0 };
        visits[tr.s] += 1;
        w_data[[tr.s, tr.a]] += w;
        if ccfg.resamples == 0 {
            for a in 0..na {
                w_target[[tr.s, a]] += w * policy.prob(tr.s, a);
            }
        } else {
            let row = policy.row(tr.s).to_vec();
            for _ in 0..ccfg.resamples {
                let a = categorical(&mut rng, &row);
                w_target[[tr.s, a]] += w / ccfg.resamples as f64;
            }
        }
    }
    let total = w_data.sum();
    w_data.mapv_inplace(|x| x / total);
    let total_target = w_target.sum();
    w_target.mapv_inplace(|x| x / total_target);

    let d = flatten(&w_data);
    let t = flatten(&w_target);
    // Pairs seen in the data but never proposed by π have a closed-form answer ω = 0.
    let active: Vec<bool> = d
        .iter()
        .zip(t.iter())
        .map(|(&di, &ti)| di > cfg.support_eps && ti > 0.0)
        .collect();
    let one_sided = ccfg.objective == ClassifierObjective::OneSided;
    let objective = |phi: &Array1<f64>| {
        let mut value = 0.0;
        let mut grad = Array1::zeros(phi.len());
        for i in 0..phi.len() {
            if !active[i] {
                continue;
            }
            let (pos, neg) = if one_sided { (t[i] + d[i], 0.0) } else { (t[i], d[i]) };
            let f = phi[i];
            value -= pos * log_sigmoid(f) + neg * log_sigmoid(-f);
            let sig = sigmoid(f);
            // Gradient of the negated log-likelihood, scaled by the pair's mass.
            grad[i] = (sig * (pos + neg) - pos) / (pos + neg);
        }
        Eval::new(value, grad)
    };
    let res = minimize(objective, Array1::zeros(d.len()), &ccfg.optim, |_| {});
    let mut omega: Array1<f64> = res
        .x
        .iter()
        .zip(&active)
        .map(|(&f, &ok)| {
            if !ok {
                0.0
            } else {
                match ccfg.readout {
                    ClassifierReadout::Odds => f.exp(),
                    ClassifierReadout::Sigmoid => sigmoid(f),
                }
            }
        })
        .collect();
    let mut diagnostics = Diagnostics {
        iterations: res.iterations,
        final_objective: res.value,
        residual: res.grad_norm,
        ..Default::default()
    };
    if !res.converged {
        diagnostics.flags.push(Flag::NotConverged);
    }
    for (s, &n) in visits.iter().enumerate() {
        if n > 0 && n < ccfg.min_samples {
            diagnostics.flags.push(Flag::FewSamples { state: s });
            for a in 0..na {
                omega[s * na + a] = 1.0;
            }
        }
    }
    Ok(finalize(unflatten(&omega, (ns, na)), &w_data, Estimator::Classifier, cfg, diagnostics))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}
