use ndarray::Array2;

use super::qiter::{allowed_actions, fit_base, q_iterate, GreedyActions};
use super::{EmpiricalModel, OptimizerConfig, TraceRecord, TrainFlag, Training, TrainingTrace};
use crate::dataset::Dataset;
use crate::mdp::{policy_return, Policy, TabularMdp};
use crate::ratio::estimate;
use crate::variance::{closed_form_dual, DualMode, VarianceDecomposition};
use crate::{Error, Result};

/// What one outer iteration of the regularized loop saw.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub iteration: usize,
    /// Estimator diagnostics for the ratio of the current policy.
    pub ratio_summary: String,
    pub ratio_converged: bool,
    pub dual_mode: DualMode,
    pub nu_max_abs: f64,
    /// `E_D[r̂ - r̃]`, the average amount the penalty removed from the rewards.
    pub penalty: f64,
    pub j_true: f64,
    pub j_hat: f64,
    pub var_hat: f64,
    /// Bellman sweeps of the inner optimizer run.
    pub sweeps: usize,
    pub policy_changed: bool,
}

/// A greedy policy of the loop with the estimated `E_D[ωr] - λ Var_D[ωr]`
/// of its own ratio (NaN until estimated).
struct Iterate {
    actions: GreedyActions,
    policy: Policy,
    q: Array2<f64>,
    objective: f64,
}

/// Variance-regularized training on a dataset.
pub fn ovr_train(dataset: &Dataset, mdp: &TabularMdp, cfg: &OptimizerConfig) -> Result<Training> {
    let model = EmpiricalModel::from_dataset(dataset, mdp.gamma())?;
    ovr_train_model(&model, mdp, cfg)
}

/// The regularized loop on a prepared model.
///
/// Starting from the base optimizer's greedy policy, each outer iteration
/// estimates the ratio of the current policy against the data distribution,
/// solves for the dual table, augments the rewards and reruns the base
/// optimizer from scratch on them. The loop ends when the greedy actions stop
/// changing, when they revisit an earlier iterate, or after `max_outer` rounds.
pub fn ovr_train_model(model: &EmpiricalModel, mdp: &TabularMdp, cfg: &OptimizerConfig) -> Result<Training> {
    cfg.validate()?;
    if !cfg.ovr_enabled {
        return fit_base(model, mdp, cfg);
    }
    let allowed = allowed_actions(model, cfg.algorithm, cfg.bcq_threshold);
    let base = q_iterate(model, &model.reward, &allowed, mdp, cfg)?;
    let d_data = model.data_occupancy()?;
    let weights = model.problem.weights();

    let mut flags = Vec::new();
    if base.exhausted {
        flags.push(TrainFlag::SweepsExhausted);
    }
    let mut history = vec![Iterate {
        actions: base.actions,
        policy: base.policy,
        q: base.q,
        objective: f64::NAN,
    }];
    let mut trace = TrainingTrace::default();
    let mut outer = Vec::new();
    let mut settled = false;

    for iteration in 1..=cfg.max_outer {
        let current = history.last_mut().expect("history starts nonempty");
        let ratio = estimate(cfg.ratio_estimator, &model.problem, model.dataset(), &current.policy, &cfg.ratio)
            .map_err(|e| Error::OuterIteration {
                iteration,
                source: Box::new(e),
            })?;
        if !ratio.diagnostics.converged() {
            flags.push(TrainFlag::RatioNotConverged { iteration });
        }
        let omega = &ratio.omega;
        let dual = closed_form_dual(omega, &model.reward, cfg.lambda, cfg.dual_mode, &d_data)?;
        if dual.diverged {
            flags.push(TrainFlag::DualFallback { iteration });
        }
        let rewards = model.augmented_reward(&dual.nu, cfg.lambda)?;
        let spread = VarianceDecomposition::of_table(&(omega * &model.reward), weights);
        current.objective = spread.mean - cfg.lambda * spread.variance;
        let j_true = policy_return(mdp, &current.policy)?;

        let fit = q_iterate(model, &rewards, &allowed, mdp, cfg)?;
        if fit.exhausted {
            flags.push(TrainFlag::SweepsExhausted);
        }
        let changed = fit.actions != current.actions;
        trace.records.push(TraceRecord {
            sweep: iteration,
            j_true,
            j_hat: spread.mean,
            var_hat: spread.variance,
            residual: fit.residual,
        });
        outer.push(OuterRecord {
            iteration,
            ratio_summary: ratio.diagnostics.summary(),
            ratio_converged: ratio.diagnostics.converged(),
            dual_mode: dual.mode,
            nu_max_abs: dual.nu.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
            penalty: (weights * &(&model.reward - &rewards)).sum(),
            j_true,
            j_hat: spread.mean,
            var_hat: spread.variance,
            sweeps: fit.trace.records.len(),
            policy_changed: changed,
        });
        if !changed {
            *current = Iterate {
                actions: fit.actions,
                policy: fit.policy,
                q: fit.q,
                objective: current.objective,
            };
            settled = true;
            break;
        }
        if let Some(pos) = history.iter().position(|h| h.actions == fit.actions) {
            // Every member of the cycle has been estimated once; keep the one
            // with the best estimated regularized objective.
            let best = (pos..history.len())
                .max_by(|&a, &b| history[a].objective.total_cmp(&history[b].objective).then(b.cmp(&a)))
                .expect("cycle is nonempty");
            flags.push(TrainFlag::Oscillation {
                period: history.len() - pos,
                kept: best,
            });
            let kept = history.swap_remove(best);
            history = vec![kept];
            settled = true;
            break;
        }
        history.push(Iterate {
            actions: fit.actions,
            policy: fit.policy,
            q: fit.q,
            objective: f64::NAN,
        });
    }
    if !settled {
        flags.push(TrainFlag::OuterExhausted);
    }
    let Iterate { policy, q, .. } = history.pop().expect("history starts nonempty");
    Ok(Training {
        policy,
        q,
        trace,
        flags,
        outer,
    })
}
