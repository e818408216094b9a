use ndarray::{Array1, Array2};

use super::{Algorithm, EmpiricalModel, OptimizerConfig, TraceRecord, TrainFlag, Training, TrainingTrace};
use crate::dataset::Dataset;
use crate::mdp::{policy_return, Policy, TabularMdp};
use crate::{Error, Result};

/// Greedy choice per state; `None` marks states without any allowed action,
/// where the policy copies the behaviour estimate.
pub(super) type GreedyActions = Vec<Option<usize>>;

/// Result of one run of Bellman optimality sweeps.
#[derive(Debug, Clone)]
pub(super) struct Fit {
    pub q: Array2<f64>,
    pub actions: GreedyActions,
    pub policy: Policy,
    pub trace: TrainingTrace,
    pub residual: f64,
    pub exhausted: bool,
}

/// Actions the maximization may use. Batch iteration allows every supported
/// pair; the constrained variant additionally drops actions with
/// `μ̂(a|s) / max_a' μ̂(a'|s) < τ`, falling back to the modal action.
pub(super) fn allowed_actions(model: &EmpiricalModel, algorithm: Algorithm, tau: f64) -> Array2<bool> {
    let mut allowed = model.supported.clone();
    if algorithm == Algorithm::BatchQ {
        return allowed;
    }
    for s in 0..model.n_states() {
        if !model.visited(s) {
            continue;
        }
        let row = model.behaviour.row(s);
        let top = row.iter().copied().fold(0.0_f64, f64::max);
        for a in 0..model.n_actions() {
            allowed[[s, a]] &= row[a] >= tau * top;
        }
        if !allowed.row(s).iter().any(|&b| b) {
            let modal = (0..model.n_actions())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .expect("at least one action");
            allowed[[s, modal]] = true;
        }
    }
    allowed
}

/// Most pessimistic value a supported pair can reach under `rewards`.
pub(super) fn q_floor(model: &EmpiricalModel, rewards: &Array2<f64>) -> f64 {
    let r_min = rewards
        .iter()
        .zip(model.supported.iter())
        .filter(|(_, &s)| s)
        .map(|(&r, _)| r)
        .fold(f64::INFINITY, f64::min);
    r_min / (1.0 - model.gamma)
}

fn greedy(model: &EmpiricalModel, allowed: &Array2<bool>, q: &Array2<f64>) -> (GreedyActions, Policy) {
    let (ns, na) = q.dim();
    let mut probs = model.behaviour.probs().clone();
    let mut actions = Vec::with_capacity(ns);
    for s in 0..ns {
        let mut best: Option<usize> = None;
        for a in (0..na).filter(|&a| allowed[[s, a]]) {
            if best.is_none_or(|b| q[[s, a]] > q[[s, b]]) {
                best = Some(a);
            }
        }
        if let Some(a) = best {
            probs.row_mut(s).fill(0.0);
            probs[[s, a]] = 1.0;
        }
        actions.push(best);
    }
    (actions, Policy::from_probs(probs).expect("rows are one-hot or copied"))
}

fn state_values(allowed: &Array2<bool>, q: &Array2<f64>, floor: f64) -> Array1<f64> {
    q.rows()
        .into_iter()
        .zip(allowed.rows())
        .map(|(qs, ok)| {
            qs.iter()
                .zip(ok.iter())
                .filter(|(_, &b)| b)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max)
                .max(floor)
        })
        .collect()
}

/// Sweeps `Q ← r + γ P̂ max_{allowed} Q` from `Q ≡ q_floor` until the largest
/// change drops below `tol`. Unsupported pairs stay at `q_floor`.
pub(super) fn q_iterate(
    model: &EmpiricalModel,
    rewards: &Array2<f64>,
    allowed: &Array2<bool>,
    mdp: &TabularMdp,
    cfg: &OptimizerConfig,
) -> Result<Fit> {
    let (ns, na) = rewards.dim();
    if (mdp.n_states(), mdp.n_actions()) != (ns, na) {
        return Err(Error::Shape("evaluation mdp does not match the dataset".into()));
    }
    let gamma = model.gamma;
    let floor = q_floor(model, rewards);
    let mut q = Array2::from_elem((ns, na), floor);
    let mut trace = TrainingTrace::default();
    let mut cached: Option<(GreedyActions, f64)> = None;
    let mut residual = f64::INFINITY;
    let mut sweep = 0;
    while sweep < cfg.max_sweeps && !(residual < cfg.tol) {
        sweep += 1;
        let v = state_values(allowed, &q, floor);
        let mut next = Array2::from_elem((ns, na), floor);
        for s in 0..ns {
            for a in 0..na {
                if model.supported[[s, a]] {
                    let ev = model.transition.slice(ndarray::s![s, a, ..]).dot(&v);
                    next[[s, a]] = rewards[[s, a]] + gamma * ev;
                }
            }
        }
        residual = crate::ratio::linf(&next, &q);
        q = next;

        let (actions, policy) = greedy(model, allowed, &q);
        let j_true = match &cached {
            Some((prev, j)) if *prev == actions => *j,
            _ => {
                let j = policy_return(mdp, &policy)?;
                cached = Some((actions, j));
                j
            }
        };
        let j_hat = (1.0 - gamma) * model.initial.dot(&state_values(allowed, &q, floor));
        trace.records.push(TraceRecord {
            sweep,
            j_true,
            j_hat,
            var_hat: f64::NAN,
            residual,
        });
    }
    let (actions, policy) = greedy(model, allowed, &q);
    Ok(Fit {
        q,
        actions,
        policy,
        trace,
        residual,
        exhausted: !(residual < cfg.tol),
    })
}

pub(super) fn fit_base(model: &EmpiricalModel, mdp: &TabularMdp, cfg: &OptimizerConfig) -> Result<Training> {
    cfg.validate()?;
    let allowed = allowed_actions(model, cfg.algorithm, cfg.bcq_threshold);
    let fit = q_iterate(model, &model.reward, &allowed, mdp, cfg)?;
    Ok(Training {
        policy: fit.policy,
        q: fit.q,
        trace: fit.trace,
        flags: if fit.exhausted { vec![TrainFlag::SweepsExhausted] } else { Vec::new() },
        outer: Vec::new(),
    })
}

/// Q-iteration on the count-based model, maximizing over every supported action.
pub fn batch_q_iteration(dataset: &Dataset, mdp: &TabularMdp, cfg: &OptimizerConfig) -> Result<Training> {
    let model = EmpiricalModel::from_dataset(dataset, mdp.gamma())?;
    let cfg = OptimizerConfig {
        algorithm: Algorithm::BatchQ,
        ..cfg.clone()
    };
    fit_base(&model, mdp, &cfg)
}

/// Q-iteration restricted to actions the behaviour estimate takes with at
/// least `bcq_threshold` times its modal probability.
pub fn constrained_q_iteration(dataset: &Dataset, mdp: &TabularMdp, cfg: &OptimizerConfig) -> Result<Training> {
    let model = EmpiricalModel::from_dataset(dataset, mdp.gamma())?;
    let cfg = OptimizerConfig {
        algorithm: Algorithm::ConstrainedQ,
        ..cfg.clone()
    };
    fit_base(&model, mdp, &cfg)
}
