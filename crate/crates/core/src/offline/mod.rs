//! Offline policy optimization on a count-based model of the dataset.
//!
//! The base optimizers run Bellman optimality sweeps on the certainty-equivalent
//! model; [`ovr_train`] wraps either one in the variance-regularized loop that
//! re-estimates distribution ratios, solves for the dual table and hands
//! augmented rewards to the base optimizer.

mod model;
mod ovr;
mod qiter;

use std::fmt;
use std::str::FromStr;

pub use model::EmpiricalModel;
pub use ovr::{ovr_train, OuterRecord};
pub use qiter::{batch_q_iteration, constrained_q_iteration};

use ndarray::Array2;

use crate::mdp::{optimal_q, policy_return, Policy, TabularMdp};
use crate::ratio::{Estimator, RatioConfig};
use crate::textio::fmt_f64;
use crate::variance::DualMode;
use crate::{Error, Result, FORMAT_TAG};

/// Default regularization weights for sweeps.
pub const LAMBDA_GRID: [f64; 5] = [0.0, 0.01, 0.1, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    #[default]
    BatchQ,
    /// Maximization restricted to actions the behaviour estimate takes often enough.
    ConstrainedQ,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::BatchQ => "batch_q",
            Algorithm::ConstrainedQ => "constrained_q",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch_q" => Ok(Algorithm::BatchQ),
            "constrained_q" => Ok(Algorithm::ConstrainedQ),
            other => Err(Error::InvalidArgument(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub ovr_enabled: bool,
    pub lambda: f64,
    pub ratio_estimator: Estimator,
    pub dual_mode: DualMode,
    /// Smallest allowed `μ̂(a|s) / max_a' μ̂(a'|s)` for the constrained optimizer.
    pub bcq_threshold: f64,
    /// Bellman sweeps per optimizer run.
    pub max_sweeps: usize,
    /// Outer iterations of the regularized loop.
    pub max_outer: usize,
    pub tol: f64,
    pub seed: u64,
    pub ratio: RatioConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::BatchQ,
            ovr_enabled: false,
            lambda: 0.0,
            ratio_estimator: Estimator::DualDice,
            dual_mode: DualMode::PaperMain,
            bcq_threshold: 0.3,
            max_sweeps: 10_000,
            max_outer: 50,
            tol: 1e-10,
            seed: 0,
            ratio: RatioConfig::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.bcq_threshold) {
            return Err(Error::InvalidArgument(format!("bcq_threshold {} outside [0,1]", self.bcq_threshold)));
        }
        if self.max_sweeps == 0 || self.max_outer == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("max_sweeps, max_outer and tol must be positive".into()));
        }
        Ok(())
    }
}

/// One row of a training trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub sweep: usize,
    /// Exact return of the current greedy policy.
    pub j_true: f64,
    /// Return estimated from the data: `E_D[ω r]` in the regularized loop, the
    /// model's `(1-γ) E_β̂[V̂]` for base sweeps.
    pub j_hat: f64,
    /// `Var_D[ω r]`; not estimated by the base sweeps (NaN there).
    pub var_hat: f64,
    /// Largest change of the last Bellman sweep.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainingTrace {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{FORMAT_TAG}\nsweep,J_true,J_hat,var_hat,residual\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.sweep,
                fmt_f64(r.j_true),
                fmt_f64(r.j_hat),
                fmt_f64(r.var_hat),
                fmt_f64(r.residual)
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainFlag {
    /// Bellman sweeps hit `max_sweeps`; the last iterate is returned.
    SweepsExhausted,
    /// The regularized loop hit `max_outer` without the greedy policy settling.
    OuterExhausted,
    /// The greedy policy returned to an earlier iterate. The loop stopped and
    /// kept the cycle member (by index among the visited policies, 0 being the
    /// base policy) with the best estimated regularized objective.
    Oscillation { period: usize, kept: usize },
    /// A ratio estimate reported non-convergence at this outer iteration.
    RatioNotConverged { iteration: usize },
    /// The dual fixed point was predicted to diverge and the scalar dual was used.
    DualFallback { iteration: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Training {
    pub policy: Policy,
    pub q: Array2<f64>,
    pub trace: TrainingTrace,
    pub flags: Vec<TrainFlag>,
    /// Per-iteration log of the regularized loop (empty for base runs).
    pub outer: Vec<OuterRecord>,
}

impl Training {
    /// Equality that treats the NaN placeholders of the trace as equal.
    pub fn identical(&self, other: &Training) -> bool {
        self.policy == other.policy
            && self.q == other.q
            && self.trace.to_csv() == other.trace.to_csv()
            && self.flags == other.flags
            && self.outer == other.outer
    }

    pub fn converged(&self) -> bool {
        self.flags
            .iter()
            .all(|f| matches!(f, TrainFlag::DualFallback { .. }))
    }
}

/// Exact `J(π)` of a trained policy.
pub fn evaluate(mdp: &TabularMdp, policy: &Policy) -> Result<f64> {
    policy_return(mdp, policy)
}

/// Returns of the uniform-random and optimal policies, the anchors of [`normalized_score`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreAnchors {
    pub random: f64,
    pub optimal: f64,
}

impl ScoreAnchors {
    pub fn of(mdp: &TabularMdp) -> Result<Self> {
        let optimal = policy_return(mdp, &Policy::greedy(&optimal_q(mdp)?))?;
        let random = policy_return(mdp, &Policy::uniform(mdp.n_states(), mdp.n_actions()))?;
        Ok(Self { random, optimal })
    }

    /// `100 (J - J_random) / (J_optimal - J_random)`.
    pub fn score(&self, j: f64) -> Result<f64> {
        let span = self.optimal - self.random;
        if span.abs() < 1e-12 {
            return Err(Error::InvalidArgument("random and optimal returns coincide".into()));
        }
        Ok(100.0 * (j - self.random) / span)
    }
}

pub fn normalized_score(mdp: &TabularMdp, j: f64) -> Result<f64> {
    ScoreAnchors::of(mdp)?.score(j)
}
