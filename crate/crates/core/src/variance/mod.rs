//! Variance of off-policy return estimates and the machinery for penalizing it.
//!
//! The marginalized estimator weights each logged pair by `W(s,a) = ω(s,a) r(s,a)`
//! and its variance under the data distribution is `E_D[W²] - E_D[W]²`. The
//! squared mean is what makes naive gradients need two independent samples; the
//! Fenchel identity `x² = max_y (2xy - y²)` trades it for a maximization over a
//! dual variable.

mod dual;
mod episodic;
mod gradient;

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

pub use dual::{augment_rewards, closed_form_dual, AugmentedReward, DualMode, VarianceDual, DUAL_DAMPING, DUAL_TOL};
pub use episodic::{episodic_is_variance, EpisodicMode, EpisodicVariance};
pub use gradient::{variance_gradient, variance_objective, VarianceGradient};

use crate::mdp::{evaluate_cost, OccupancyMeasure, Policy, TabularMdp};
use crate::textio::fmt_f64;
use crate::{Error, Result, FORMAT_TAG};

/// First and second moments of a random table together with its variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceDecomposition {
    pub second_moment: f64,
    pub mean: f64,
    pub variance: f64,
}

impl VarianceDecomposition {
    /// Moments of `x` under the weights `w` (assumed normalized). The variance
    /// is the centered sum, which is nonnegative by construction.
    pub fn of_table(x: &Array2<f64>, w: &Array2<f64>) -> Self {
        let mean = (w * x).sum();
        let second_moment = (w * &x.mapv(|v| v * v)).sum();
        let variance = w
            .iter()
            .zip(x.iter())
            .map(|(wi, xi)| wi * (xi - mean) * (xi - mean))
            .sum();
        Self {
            second_moment,
            mean,
            variance,
        }
    }

    pub fn from_moments(second_moment: f64, mean: f64) -> Self {
        Self {
            second_moment,
            mean,
            variance: second_moment - mean * mean,
        }
    }
}

fn check_dims(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what} is {got:?}, expected {want:?}")));
    }
    Ok(())
}

/// Variance of `W = ω r` under `d_D`.
pub fn marginalized_variance(
    omega: &Array2<f64>,
    rewards: &Array2<f64>,
    d_data: &OccupancyMeasure,
) -> Result<VarianceDecomposition> {
    check_dims("ratio table", omega.dim(), d_data.dim())?;
    check_dims("reward table", rewards.dim(), d_data.dim())?;
    Ok(VarianceDecomposition::of_table(&(omega * rewards), d_data.table()))
}

/// `E[X²] - max_y (2y E[X] - y²)`, the variance written through the scalar
/// Fenchel dual. The inner objective is a concave quadratic with curvature -2,
/// so a single Newton step from `y = 0` lands on its maximizer.
pub fn scalar_dual_variance(x: &Array2<f64>, w: &Array2<f64>) -> Result<f64> {
    check_dims("weights", w.dim(), x.dim())?;
    let mean = (w * x).sum();
    let second = (w * &x.mapv(|v| v * v)).sum();
    let inner = |y: f64| 2.0 * y * mean - y * y;
    let slope_at_zero = 2.0 * mean;
    let y = slope_at_zero / 2.0;
    Ok(second - inner(y))
}

/// Grid maximum of `2xy - y²` and the grid point attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMax {
    pub value: f64,
    pub maximizer: f64,
}

/// Evaluates `max_{y ∈ grid} (2xy - y²)`, which approaches `x²` as the grid refines.
pub fn fenchel_scalar_identity(x: f64, grid: &[f64]) -> Result<GridMax> {
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo <= x && x <= hi) {
        return Err(Error::InvalidArgument(format!(
            "grid [{lo}, {hi}] does not bracket x = {x}"
        )));
    }
    let mut best = GridMax {
        value: f64::NEG_INFINITY,
        maximizer: f64::NAN,
    };
    for &y in grid {
        let v = 2.0 * x * y - y * y;
        if v > best.value {
            best = GridMax { value: v, maximizer: y };
        }
    }
    Ok(best)
}

/// Evenly spaced points from `lo` to `hi` inclusive, at most `step` apart.
pub fn uniform_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).ceil().max(1.0) as usize;
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Sign in front of the `½ν²` term of the dual objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NuSquaredSign {
    /// `-½ν²`, concave in `ν`.
    #[default]
    Negative,
    /// `+½ν²`.
    Positive,
}

impl fmt::Display for NuSquaredSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NuSquaredSign::Negative => "negative",
            NuSquaredSign::Positive => "positive",
        })
    }
}

impl FromStr for NuSquaredSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "negative" => Ok(NuSquaredSign::Negative),
            "positive" => Ok(NuSquaredSign::Positive),
            other => Err(Error::InvalidArgument(format!("unknown nu sign `{other}`"))),
        }
    }
}

/// The pointwise dual objective `E_D[∓½ν² + ν ω r + ω r²]`.
///
/// With the default sign its maximum over `ν` is `E_D[½(ωr)² + ωr²]`, attained at
/// `ν = ω r`. That is a surrogate and not the variance of `ω r`.
pub fn fenchel_variance_objective(
    omega: &Array2<f64>,
    rewards: &Array2<f64>,
    nu: &Array2<f64>,
    d_data: &OccupancyMeasure,
    sign: NuSquaredSign,
) -> Result<f64> {
    let dim = d_data.dim();
    check_dims("ratio table", omega.dim(), dim)?;
    check_dims("reward table", rewards.dim(), dim)?;
    check_dims("dual table", nu.dim(), dim)?;
    let half = match sign {
        NuSquaredSign::Negative => -0.5,
        NuSquaredSign::Positive => 0.5,
    };
    let mut total = 0.0;
    for ((idx, &w), &n) in d_data.table().indexed_iter().zip(nu.iter()) {
        let (o, r) = (omega[idx], rewards[idx]);
        total += w * (half * n * n + n * o * r + o * r * r);
    }
    Ok(total)
}

/// Solution of the per-step variance Bellman equation
/// `V(s,a) = (r(s,a) - J)² + γ E[V(s',a')]`, next to the ordinary `Q^π`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceValues {
    pub variance: Array2<f64>,
    pub q: Array2<f64>,
}

impl VarianceValues {
    /// Variance-penalized action values `Q - λ V`.
    pub fn q_lambda(&self, lambda: f64) -> Array2<f64> {
        &self.q - &self.variance.mapv(|v| lambda * v)
    }
}

pub fn variance_bellman(mdp: &TabularMdp, policy: &Policy, j: f64) -> Result<VarianceValues> {
    let cost = mdp.reward().mapv(|r| (r - j) * (r - j));
    let variance = evaluate_cost(mdp, policy, &cost)?.q;
    let q = evaluate_cost(mdp, policy, mdp.reward())?.q;
    Ok(VarianceValues { variance, q })
}

/// One line of a variance report.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceRow {
    pub quantity: String,
    pub value: f64,
    pub mode: String,
    pub lambda: f64,
    pub seed: u64,
}

pub fn variance_csv(rows: &[VarianceRow]) -> String {
    let mut out = format!("{FORMAT_TAG}\nquantity,value,mode,lambda,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.quantity,
            fmt_f64(r.value),
            r.mode,
            fmt_f64(r.lambda),
            r.seed
        ));
    }
    out
}
