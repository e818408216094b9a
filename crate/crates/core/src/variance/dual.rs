use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::mdp::OccupancyMeasure;
use crate::{Error, Result};

pub const DUAL_DAMPING: f64 = 0.5;
pub const DUAL_TOL: f64 = 1e-10;
const DUAL_MAX_ITERS: usize = 100_000;

/// How the dual table `ν` of the variance penalty is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DualMode {
    /// Fixed point of `ν = ω · r̃(ν)`, where `r̃` itself depends on `ν`.
    #[default]
    PaperMain,
    /// The constant table `ν ≡ E_D[ω r]`.
    AppendixScalar,
}

impl fmt::Display for DualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DualMode::PaperMain => "paper_main",
            DualMode::AppendixScalar => "appendix_scalar",
        })
    }
}

impl FromStr for DualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_main" => Ok(DualMode::PaperMain),
            "appendix_scalar" => Ok(DualMode::AppendixScalar),
            other => Err(Error::InvalidArgument(format!("unknown dual mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceDual {
    pub nu: Array2<f64>,
    /// Mode that actually produced `nu`; differs from the request after a fallback.
    pub mode: DualMode,
    /// `max |ν - ω r̃(ν)|` for the fixed-point mode, `|ν - E_D[ωr]|` for the scalar one.
    pub residual: f64,
    pub iterations: usize,
    /// The fixed-point iteration was predicted to diverge and the scalar mode was used.
    pub diverged: bool,
}

/// Dual variables for the variance penalty at weight `lambda`.
///
/// The fixed-point mode iterates `ν ← (1-α)ν + α ω(r - λνr - λr²)` with damping
/// `α = 0.5` until successive iterates differ by less than 1e-10. Its linear
/// part has slope `1 - α(1 + λωr)`, so it contracts whenever `|λωr| < 1`; if
/// that fails anywhere the scalar mode is returned with `diverged` set.
pub fn closed_form_dual(
    omega: &Array2<f64>,
    rewards: &Array2<f64>,
    lambda: f64,
    mode: DualMode,
    d_data: &OccupancyMeasure,
) -> Result<VarianceDual> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if omega.dim() != rewards.dim() || omega.dim() != d_data.dim() {
        return Err(Error::Shape("ratio, reward and data tables differ in shape".into()));
    }
    let weighted = omega * rewards;
    match mode {
        DualMode::AppendixScalar => Ok(scalar_dual(&weighted, d_data, false)),
        DualMode::PaperMain => {
            if weighted.iter().any(|w| (lambda * w).abs() >= 1.0) {
                return Ok(scalar_dual(&weighted, d_data, true));
            }
            let target = |nu: &Array2<f64>| {
                let mut out = Array2::zeros(nu.dim());
                for (idx, o) in out.indexed_iter_mut() {
                    let r = rewards[idx];
                    *o = omega[idx] * (r - lambda * nu[idx] * r - lambda * r * r);
                }
                out
            };
            let mut nu = weighted.clone();
            let mut iterations = 0;
            if lambda > 0.0 {
                loop {
                    iterations += 1;
                    let next = nu.mapv(|v| (1.0 - DUAL_DAMPING) * v) + target(&nu).mapv(|v| DUAL_DAMPING * v);
                    let step = crate::ratio::linf(&next, &nu);
                    nu = next;
                    if step < DUAL_TOL {
                        break;
                    }
                    if iterations >= DUAL_MAX_ITERS || !step.is_finite() {
                        return Err(Error::Numerical(format!(
                            "dual fixed point stalled at step {step:.3e} after {iterations} iterations"
                        )));
                    }
                }
            }
            let residual = crate::ratio::linf(&nu, &target(&nu));
            Ok(VarianceDual {
                nu,
                mode: DualMode::PaperMain,
                residual,
                iterations,
                diverged: false,
            })
        }
    }
}

fn scalar_dual(weighted: &Array2<f64>, d_data: &OccupancyMeasure, diverged: bool) -> VarianceDual {
    let mean = d_data.expect(weighted);
    VarianceDual {
        nu: Array2::from_elem(weighted.dim(), mean),
        mode: DualMode::AppendixScalar,
        residual: 0.0,
        iterations: 0,
        diverged,
    }
}

/// Rewards handed to the base optimizer: `r̃ = r - λνr - λr²`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedReward {
    pub r_tilde: Array2<f64>,
    pub lambda: f64,
    pub nu: Array2<f64>,
}

pub fn augment_rewards(rewards: &Array2<f64>, nu: &Array2<f64>, lambda: f64) -> Result<AugmentedReward> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    if rewards.dim() != nu.dim() {
        return Err(Error::Shape("reward and dual tables differ in shape".into()));
    }
    // λ = 0 returns the rewards untouched so downstream runs match bit for bit.
    let r_tilde = if lambda == 0.0 {
        rewards.clone()
    } else {
        let mut out = rewards.clone();
        for (idx, o) in out.indexed_iter_mut() {
            let r = rewards[idx];
            *o = r - lambda * nu[idx] * r - lambda * r * r;
        }
        out
    };
    Ok(AugmentedReward {
        r_tilde,
        lambda,
        nu: nu.clone(),
    })
}
