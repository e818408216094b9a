use ndarray::Array2;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;

use super::{cantelli_lower_bound, renyi2, BoundReport};
use crate::mdp::{exact_occupancy, OccupancyMeasure, Policy, TabularMdp};
use crate::ratio::exact_ratio;
use crate::rng::seeded;
use crate::{Error, Result};

/// Everything the i.i.d. sampling experiments need: the data distribution, the
/// per-atom estimator values `ω r`, and the exact quantities they are judged against.
#[derive(Debug, Clone)]
pub struct SampleSetup {
    sampler: WeightedIndex<f64>,
    values: Vec<f64>,
    /// `d₂(d_π ‖ d_D)` from exact occupancies.
    pub d2: f64,
    pub r_inf: f64,
    /// `J(π) = E_{d_π}[r]`.
    pub j_true: f64,
}

impl SampleSetup {
    /// Data drawn from `d_data`; the estimator uses `omega` if given, else the exact ratio.
    pub fn new(mdp: &TabularMdp, policy: &Policy, d_data: &OccupancyMeasure, omega: Option<&Array2<f64>>) -> Result<Self> {
        let d_pi = exact_occupancy(mdp, policy)?;
        let exact = exact_ratio(&d_pi, d_data)?;
        if let Some(&(s, a)) = exact.diagnostics.unsupported.iter().find(|&&(s, a)| d_pi.get(s, a) > 0.0) {
            return Err(Error::Support(format!("data never visits ({s}, {a}) but the target does")));
        }
        let omega = omega.unwrap_or(&exact.omega);
        if omega.dim() != d_data.dim() {
            return Err(Error::Shape("ratio table does not match data occupancy".into()));
        }
        let values: Vec<f64> = (omega * mdp.reward()).iter().copied().collect();
        let weights: Vec<f64> = d_data.table().iter().copied().collect();
        let sampler = WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        let p: Vec<f64> = d_pi.table().iter().copied().collect();
        Ok(Self {
            sampler,
            values,
            d2: renyi2(&p, &weights)?.exponentiated,
            r_inf: mdp.r_max(),
            j_true: d_pi.expect(mdp.reward()),
        })
    }

    /// Behaviour data: `d_D` is the exact occupancy of `behaviour`.
    pub fn from_behaviour(mdp: &TabularMdp, policy: &Policy, behaviour: &Policy) -> Result<Self> {
        Self::new(mdp, policy, &exact_occupancy(mdp, behaviour)?, None)
    }

    /// Sample mean and unbiased sample variance of `ω r` over `n` draws.
    fn draw(&self, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = seeded(seed);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let xs: Vec<f64> = (0..n).map(|_| self.values[self.sampler.sample(&mut rng)]).collect();
        for x in &xs {
            sum += x;
        }
        let mean = sum / n as f64;
        for x in &xs {
            sum_sq += (x - mean) * (x - mean);
        }
        let var = if n > 1 { sum_sq / (n - 1) as f64 } else { 0.0 };
        (mean, var)
    }
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add(trial as u64)
}

/// Empirical variance of the `N`-sample estimate of `E_D[ω r]` over independent
/// trials against `‖r‖²_∞ d₂ / N`. The reported left side is the empirical
/// variance minus three standard errors of that estimate.
pub fn check_lemma3(setup: &SampleSetup, n_values: &[usize], n_trials: usize, seed: u64, context: &str) -> Result<Vec<BoundReport>> {
    if n_trials < 2 {
        return Err(Error::InvalidArgument("need at least 2 trials".into()));
    }
    let mut reports = Vec::with_capacity(n_values.len());
    for &n in n_values {
        if n == 0 {
            return Err(Error::InvalidArgument("sample size must be positive".into()));
        }
        let means: Vec<f64> = (0..n_trials)
            .into_par_iter()
            .map(|t| setup.draw(n, trial_seed(seed, t)).0)
            .collect();
        let k = n_trials as f64;
        let grand = means.iter().sum::<f64>() / k;
        let dev: Vec<f64> = means.iter().map(|m| (m - grand) * (m - grand)).collect();
        let var = dev.iter().sum::<f64>() / (k - 1.0);
        let dev_mean = dev.iter().sum::<f64>() / k;
        let se = (dev.iter().map(|d| (d - dev_mean) * (d - dev_mean)).sum::<f64>() / (k - 1.0) / k).sqrt();
        let rhs = setup.r_inf * setup.r_inf * setup.d2 / n as f64;
        reports.push(BoundReport::new(
            "lemma3_ratio_variance",
            var - 3.0 * se,
            rhs,
            format!("{context} N={n} trials={n_trials} var={var:.6e} se={se:.3e}"),
            true,
        ));
    }
    Ok(reports)
}

/// Fraction of `N`-sample datasets whose plug-in Cantelli bound lies below the
/// true `J(π)`, against the requirement `1 - δ - 3√(δ(1-δ)/n_resamples)`.
pub fn coverage_experiment(
    setup: &SampleSetup,
    n: usize,
    delta: f64,
    n_resamples: usize,
    seed: u64,
    context: &str,
) -> Result<BoundReport> {
    if n < 2 || n_resamples == 0 {
        return Err(Error::InvalidArgument("need N >= 2 and at least one resample".into()));
    }
    cantelli_lower_bound(0.0, 0.0, delta)?;
    let covered: usize = (0..n_resamples)
        .into_par_iter()
        .map(|t| {
            let (mean, var) = setup.draw(n, trial_seed(seed, t));
            let bound = cantelli_lower_bound(mean, var, delta).expect("delta checked");
            usize::from(setup.j_true >= bound)
        })
        .sum();
    let k = n_resamples as f64;
    let fraction = covered as f64 / k;
    let required = 1.0 - delta - 3.0 * (delta * (1.0 - delta) / k).sqrt();
    Ok(BoundReport::new(
        "theorem2_coverage",
        required,
        fraction,
        format!("{context} N={n} delta={delta} resamples={n_resamples}"),
        true,
    ))
}
