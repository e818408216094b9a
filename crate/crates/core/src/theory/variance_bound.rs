use super::BoundReport;
use crate::mdp::{exact_occupancy, Policy, TabularMdp};
use crate::ratio::exact_ratio;
use crate::variance::{episodic_is_variance, marginalized_variance, EpisodicMode};
use crate::Result;

/// Episodic against marginalized importance sampling, in several forms.
#[derive(Debug, Clone, PartialEq)]
pub struct Lemma1Report {
    /// `(1-γ)² E[D²] ≤ (1-γ)(1-γ^H) E[Σ_t γ^t r_t² ρ_{0:t}²]`: Cauchy-Schwarz on
    /// the truncated return, exact at any horizon. Asserted.
    pub cauchy_schwarz: BoundReport,
    /// `(1-γ)² E[D²] ≤ E_D[ω² r²]`, the end of the second-moment chain. Reported.
    pub second_moment: BoundReport,
    /// `V_P ≤ V_D / (1-γ)²` with `V_P` centered at the mean of `D`. Reported.
    pub variance: BoundReport,
    /// Same, with `V_P = E[D²] - J²/(1-γ)²`. Reported.
    pub variance_scaled_mean: BoundReport,
    /// `γ^H r_max / (1-γ)`.
    pub truncation_bound: f64,
}

impl Lemma1Report {
    pub fn all(&self) -> [&BoundReport; 4] {
        [&self.cauchy_schwarz, &self.second_moment, &self.variance, &self.variance_scaled_mean]
    }
}

/// Compares the truncated per-decision IS return under `behaviour` with the
/// marginalized estimator whose data distribution is the behaviour occupancy.
pub fn check_lemma1(mdp: &TabularMdp, policy: &Policy, behaviour: &Policy, horizon: usize, context: &str) -> Result<Lemma1Report> {
    let gamma = mdp.gamma();
    let ep = episodic_is_variance(mdp, policy, behaviour, horizon, EpisodicMode::Exact)?;
    let d_pi = exact_occupancy(mdp, policy)?;
    let d_mu = exact_occupancy(mdp, behaviour)?;
    let omega = exact_ratio(&d_pi, &d_mu)?.omega;
    let marg = marginalized_variance(&omega, mdp.reward(), &d_mu)?;
    let scale = (1.0 - gamma) * (1.0 - gamma);
    let ctx = format!("{context} H={horizon} gamma={gamma}");
    let lhs_second = scale * ep.decomposition.second_moment;
    let j = marg.mean;
    let scaled_mean_var = ep.decomposition.second_moment - j * j / scale;
    Ok(Lemma1Report {
        cauchy_schwarz: BoundReport::new(
            "lemma1_cauchy_schwarz",
            lhs_second,
            (1.0 - gamma) * (1.0 - gamma.powi(horizon as i32)) * ep.weighted_square_sum,
            ctx.clone(),
            true,
        ),
        second_moment: BoundReport::new("lemma1_second_moment", lhs_second, marg.second_moment, ctx.clone(), false),
        variance: BoundReport::new("lemma1_variance", ep.decomposition.variance, marg.variance / scale, ctx.clone(), false),
        variance_scaled_mean: BoundReport::new("lemma1_variance_scaled_mean", scaled_mean_var, marg.variance / scale, ctx, false),
        truncation_bound: ep.truncation_bound,
    })
}
