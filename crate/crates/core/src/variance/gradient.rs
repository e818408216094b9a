use ndarray::Array2;

use crate::mdp::{evaluate_cost, exact_occupancy, exact_state_occupancy, q_values, OccupancyMeasure, Policy, TabularMdp};
use crate::{Error, Result};

/// Gradient of `V_D(θ) = E_D[(ω_θ r)²] - (E_D[ω_θ r])²` for a softmax policy.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceGradient {
    pub value: f64,
    /// Differentiates through the occupancy `d_θ`, including how `ω_θ = d_θ / d_D`
    /// moves with `θ`.
    pub exact: Array2<f64>,
    /// `2 E_D[(ωr)² ∇log π] - 2 J E_D[ω ∇log π Q^π]`, which treats `ω` as if its
    /// only dependence on `θ` were through one `∇log π` factor.
    pub literal: Array2<f64>,
}

impl VarianceGradient {
    /// `‖literal - exact‖ / ‖exact‖`.
    pub fn literal_relative_error(&self) -> f64 {
        let diff = (&self.literal - &self.exact).mapv(|x| x * x).sum().sqrt();
        diff / self.exact.mapv(|x| x * x).sum().sqrt()
    }
}

/// `V_D(θ)`; infinite if `π_θ` visits a pair the data never does.
pub fn variance_objective(mdp: &TabularMdp, theta: &Array2<f64>, d_data: &OccupancyMeasure) -> Result<f64> {
    let d = exact_occupancy(mdp, &Policy::softmax(theta.clone())?)?;
    let (second, mean) = moments(&d, mdp.reward(), d_data)?;
    Ok(second - mean * mean)
}

fn moments(d: &OccupancyMeasure, r: &Array2<f64>, d_data: &OccupancyMeasure) -> Result<(f64, f64)> {
    let mut second = 0.0;
    for ((idx, &dd), &dp) in d_data.table().indexed_iter().zip(d.table().iter()) {
        if dd > 0.0 {
            second += dp * dp * r[idx] * r[idx] / dd;
        } else if dp * r[idx] != 0.0 {
            return Err(Error::Support(format!("target visits {idx:?}, data does not")));
        }
    }
    Ok((second, d.expect(r)))
}

/// `V_D` depends on `θ` only through `d_θ`, with `∂V/∂d = c = 2 d r² / d_D - 2 J r`.
/// Holding `c` fixed, `Σ c d_θ` is a normalized return, so the policy-gradient
/// theorem gives `∂/∂θ[s,b] = ρ(s) π(b|s) A_c(s,b)` with `ρ` the state occupancy.
pub fn variance_gradient(mdp: &TabularMdp, theta: &Array2<f64>, d_data: &OccupancyMeasure) -> Result<VarianceGradient> {
    let policy = Policy::softmax(theta.clone())?;
    mdp.check_policy(&policy)?;
    if d_data.dim() != theta.dim() {
        return Err(Error::Shape("data occupancy does not match parameters".into()));
    }
    let d = exact_occupancy(mdp, &policy)?;
    let rho = exact_state_occupancy(mdp, &policy)?;
    let r = mdp.reward();
    let (second, j) = moments(&d, r, d_data)?;

    let mut cost = Array2::zeros(r.dim());
    for ((idx, c), &dd) in cost.indexed_iter_mut().zip(d_data.table().iter()) {
        let quad = if dd > 0.0 { 2.0 * d.table()[idx] * r[idx] * r[idx] / dd } else { 0.0 };
        *c = quad - 2.0 * j * r[idx];
    }
    let adv = evaluate_cost(mdp, &policy, &cost)?.advantage;
    let mut exact = Array2::zeros(r.dim());
    for ((s, b), g) in exact.indexed_iter_mut() {
        *g = rho[s] * policy.prob(s, b) * adv[[s, b]];
    }

    let q = q_values(mdp, &policy)?.q;
    let (ns, na) = r.dim();
    let mut literal = Array2::zeros((ns, na));
    for s in 0..ns {
        for a in 0..na {
            let dd = d_data.get(s, a);
            if dd == 0.0 {
                continue;
            }
            let omega = d.get(s, a) / dd;
            let is = omega * r[[s, a]];
            let weight = 2.0 * dd * (is * is - j * omega * q[[s, a]]);
            // ∂ log π(a|s) / ∂θ[s,b] = 1[a=b] - π(b|s).
            for b in 0..na {
                let score = f64::from(u8::from(a == b)) - policy.prob(s, b);
                literal[[s, b]] += weight * score;
            }
        }
    }
    Ok(VarianceGradient {
        value: second - j * j,
        exact,
        literal,
    })
}
