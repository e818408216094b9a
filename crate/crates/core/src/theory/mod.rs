//! Numerical checks of the variance, improvement and concentration bounds.
//!
//! Every check produces [`BoundReport`]s in the orientation `lhs ≤ rhs`; whether
//! the bound holds is always recomputed from the two numbers.

mod improvement;
mod sampling;
mod suite;
mod variance_bound;

pub use improvement::{check_lemma2_tv, check_theorem1, max_unit_range_variance, FClass};
pub use sampling::{check_lemma3, coverage_experiment, SampleSetup};
pub use suite::{verify_all, Battery, Fault, VerifyConfig};
pub use variance_bound::{check_lemma1, Lemma1Report};

use crate::textio::fmt_f64;
use crate::{Error, Result, FORMAT_TAG};

/// Slack below which a bound counts as violated.
pub const SLACK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    /// Instance descriptors; free text without commas.
    pub context: String,
    /// Whether a violation should fail a verification run. Bounds that are
    /// only reported (their stated form is not implied by its proof) set this to false.
    pub asserted: bool,
}

impl BoundReport {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64, context: impl Into<String>, asserted: bool) -> Self {
        Self {
            name: name.into(),
            lhs,
            rhs,
            context: context.into().replace(',', ";"),
            asserted,
        }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn holds(&self) -> bool {
        self.slack() >= -SLACK_TOL
    }
}

pub fn bounds_csv(reports: &[BoundReport]) -> String {
    let mut out = format!("{FORMAT_TAG}\nbound,context,lhs,rhs,slack,holds\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.name,
            r.context,
            fmt_f64(r.lhs),
            fmt_f64(r.rhs),
            fmt_f64(r.slack()),
            r.holds()
        ));
    }
    out
}

/// Second-order Rényi quantities of `p` against `q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Renyi2 {
    /// `d₂(p‖q) = Σ q (p/q)²`.
    pub exponentiated: f64,
    /// `½ log d₂`.
    pub log_form: f64,
    /// `Var_q[p/q]`, computed from centered terms.
    pub ratio_variance: f64,
}

pub fn renyi2(p: &[f64], q: &[f64]) -> Result<Renyi2> {
    if p.len() != q.len() {
        return Err(Error::Shape(format!("{} vs {} atoms", p.len(), q.len())));
    }
    let mut d2 = 0.0;
    let mut var = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if qi > 0.0 {
            let w = pi / qi;
            d2 += qi * w * w;
            // Σ q = 1 and Σ q w = Σ p = 1, so the ratio has mean one.
            var += qi * (w - 1.0) * (w - 1.0);
        } else if pi > 0.0 {
            return Err(Error::Support(format!("p puts mass {pi} on atom {i} where q has none")));
        }
    }
    Ok(Renyi2 {
        exponentiated: d2,
        log_form: 0.5 * d2.ln(),
        ratio_variance: var,
    })
}

/// Cantelli lower confidence bound `ĵ - √((1-δ)/δ · v̂)`.
pub fn cantelli_lower_bound(j_hat: f64, var_hat: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(var_hat >= 0.0) {
        return Err(Error::InvalidArgument(format!("variance must be >= 0, got {var_hat}")));
    }
    Ok(j_hat - ((1.0 - delta) / delta * var_hat).sqrt())
}
