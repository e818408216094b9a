//! Estimators of the stationary distribution correction `ω(s,a) = d_π(s,a) / d_D(s,a)`.
//!
//! DualDICE, MWL and DV-KL all work on a [`RatioProblem`]: a weighted table of
//! state-action atoms `d_D`, a next-state model for each atom and a start
//! distribution. With exact expectations the model is the true MDP; with a
//! dataset it is the discount-weighted empirical model, so the same code serves
//! both modes. The classifier works on raw dataset pairs.

mod classifier;
mod dice;
mod mwl;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array3};

use crate::dataset::Dataset;
use crate::mdp::{OccupancyMeasure, Policy, TabularMdp};
use crate::optim::OptimConfig;
use crate::textio::fmt_f64;
use crate::{Error, Result, FORMAT_TAG};

pub use classifier::{classifier_ratio, ClassifierConfig, ClassifierObjective, ClassifierReadout};
pub use dice::{dualdice, dv_kl_ratio};
pub use mwl::mwl;

/// Pairs with `d_D ≤ SUPPORT_EPS` are treated as unsupported.
pub const SUPPORT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Exact,
    DualDice,
    Mwl,
    DvKl,
    Classifier,
}

impl Estimator {
    pub const ALL: [Estimator; 5] = [
        Estimator::Exact,
        Estimator::DualDice,
        Estimator::Mwl,
        Estimator::DvKl,
        Estimator::Classifier,
    ];
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Exact => "exact",
            Estimator::DualDice => "dualdice",
            Estimator::Mwl => "mwl",
            Estimator::DvKl => "dv_kl",
            Estimator::Classifier => "classifier",
        })
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ratio estimator `{s}`")))
    }
}

/// Conditions an estimator raises without failing outright.
#[derive(Debug, Clone, PartialEq)]
pub enum Flag {
    /// The optimizer hit its iteration cap; the best iterate is returned.
    NotConverged,
    /// `ν - Bν` (centered) exceeded the overflow guard.
    ExpClip { max_log_ratio: f64 },
    /// Too few samples in a state; that state fell back to `ω = 1`.
    FewSamples { state: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub iterations: usize,
    pub final_objective: f64,
    /// Gradient norm for optimized estimators, largest moment violation for MWL.
    pub residual: f64,
    /// `E_{d_D}[ω̂]` before renormalization.
    pub raw_moment: f64,
    pub unsupported: Vec<(usize, usize)>,
    pub flags: Vec<Flag>,
}

impl Diagnostics {
    pub fn converged(&self) -> bool {
        !self
            .flags
            .iter()
            .any(|f| matches!(f, Flag::NotConverged | Flag::ExpClip { .. }))
    }

    /// One-line `key=value` summary for run logs.
    pub fn summary(&self) -> String {
        format!(
            "{{iterations={}, final_objective={:.6e}, residual={:.3e}, raw_moment={:.9}, unsupported={}, flags={:?}}}",
            self.iterations,
            self.final_objective,
            self.residual,
            self.raw_moment,
            self.unsupported.len(),
            self.flags
        )
    }
}

/// Nonnegative ratio table with the estimator that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioTable {
    pub omega: Array2<f64>,
    pub estimator: Estimator,
    pub diagnostics: Diagnostics,
}

impl RatioTable {
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.omega[[s, a]]
    }

    /// Largest absolute difference to another table.
    pub fn linf_distance(&self, other: &RatioTable) -> f64 {
        linf(&self.omega, &other.omega)
    }

    /// CSV rows `s,a,omega,estimator` under a header.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{FORMAT_TAG}\ns,a,omega,estimator\n");
        for ((s, a), w) in self.omega.indexed_iter() {
            out.push_str(&format!("{s},{a},{},{}\n", fmt_f64(*w), self.estimator));
        }
        out
    }
}

/// Dual table `ν(s,a)` and the objective that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVariables {
    pub nu: Array2<f64>,
    pub origin: Estimator,
}

/// Shared settings of the optimization-based estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioConfig {
    pub optim: OptimConfig,
    /// Rescale so that `E_{d_D}[ω̂] = 1` over supported pairs.
    pub renormalize: bool,
    pub support_eps: f64,
    /// Overflow guard on centered `ν - Bν` for DV-KL.
    pub exp_clip: f64,
    /// MWL convergence: largest `|J(ω̂, π, e_k)|` over the canonical basis.
    pub mwl_tol: f64,
    pub classifier: ClassifierConfig,
}

impl Default for RatioConfig {
    fn default() -> Self {
        Self {
            optim: OptimConfig::default(),
            renormalize: true,
            support_eps: SUPPORT_EPS,
            exp_clip: 30.0,
            mwl_tol: 1e-6,
            classifier: ClassifierConfig::default(),
        }
    }
}

/// Weighted state-action atoms with a next-state model and start distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioProblem {
    weights: Array2<f64>,
    transition: Array3<f64>,
    initial: Array1<f64>,
    gamma: f64,
}

impl RatioProblem {
    /// Exact expectations: true dynamics, data distribution `d_data`.
    pub fn exact(mdp: &TabularMdp, d_data: &OccupancyMeasure) -> Result<Self> {
        if d_data.dim() != (mdp.n_states(), mdp.n_actions()) {
            return Err(Error::Shape("data occupancy does not match mdp".into()));
        }
        Ok(Self {
            weights: d_data.table().clone(),
            transition: mdp.transition().clone(),
            initial: mdp.initial().clone(),
            gamma: mdp.gamma(),
        })
    }

    /// Sample averages: `γ^t`-weighted atoms, the weighted empirical next-state
    /// model and the empirical distribution of episode starts.
    pub fn from_dataset(dataset: &Dataset, gamma: f64) -> Result<Self> {
        let (ns, na) = (dataset.n_states(), dataset.n_actions());
        let mut weights = Array2::zeros((ns, na));
        let mut transition = Array3::zeros((ns, na, ns));
        let mut initial = Array1::zeros(ns);
        for tr in dataset.transitions() {
            let w = gamma.powi(tr.t as i32);
            weights[[tr.s, tr.a]] += w;
            transition[[tr.s, tr.a, tr.s_next]] += w;
            if tr.t == 0 {
                initial[tr.s] += 1.0;
            }
        }
        for s in 0..ns {
            for a in 0..na {
                let total = weights[[s, a]];
                if total > 0.0 {
                    transition
                        .slice_mut(ndarray::s![s, a, ..])
                        .mapv_inplace(|x| x / total);
                }
            }
        }
        let total = weights.sum();
        weights.mapv_inplace(|x| x / total);
        let starts = initial.sum();
        initial.mapv_inplace(|x| x / starts);
        Ok(Self {
            weights,
            transition,
            initial,
            gamma,
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn n_states(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.weights.ncols()
    }

    fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.probs().dim() != self.weights.dim() {
            return Err(Error::Shape(format!(
                "policy is {:?}, ratio problem is {:?}",
                policy.probs().dim(),
                self.weights.dim()
            )));
        }
        Ok(())
    }

    /// `(ν - B^π ν)(s,a) = ν(s,a) - γ Σ_{s'} P(s'|s,a) Σ_{a'} π(a'|s') ν(s',a')`.
    pub fn bellman_residual(&self, policy: &Policy, nu: &Array2<f64>) -> Array2<f64> {
        let (ns, na) = self.weights.dim();
        let v: Array1<f64> = (0..ns).map(|s| policy.row(s).dot(&nu.row(s))).collect();
        let mut x = nu.clone();
        for s in 0..ns {
            for a in 0..na {
                let next = self.transition.slice(ndarray::s![s, a, ..]).dot(&v);
                x[[s, a]] -= self.gamma * next;
            }
        }
        x
    }

    /// Moment condition `J(ω,π,Q) = E_{d_D}[ω (Q - γ Q')] - (1-γ) E_{β,π}[Q]`.
    pub fn moment(&self, policy: &Policy, omega: &Array2<f64>, q: &Array2<f64>) -> f64 {
        let x = self.bellman_residual(policy, q);
        (&self.weights * omega * &x).sum() - self.start_vector(policy).dot(&flatten(q))
    }

    /// Ratio of the model's occupancy under `policy` to the data weights, by a direct solve.
    pub fn model_ratio(&self, policy: &Policy, support_eps: f64) -> Result<RatioTable> {
        self.check_policy(policy)?;
        let a = self.operator(policy);
        let d = crate::linalg::solve(&a.t().to_owned(), &self.start_vector(policy), 1e-10)?;
        let d = Array2::from_shape_vec(self.weights.dim(), d.to_vec()).expect("shape");
        let mut table = ratio_by_division(&d, &self.weights, support_eps);
        table.estimator = Estimator::Exact;
        Ok(table)
    }

    /// `A = I - γ M` on flattened state-action vectors, with `(Mν)(s,a) = Σ P(s'|s,a) π(a'|s') ν(s',a')`.
    fn operator(&self, policy: &Policy) -> Array2<f64> {
        let (ns, na) = self.weights.dim();
        let n = ns * na;
        let mut a = Array2::eye(n);
        for s in 0..ns {
            for act in 0..na {
                let i = s * na + act;
                for s2 in 0..ns {
                    let p = self.transition[[s, act, s2]];
                    if p == 0.0 {
                        continue;
                    }
                    for a2 in 0..na {
                        a[[i, s2 * na + a2]] -= self.gamma * p * policy.prob(s2, a2);
                    }
                }
            }
        }
        a
    }

    /// `(1-γ) β(s) π(a|s)` flattened.
    fn start_vector(&self, policy: &Policy) -> Array1<f64> {
        let (ns, na) = self.weights.dim();
        let mut b = Array1::zeros(ns * na);
        for s in 0..ns {
            for a in 0..na {
                b[s * na + a] = (1.0 - self.gamma) * self.initial[s] * policy.prob(s, a);
            }
        }
        b
    }
}

/// Pointwise `d_π / d_D` with unsupported pairs set to zero.
pub fn exact_ratio(d_pi: &OccupancyMeasure, d_data: &OccupancyMeasure) -> Result<RatioTable> {
    if d_pi.dim() != d_data.dim() {
        return Err(Error::Shape(format!(
            "occupancies differ in shape: {:?} vs {:?}",
            d_pi.dim(),
            d_data.dim()
        )));
    }
    Ok(ratio_by_division(d_pi.table(), d_data.table(), SUPPORT_EPS))
}

fn ratio_by_division(num: &Array2<f64>, den: &Array2<f64>, eps: f64) -> RatioTable {
    let mut unsupported = Vec::new();
    let mut omega = Array2::zeros(num.dim());
    for ((s, a), &w) in den.indexed_iter() {
        if w > eps {
            omega[[s, a]] = num[[s, a]] / w;
        } else {
            unsupported.push((s, a));
        }
    }
    let raw_moment = (den * &omega).sum();
    RatioTable {
        omega,
        estimator: Estimator::Exact,
        diagnostics: Diagnostics {
            raw_moment,
            unsupported,
            ..Default::default()
        },
    }
}

/// Zeroes unsupported pairs, clips at zero, records the raw moment and renormalizes if asked.
fn finalize(
    mut omega: Array2<f64>,
    weights: &Array2<f64>,
    estimator: Estimator,
    cfg: &RatioConfig,
    mut diagnostics: Diagnostics,
) -> RatioTable {
    diagnostics.unsupported.clear();
    for ((s, a), w) in weights.indexed_iter() {
        if *w <= cfg.support_eps {
            omega[[s, a]] = 0.0;
            diagnostics.unsupported.push((s, a));
        }
    }
    omega.mapv_inplace(|x| x.max(0.0));
    let moment = (weights * &omega).sum();
    diagnostics.raw_moment = moment;
    if cfg.renormalize && moment > 0.0 {
        omega.mapv_inplace(|x| x / moment);
    }
    RatioTable {
        omega,
        estimator,
        diagnostics,
    }
}

/// Runs the chosen estimator. Optimization-based estimators use `problem`;
/// the classifier needs the raw `dataset`.
pub fn estimate(
    estimator: Estimator,
    problem: &RatioProblem,
    dataset: Option<&Dataset>,
    policy: &Policy,
    cfg: &RatioConfig,
) -> Result<RatioTable> {
    match estimator {
        Estimator::Exact => problem.model_ratio(policy, cfg.support_eps),
        Estimator::DualDice => dualdice(problem, policy, cfg).map(|r| r.0),
        Estimator::Mwl => mwl(problem, policy, cfg).map(|r| r.0),
        Estimator::DvKl => dv_kl_ratio(problem, policy, cfg).map(|r| r.0),
        Estimator::Classifier => {
            let dataset = dataset.ok_or_else(|| {
                Error::InvalidArgument("classifier estimator needs a dataset".into())
            })?;
            classifier_ratio(dataset, policy, problem.gamma(), cfg)
        }
    }
}

pub(crate) fn flatten(t: &Array2<f64>) -> Array1<f64> {
    Array1::from_iter(t.iter().copied())
}

pub(crate) fn unflatten(v: &Array1<f64>, dim: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_vec(dim, v.to_vec()).expect("matching length")
}

pub(crate) fn linf(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{exact_occupancy, families};

    #[test]
    fn identical_occupancies_give_unit_ratio() {
        let m = families::random(4, 2, 0.9, 1).unwrap();
        let d = exact_occupancy(&m, &families::random_policy(4, 2, 2)).unwrap();
        let r = exact_ratio(&d, &d).unwrap();
        assert!(r.omega.iter().all(|w| (w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn point_mass_over_uniform() {
        let n = 6;
        let uniform = OccupancyMeasure::new(Array2::from_elem((3, 2), 1.0 / n as f64), 0.9).unwrap();
        let mut p = Array2::zeros((3, 2));
        p[[1, 0]] = 1.0;
        let point = OccupancyMeasure::new(p, 0.9).unwrap();
        let r = exact_ratio(&point, &uniform).unwrap();
        assert!((r.get(1, 0) - n as f64).abs() < 1e-12);
        assert_eq!(r.get(2, 1), 0.0);
    }

    #[test]
    fn unsupported_pairs_are_zero_and_listed() {
        let m = families::two_state(0.9).unwrap();
        let d_greedy = exact_occupancy(&m, &families::two_state_greedy()).unwrap();
        let d_unif = exact_occupancy(&m, &Policy::uniform(2, 2)).unwrap();
        let r = exact_ratio(&d_unif, &d_greedy).unwrap();
        assert!(r.diagnostics.unsupported.contains(&(0, 0)));
        assert_eq!(r.get(0, 0), 0.0);
    }

    #[test]
    fn two_state_exact_ratio_matches_division() {
        let m = families::two_state(0.9).unwrap();
        let d_pi = exact_occupancy(&m, &families::two_state_greedy()).unwrap();
        let d_mu = exact_occupancy(&m, &Policy::uniform(2, 2)).unwrap();
        let r = exact_ratio(&d_pi, &d_mu).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                assert!((r.get(s, a) - d_pi.get(s, a) / d_mu.get(s, a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn exact_ratio_satisfies_moment_conditions() {
        let m = families::random(5, 3, 0.9, 3).unwrap();
        let pi = families::random_policy(5, 3, 4);
        let mu = families::random_policy(5, 3, 5);
        let d_mu = exact_occupancy(&m, &mu).unwrap();
        let r = exact_ratio(&exact_occupancy(&m, &pi).unwrap(), &d_mu).unwrap();
        let prob = RatioProblem::exact(&m, &d_mu).unwrap();
        for k in 0..15 {
            let mut q = Array2::zeros((5, 3));
            q[[k / 3, k % 3]] = 1.0;
            assert!(prob.moment(&pi, &r.omega, &q).abs() < 1e-9);
        }
        let model = prob.model_ratio(&pi, SUPPORT_EPS).unwrap();
        assert!(model.linf_distance(&r) < 1e-9);
    }

    #[test]
    fn estimator_names_round_trip() {
        for e in Estimator::ALL {
            assert_eq!(e.to_string().parse::<Estimator>().unwrap(), e);
        }
    }

    #[test]
    fn csv_has_one_row_per_pair() {
        let m = families::two_state(0.9).unwrap();
        let d = exact_occupancy(&m, &Policy::uniform(2, 2)).unwrap();
        let csv = exact_ratio(&d, &d).unwrap().to_csv();
        assert_eq!(csv.lines().count(), 2 + 4);
        assert!(csv.lines().nth(2).unwrap().ends_with(",exact"));
    }
}
