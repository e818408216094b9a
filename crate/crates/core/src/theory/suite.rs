use super::{
    check_lemma1, check_lemma2_tv, check_lemma3, check_theorem1, coverage_experiment, renyi2, BoundReport, FClass,
    SampleSetup,
};
use crate::mdp::{exact_occupancy, families, Policy, TabularMdp};
use crate::ratio::exact_ratio;
use crate::Result;

/// Named MDPs the suite runs over.
#[derive(Debug, Clone, PartialEq)]
pub struct Battery {
    pub members: Vec<(String, TabularMdp)>,
}

impl Battery {
    /// Two-state, chain, both bandits and one random instance at discount `gamma`.
    pub fn canned(gamma: f64) -> Result<Self> {
        Ok(Self {
            members: vec![
                ("two_state".into(), families::two_state(gamma)?),
                ("chain5".into(), families::chain(5, gamma)?),
                ("trap_bandit".into(), families::trap_bandit(gamma)?),
                ("two_arm_bandit".into(), families::two_arm_bandit(gamma)?),
                ("random4".into(), families::random(4, 2, gamma, 7)?),
            ],
        })
    }

    /// The canned battery at `γ = 0.9` plus myopic `γ = 0` copies of two members.
    pub fn with_degenerate() -> Result<Self> {
        let mut b = Self::canned(0.9)?;
        b.members.push(("two_state_g0".into(), families::two_state(0.0)?));
        b.members.push(("random4_g0".into(), families::random(4, 2, 0.0, 7)?));
        Ok(b)
    }
}

/// Deliberate corruption for exercising the failure path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    /// Multiplies the ratio used by the sampling checks.
    InflateRatio(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub horizon: usize,
    pub lemma3_sizes: Vec<usize>,
    pub lemma3_trials: usize,
    pub coverage_n: usize,
    pub coverage_deltas: Vec<f64>,
    pub coverage_resamples: usize,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            horizon: 14,
            lemma3_sizes: vec![10, 100, 1000],
            lemma3_trials: 10_000,
            coverage_n: 100,
            coverage_deltas: vec![0.05, 0.1, 0.5],
            coverage_resamples: 10_000,
            seed: 0,
            fault: None,
        }
    }
}

/// Runs every check on every battery member. The target policy is a random
/// full-support policy, the behaviour (and improvement baseline) is uniform.
pub fn verify_all(battery: &Battery, cfg: &VerifyConfig) -> Result<Vec<BoundReport>> {
    let mut out = Vec::new();
    for (k, (name, mdp)) in battery.members.iter().enumerate() {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let seed = cfg.seed.wrapping_add(1000 * k as u64);
        let pi = families::random_policy(ns, na, seed);
        let mu = Policy::uniform(ns, na);
        let d_pi = exact_occupancy(mdp, &pi)?;
        let d_mu = exact_occupancy(mdp, &mu)?;

        let p: Vec<f64> = d_pi.table().iter().copied().collect();
        let q: Vec<f64> = d_mu.table().iter().copied().collect();
        let r2 = renyi2(&p, &q)?;
        out.push(BoundReport::new(
            "renyi_identity",
            (r2.ratio_variance - (r2.exponentiated - 1.0)).abs(),
            1e-12,
            name.as_str(),
            true,
        ));

        let lemma1 = check_lemma1(mdp, &pi, &mu, cfg.horizon, name)?;
        out.extend(lemma1.all().into_iter().cloned());
        out.push(check_lemma2_tv(mdp, &mu, &pi, name)?);
        out.push(check_theorem1(mdp, &mu, &pi, None, FClass::default(), name)?);

        let omega = match cfg.fault {
            Some(Fault::InflateRatio(f)) => Some(exact_ratio(&d_pi, &d_mu)?.omega.mapv(|w| f * w)),
            None => None,
        };
        let setup = SampleSetup::new(mdp, &pi, &d_mu, omega.as_ref())?;
        out.extend(check_lemma3(&setup, &cfg.lemma3_sizes, cfg.lemma3_trials, seed, name)?);
        for &delta in &cfg.coverage_deltas {
            out.push(coverage_experiment(&setup, cfg.coverage_n, delta, cfg.coverage_resamples, seed, name)?);
        }
    }
    Ok(out)
}
