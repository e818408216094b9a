//! Offline transition logs: generation from behaviour policies, reward
//! corruption, summary statistics and the on-disk format.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

use crate::mdp::{optimal_q, OccupancyMeasure, Policy, TabularMdp};
use crate::rng::{categorical, seeded};
use crate::textio::{fmt_f64, parse_field, Lines};
use crate::{Error, Result, FORMAT_TAG};

/// Temperature of the near-optimal logging policy.
pub const EXPERT_TEMPERATURE: f64 = 0.01;
/// Temperature of the mediocre logging policy.
pub const MEDIUM_TEMPERATURE: f64 = 0.5;
/// Weight of the uniform policy in the mixed regime.
pub const MIXED_RANDOM_WEIGHT: f64 = 0.5;
/// Additive Laplace count used by [`behaviour_estimate`].
pub const LAPLACE_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub episode: usize,
    pub t: usize,
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
}

/// Which logging policy produced a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BehaviourKind {
    Expert,
    Medium,
    Random,
    Mixed,
    Custom,
}

impl BehaviourKind {
    pub const REGIMES: [BehaviourKind; 4] = [
        BehaviourKind::Expert,
        BehaviourKind::Medium,
        BehaviourKind::Random,
        BehaviourKind::Mixed,
    ];
}

impl fmt::Display for BehaviourKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BehaviourKind::Expert => "expert",
            BehaviourKind::Medium => "medium",
            BehaviourKind::Random => "random",
            BehaviourKind::Mixed => "mixed",
            BehaviourKind::Custom => "custom",
        })
    }
}

impl FromStr for BehaviourKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(BehaviourKind::Expert),
            "medium" => Ok(BehaviourKind::Medium),
            "random" => Ok(BehaviourKind::Random),
            "mixed" => Ok(BehaviourKind::Mixed),
            "custom" => Ok(BehaviourKind::Custom),
            other => Err(Error::InvalidArgument(format!("unknown behaviour kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub mdp_hash: String,
    pub behaviour: BehaviourKind,
    pub seed: u64,
    pub n_episodes: usize,
    pub horizon: usize,
    /// Total standard deviation of the Gaussian noise added to rewards (0 if clean).
    pub corruption_sigma: f64,
}

/// An immutable, validated offline dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    transitions: Vec<Transition>,
    meta: DatasetMeta,
    n_states: usize,
    n_actions: usize,
}

impl Dataset {
    /// Checks index bounds, finiteness and that each episode counts `t` up from 0.
    pub fn new(
        transitions: Vec<Transition>,
        meta: DatasetMeta,
        n_states: usize,
        n_actions: usize,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::InvalidArgument("dataset is empty".into()));
        }
        let mut prev: Option<&Transition> = None;
        for (i, tr) in transitions.iter().enumerate() {
            if tr.s >= n_states || tr.s_next >= n_states || tr.a >= n_actions || !tr.r.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "record {i} (episode {}, t {}) is out of range for a {n_states}x{n_actions} mdp",
                    tr.episode, tr.t
                )));
            }
            let expected_t = match prev {
                Some(p) if p.episode == tr.episode => p.t + 1,
                _ => 0,
            };
            if tr.t != expected_t {
                return Err(Error::InvalidArgument(format!(
                    "record {i}: episode {} has t={} where {expected_t} was expected",
                    tr.episode, tr.t
                )));
            }
            prev = Some(tr);
        }
        Ok(Self {
            transitions,
            meta,
            n_states,
            n_actions,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// First state of every episode.
    pub fn episode_starts(&self) -> impl Iterator<Item = usize> + '_ {
        self.transitions.iter().filter(|tr| tr.t == 0).map(|tr| tr.s)
    }

    /// Visit counts `n(s,a)` (undiscounted).
    pub fn counts(&self) -> Array2<f64> {
        let mut n = Array2::zeros((self.n_states, self.n_actions));
        for tr in &self.transitions {
            n[[tr.s, tr.a]] += 1.0;
        }
        n
    }

    /// Minimum reward in the log.
    pub fn min_reward(&self) -> f64 {
        self.transitions.iter().map(|tr| tr.r).fold(f64::INFINITY, f64::min)
    }

    /// Same dataset with the first `n` episodes only.
    pub fn first_episodes(&self, n: usize) -> Result<Self> {
        let transitions: Vec<Transition> =
            self.transitions.iter().copied().filter(|tr| tr.episode < n).collect();
        let meta = DatasetMeta {
            n_episodes: n.min(self.meta.n_episodes),
            ..self.meta.clone()
        };
        Self::new(transitions, meta, self.n_states, self.n_actions)
    }
}

/// Smallest horizon with `γ^H ≤ eps`.
pub fn effective_horizon(gamma: f64, eps: f64) -> usize {
    if gamma <= 0.0 {
        return 1;
    }
    ((eps.ln() / gamma.ln()).ceil() as usize).max(1)
}

/// Rolls out `n_episodes` fixed-length episodes from the initial distribution.
pub fn generate(
    mdp: &TabularMdp,
    behaviour: &Policy,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Dataset> {
    generate_with_kind(mdp, behaviour, BehaviourKind::Custom, n_episodes, horizon, seed)
}

pub fn generate_with_kind(
    mdp: &TabularMdp,
    behaviour: &Policy,
    kind: BehaviourKind,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_episodes == 0 || horizon == 0 {
        return Err(Error::InvalidArgument(format!(
            "need n_episodes >= 1 and horizon >= 1, got {n_episodes} and {horizon}"
        )));
    }
    if behaviour.n_states() != mdp.n_states() || behaviour.n_actions() != mdp.n_actions() {
        return Err(Error::Shape("behaviour policy does not match mdp".into()));
    }
    let mut rng = seeded(seed);
    let initial = mdp.initial().to_vec();
    let p = mdp.transition();
    let mut transitions = Vec::with_capacity(n_episodes * horizon);
    for episode in 0..n_episodes {
        let mut s = categorical(&mut rng, &initial);
        for t in 0..horizon {
            let a = categorical(&mut rng, behaviour.row(s).as_slice().expect("contiguous row"));
            let next = p.slice(ndarray::s![s, a, ..]);
            let s_next = categorical(&mut rng, next.as_slice().expect("contiguous row"));
            transitions.push(Transition {
                episode,
                t,
                s,
                a,
                r: mdp.reward()[[s, a]],
                s_next,
            });
            s = s_next;
        }
    }
    let meta = DatasetMeta {
        mdp_hash: mdp.content_hash(),
        behaviour: kind,
        seed,
        n_episodes,
        horizon,
        corruption_sigma: 0.0,
    };
    Dataset::new(transitions, meta, mdp.n_states(), mdp.n_actions())
}

/// Generates a dataset with the logging policy of a named regime.
pub fn generate_regime(
    mdp: &TabularMdp,
    kind: BehaviourKind,
    n_episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Dataset> {
    let behaviour = regime_policy(mdp, kind)?;
    generate_with_kind(mdp, &behaviour, kind, n_episodes, horizon, seed)
}

/// Logging policy of a data regime: softmax of `Q*` at a fixed temperature,
/// uniform, or a mixture of the two.
pub fn regime_policy(mdp: &TabularMdp, kind: BehaviourKind) -> Result<Policy> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    match kind {
        BehaviourKind::Expert => Policy::boltzmann(&optimal_q(mdp)?, EXPERT_TEMPERATURE),
        BehaviourKind::Medium => Policy::boltzmann(&optimal_q(mdp)?, MEDIUM_TEMPERATURE),
        BehaviourKind::Random => Ok(Policy::uniform(ns, na)),
        BehaviourKind::Mixed => mixture_policy(
            &Policy::uniform(ns, na),
            &regime_policy(mdp, BehaviourKind::Medium)?,
            MIXED_RANDOM_WEIGHT,
        ),
        BehaviourKind::Custom => Err(Error::InvalidArgument(
            "custom behaviour has no canned policy".into(),
        )),
    }
}

/// `w·p1 + (1-w)·p2`.
pub fn mixture_policy(p1: &Policy, p2: &Policy, w: f64) -> Result<Policy> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidArgument(format!("mixture weight {w} outside [0,1]")));
    }
    if p1.probs().dim() != p2.probs().dim() {
        return Err(Error::Shape("mixture components differ in shape".into()));
    }
    if w == 1.0 {
        return Ok(p1.clone());
    }
    if w == 0.0 {
        return Ok(p2.clone());
    }
    let mut probs = p1.probs() * w + p2.probs() * (1.0 - w);
    for mut row in probs.rows_mut() {
        let z = row.sum();
        row.mapv_inplace(|x| x / z);
    }
    Policy::from_probs(probs)
}

/// Adds `sigma·ε`, `ε ~ N(0,1)`, to every reward with a fresh stream.
/// Repeated corruption accumulates the noise level in quadrature.
pub fn corrupt_rewards(dataset: &Dataset, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut out = dataset.clone();
    if sigma > 0.0 {
        let mut rng = seeded(seed);
        for tr in &mut out.transitions {
            let eps: f64 = StandardNormal.sample(&mut rng);
            tr.r += sigma * eps;
        }
    }
    out.meta.corruption_sigma = dataset.meta.corruption_sigma.hypot(sigma);
    Ok(out)
}

/// Discounted empirical occupancy together with raw visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalOccupancy {
    pub occupancy: OccupancyMeasure,
    pub counts: Array2<f64>,
}

/// `d̂(s,a) ∝ Σ γ^t 1[s_t=s, a_t=a]` over all logged transitions.
pub fn empirical_occupancy(dataset: &Dataset, gamma: f64) -> Result<EmpiricalOccupancy> {
    let mut w = Array2::zeros((dataset.n_states, dataset.n_actions));
    for tr in &dataset.transitions {
        w[[tr.s, tr.a]] += gamma.powi(tr.t as i32);
    }
    Ok(EmpiricalOccupancy {
        occupancy: OccupancyMeasure::from_weights(w, gamma)?,
        counts: dataset.counts(),
    })
}

/// Count-based behaviour estimate with Laplace smoothing on visited states;
/// unvisited states get a uniform row.
pub fn behaviour_estimate(dataset: &Dataset) -> Policy {
    let counts = dataset.counts();
    let na = dataset.n_actions as f64;
    let mut probs = counts.clone();
    for mut row in probs.rows_mut() {
        let total = row.sum();
        if total == 0.0 {
            row.fill(1.0 / na);
        } else {
            row.mapv_inplace(|c| (c + LAPLACE_ALPHA) / (total + LAPLACE_ALPHA * na));
        }
    }
    Policy::from_probs(probs).expect("smoothed counts are normalized")
}

/// Text form: tag line, header, then `episode t s a r s_next` per transition.
pub fn to_text(dataset: &Dataset) -> String {
    let m = &dataset.meta;
    let mut out = format!(
        "{FORMAT_TAG}\nDATASET {} {} {} {} {} {}\n",
        m.mdp_hash,
        m.behaviour,
        m.seed,
        m.n_episodes,
        m.horizon,
        fmt_f64(m.corruption_sigma)
    );
    for tr in &dataset.transitions {
        out.push_str(&format!(
            "{} {} {} {} {} {}\n",
            tr.episode,
            tr.t,
            tr.s,
            tr.a,
            fmt_f64(tr.r),
            tr.s_next
        ));
    }
    out
}

/// Parses the text form and checks it against the MDP it claims to come from.
pub fn from_text(text: &str, mdp: &TabularMdp) -> Result<Dataset> {
    let mut lines = Lines::new(text);
    lines.expect_tag()?;
    let header = lines.next_line()?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 7 || parts[0] != "DATASET" {
        return Err(lines.error(
            "expected `DATASET mdp_hash behaviour_kind seed n_episodes horizon sigma`",
        ));
    }
    let err = |e: String| lines.error(e);
    let meta = DatasetMeta {
        mdp_hash: parts[1].to_string(),
        behaviour: parts[2].parse().map_err(|e: Error| err(e.to_string()))?,
        seed: parse_field(parts[3], "seed").map_err(err)?,
        n_episodes: parse_field(parts[4], "n_episodes").map_err(err)?,
        horizon: parse_field(parts[5], "horizon").map_err(err)?,
        corruption_sigma: parse_field(parts[6], "sigma").map_err(err)?,
    };
    let actual = mdp.content_hash();
    if meta.mdp_hash != actual {
        return Err(Error::HashMismatch {
            declared: meta.mdp_hash,
            actual,
        });
    }
    let mut transitions = Vec::with_capacity(meta.n_episodes * meta.horizon);
    let expected = meta.n_episodes * meta.horizon;
    while let Some(line) = lines.try_next_line() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(lines.error(format!("record has {} fields, expected 6", f.len())));
        }
        let idx = |i: usize, what: &str| parse_field::<usize>(f[i], what).map_err(|e| lines.error(e));
        let tr = Transition {
            episode: idx(0, "episode")?,
            t: idx(1, "t")?,
            s: idx(2, "s")?,
            a: idx(3, "a")?,
            r: parse_field(f[4], "r").map_err(|e| lines.error(e))?,
            s_next: idx(5, "s_next")?,
        };
        if tr.s >= mdp.n_states() || tr.s_next >= mdp.n_states() || tr.a >= mdp.n_actions() {
            return Err(lines.error(format!(
                "record (episode {}, t {}) has out-of-range index",
                tr.episode, tr.t
            )));
        }
        transitions.push(tr);
    }
    if transitions.len() < expected {
        return Err(Error::UnexpectedEof);
    }
    Dataset::new(transitions, meta, mdp.n_states(), mdp.n_actions())
}

pub fn persist(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, to_text(dataset))?;
    Ok(())
}

pub fn restore(path: &Path, mdp: &TabularMdp) -> Result<Dataset> {
    from_text(&std::fs::read_to_string(path)?, mdp)
}

/// CSV export with a header row.
pub fn to_csv(dataset: &Dataset) -> String {
    let mut out = format!("{FORMAT_TAG}\nepisode,t,s,a,r,s_next\n");
    for tr in &dataset.transitions {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            tr.episode,
            tr.t,
            tr.s,
            tr.a,
            fmt_f64(tr.r),
            tr.s_next
        ));
    }
    out
}
