//! Run configuration: flat `key = value` lines grouped under `[section]` headers.
//!
//! Keys before the first header belong to `[general]`. Blank lines and lines
//! starting with `#` are ignored. Every key has a default and unknown sections
//! or keys are rejected with the offending line number.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};

use ovrlab::dataset::BehaviourKind;
use ovrlab::offline::{Algorithm, OptimizerConfig};
use ovrlab::ratio::Estimator;
use ovrlab::variance::DualMode;

/// Version accepted in `[general] version`.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    pub out: PathBuf,
    pub gen_mdp: GenMdp,
    pub gen_data: GenData,
    pub estimate_ratio: EstimateRatio,
    pub train: Train,
    pub verify: Verify,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenMdp {
    /// `two-state`, `chain-N`, `trap-bandit`, `two-arm-bandit` or `random-N`.
    pub family: String,
    pub gamma: f64,
    /// Action count of `random-N` instances.
    pub actions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenData {
    pub regime: BehaviourKind,
    pub episodes: usize,
    pub horizon: usize,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRatio {
    pub estimator: Estimator,
    /// `optimal`, `uniform` or the path of a policy file.
    pub policy: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Train {
    pub algorithm: Algorithm,
    pub ovr: bool,
    /// One value trains once; several values run a sweep.
    pub lambdas: Vec<f64>,
    pub estimator: Estimator,
    pub dual_mode: DualMode,
    pub bcq_threshold: f64,
    pub max_sweeps: usize,
    pub max_outer: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verify {
    pub gamma: f64,
    /// Adds the `γ = 0` members to the battery.
    pub degenerate: bool,
    pub horizon: usize,
    pub lemma3_sizes: Vec<usize>,
    pub lemma3_trials: usize,
    pub coverage_n: usize,
    pub coverage_deltas: Vec<f64>,
    pub coverage_resamples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let opt = OptimizerConfig::default();
        let verify = ovrlab::theory::VerifyConfig::default();
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            out: PathBuf::from("."),
            gen_mdp: GenMdp {
                family: "two-state".into(),
                gamma: 0.9,
                actions: 2,
            },
            gen_data: GenData {
                regime: BehaviourKind::Medium,
                episodes: 100,
                horizon: 20,
                sigma: 0.0,
            },
            estimate_ratio: EstimateRatio {
                estimator: Estimator::DualDice,
                policy: "optimal".into(),
            },
            train: Train {
                algorithm: opt.algorithm,
                ovr: opt.ovr_enabled,
                lambdas: vec![opt.lambda],
                estimator: opt.ratio_estimator,
                dual_mode: opt.dual_mode,
                bcq_threshold: opt.bcq_threshold,
                max_sweeps: opt.max_sweeps,
                max_outer: opt.max_outer,
                tol: opt.tol,
            },
            verify: Verify {
                gamma: 0.9,
                degenerate: false,
                horizon: verify.horizon,
                lemma3_sizes: verify.lemma3_sizes,
                lemma3_trials: verify.lemma3_trials,
                coverage_n: verify.coverage_n,
                coverage_deltas: verify.coverage_deltas,
                coverage_resamples: verify.coverage_resamples,
            },
        }
    }
}

fn scalar<T>(value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value.parse::<T>().map_err(|e| anyhow::anyhow!("`{value}`: {e}"))
}

fn list<T>(value: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    let items = value.split(',').map(|v| scalar(v.trim())).collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        bail!("empty list");
    }
    Ok(items)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::from("general");
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = i + 1;
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !SECTIONS.contains(&section.as_str()) {
                    bail!("line {lineno}: unknown section `[{section}]`");
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {lineno}: expected `key = value`, found `{line}`");
            };
            cfg.set(&section, key.trim(), value.trim())
                .with_context(|| format!("line {lineno}: [{section}] {}", key.trim()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match (section, key) {
            ("general", "version") => {
                self.version = scalar(value)?;
                if self.version != CONFIG_VERSION {
                    bail!("unsupported config version {} (expected {CONFIG_VERSION})", self.version);
                }
            }
            ("general", "seed") => self.seed = scalar(value)?,
            ("general", "out") => self.out = PathBuf::from(value),

            ("gen-mdp", "family") => self.gen_mdp.family = value.to_string(),
            ("gen-mdp", "gamma") => self.gen_mdp.gamma = scalar(value)?,
            ("gen-mdp", "actions") => self.gen_mdp.actions = scalar(value)?,

            ("gen-data", "regime") => self.gen_data.regime = scalar(value)?,
            ("gen-data", "episodes") => self.gen_data.episodes = scalar(value)?,
            ("gen-data", "horizon") => self.gen_data.horizon = scalar(value)?,
            ("gen-data", "sigma") => self.gen_data.sigma = scalar(value)?,

            ("estimate-ratio", "estimator") => self.estimate_ratio.estimator = scalar(value)?,
            ("estimate-ratio", "policy") => self.estimate_ratio.policy = value.to_string(),

            ("train", "algorithm") => self.train.algorithm = scalar(value)?,
            ("train", "ovr") => self.train.ovr = scalar(value)?,
            ("train", "lambda") => self.train.lambdas = list(value)?,
            ("train", "estimator") => self.train.estimator = scalar(value)?,
            ("train", "dual_mode") => self.train.dual_mode = scalar(value)?,
            ("train", "bcq_threshold") => self.train.bcq_threshold = scalar(value)?,
            ("train", "max_sweeps") => self.train.max_sweeps = scalar(value)?,
            ("train", "max_outer") => self.train.max_outer = scalar(value)?,
            ("train", "tol") => self.train.tol = scalar(value)?,

            ("verify", "gamma") => self.verify.gamma = scalar(value)?,
            ("verify", "degenerate") => self.verify.degenerate = scalar(value)?,
            ("verify", "horizon") => self.verify.horizon = scalar(value)?,
            ("verify", "lemma3_sizes") => self.verify.lemma3_sizes = list(value)?,
            ("verify", "lemma3_trials") => self.verify.lemma3_trials = scalar(value)?,
            ("verify", "coverage_n") => self.verify.coverage_n = scalar(value)?,
            ("verify", "coverage_deltas") => self.verify.coverage_deltas = list(value)?,
            ("verify", "coverage_resamples") => self.verify.coverage_resamples = scalar(value)?,

            _ => bail!("unknown key"),
        }
        Ok(())
    }

    /// Optimizer settings for one value of `λ`.
    pub fn optimizer(&self, lambda: f64) -> OptimizerConfig {
        let t = &self.train;
        OptimizerConfig {
            algorithm: t.algorithm,
            ovr_enabled: t.ovr,
            lambda,
            ratio_estimator: t.estimator,
            dual_mode: t.dual_mode,
            bcq_threshold: t.bcq_threshold,
            max_sweeps: t.max_sweeps,
            max_outer: t.max_outer,
            tol: t.tol,
            seed: self.seed,
            ..OptimizerConfig::default()
        }
    }
}

const SECTIONS: [&str; 6] = ["general", "gen-mdp", "gen-data", "estimate-ratio", "train", "verify"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_and_lists() {
        let cfg = RunConfig::parse(
            "seed = 4\n# comment\n[train]\novr = true\nlambda = 0, 0.1, 1\nalgorithm = constrained_q\n\
             [verify]\ncoverage_deltas = 0.1,0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert!(cfg.train.ovr);
        assert_eq!(cfg.train.lambdas, vec![0.0, 0.1, 1.0]);
        assert_eq!(cfg.train.algorithm, Algorithm::ConstrainedQ);
        assert_eq!(cfg.verify.coverage_deltas, vec![0.1, 0.5]);
        assert_eq!(cfg.optimizer(0.1).lambda, 0.1);
    }

    #[test]
    fn errors_name_the_line() {
        let err = format!("{:#}", RunConfig::parse("seed = 1\n\n[train]\nlamda = 0.1\n").unwrap_err());
        assert!(err.contains("line 4"), "{err}");
        let err = format!("{:#}", RunConfig::parse("[trian]\n").unwrap_err());
        assert!(err.contains("line 1") && err.contains("trian"), "{err}");
        let err = format!("{:#}", RunConfig::parse("[train]\nlambda = x\n").unwrap_err());
        assert!(err.contains("line 2"), "{err}");
        let err = format!("{:#}", RunConfig::parse("just text\n").unwrap_err());
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn version_is_checked() {
        assert!(RunConfig::parse("version = 1\n").is_ok());
        assert!(RunConfig::parse("version = 2\n").is_err());
    }
}
