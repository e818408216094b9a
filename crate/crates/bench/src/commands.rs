use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use ovrlab::dataset::{self, corrupt_rewards, generate_regime, Dataset};
use ovrlab::mdp::{families, optimal_q, parse_mdp, write_mdp, Policy, TabularMdp};
use ovrlab::offline::{evaluate, ovr_train, ScoreAnchors, Training};
use ovrlab::ratio::{estimate, RatioConfig, RatioProblem};
use ovrlab::theory::{bounds_csv, verify_all, Battery, Fault, VerifyConfig};

use crate::config::RunConfig;
use crate::report::SummaryRow;

/// How a command that ran to completion went; maps onto the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    NotConverged,
    BoundViolated,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::NotConverged => 2,
            Status::BoundViolated => 3,
        }
    }
}

/// Offset between a dataset's seed and the seed of its reward noise.
const CORRUPTION_SEED_OFFSET: u64 = 1000;

pub fn read_mdp(path: &Path) -> Result<TabularMdp> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read mdp file {}", path.display()))?;
    parse_mdp(&text).with_context(|| format!("in mdp file {}", path.display()))
}

pub fn read_dataset(path: &Path, mdp: &TabularMdp) -> Result<Dataset> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read dataset file {}", path.display()))?;
    dataset::from_text(&text, mdp).with_context(|| format!("in dataset file {}", path.display()))
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

fn prepare_out(cfg: &RunConfig) -> Result<&Path> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("cannot create output directory {}", cfg.out.display()))?;
    Ok(&cfg.out)
}

/// Builds a named instance: `two-state`, `trap-bandit`, `two-arm-bandit`,
/// `chain-N` or `random-N`.
pub fn build_family(family: &str, gamma: f64, actions: usize, seed: u64) -> Result<TabularMdp> {
    let sized = |prefix: &str| -> Result<Option<usize>> {
        match family.strip_prefix(prefix) {
            Some(n) => Ok(Some(n.parse().with_context(|| format!("bad size in family `{family}`"))?)),
            None => Ok(None),
        }
    };
    let mdp = match family {
        "two-state" => families::two_state(gamma)?,
        "trap-bandit" => families::trap_bandit(gamma)?,
        "two-arm-bandit" => families::two_arm_bandit(gamma)?,
        _ => {
            if let Some(n) = sized("chain-")? {
                families::chain(n, gamma)?
            } else if let Some(n) = sized("random-")? {
                families::random(n, actions, gamma, seed)?
            } else {
                bail!("unknown mdp family `{family}`");
            }
        }
    };
    Ok(mdp)
}

pub fn gen_mdp(cfg: &RunConfig) -> Result<PathBuf> {
    let g = &cfg.gen_mdp;
    let mdp = build_family(&g.family, g.gamma, g.actions, cfg.seed)?;
    let out = prepare_out(cfg)?;
    write(out.join(format!("{}.mdp", g.family)), &write_mdp(&mdp))
}

pub fn gen_data(cfg: &RunConfig, mdp_path: &Path) -> Result<PathBuf> {
    let mdp = read_mdp(mdp_path)?;
    let g = &cfg.gen_data;
    let mut ds = generate_regime(&mdp, g.regime, g.episodes, g.horizon, cfg.seed)?;
    if g.sigma > 0.0 {
        ds = corrupt_rewards(&ds, g.sigma, cfg.seed.wrapping_add(CORRUPTION_SEED_OFFSET))?;
    }
    let out = prepare_out(cfg)?;
    let name = if g.sigma > 0.0 {
        format!("{}_seed{}_sigma{}.data", g.regime, cfg.seed, g.sigma)
    } else {
        format!("{}_seed{}.data", g.regime, cfg.seed)
    };
    write(out.join(name), &dataset::to_text(&ds))
}

fn target_policy(choice: &str, mdp: &TabularMdp) -> Result<Policy> {
    match choice {
        "optimal" => Ok(Policy::greedy(&optimal_q(mdp)?)),
        "uniform" => Ok(Policy::uniform(mdp.n_states(), mdp.n_actions())),
        path => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read policy file {path}"))?;
            Ok(Policy::from_text(&text).with_context(|| format!("in policy file {path}"))?)
        }
    }
}

pub fn estimate_ratio(cfg: &RunConfig, mdp_path: &Path, data_path: &Path) -> Result<(PathBuf, Status)> {
    let mdp = read_mdp(mdp_path)?;
    let ds = read_dataset(data_path, &mdp)?;
    let policy = target_policy(&cfg.estimate_ratio.policy, &mdp)?;
    let problem = RatioProblem::from_dataset(&ds, mdp.gamma())?;
    let mut ratio_cfg = RatioConfig::default();
    ratio_cfg.classifier.seed = cfg.seed;
    let table = estimate(cfg.estimate_ratio.estimator, &problem, Some(&ds), &policy, &ratio_cfg)?;
    println!("{}", table.diagnostics.summary());
    let out = prepare_out(cfg)?;
    let path = write(out.join(format!("ratio_{}.csv", table.estimator)), &table.to_csv())?;
    let status = if table.diagnostics.converged() {
        Status::Success
    } else {
        Status::NotConverged
    };
    Ok((path, status))
}

/// Output file stem for one cell of a training run.
fn cell_suffix(cfg: &RunConfig, lambda: f64) -> String {
    if cfg.train.lambdas.len() > 1 && cfg.train.ovr {
        format!("_lambda{lambda}")
    } else {
        String::new()
    }
}

pub fn train(cfg: &RunConfig, mdp_path: &Path, data_path: &Path) -> Result<(Vec<PathBuf>, Status)> {
    let mdp = read_mdp(mdp_path)?;
    let ds = read_dataset(data_path, &mdp)?;
    let lambdas: Vec<f64> = if cfg.train.ovr { cfg.train.lambdas.clone() } else { vec![0.0] };
    for lambda in &lambdas {
        cfg.optimizer(*lambda).validate()?;
    }
    let anchors = ScoreAnchors::of(&mdp)?;
    let runs: Vec<Training> = lambdas
        .par_iter()
        .map(|&lambda| ovr_train(&ds, &mdp, &cfg.optimizer(lambda)))
        .collect::<ovrlab::Result<_>>()?;

    let out = prepare_out(cfg)?;
    let mut written = Vec::new();
    let mut rows = Vec::new();
    let mut all_converged = true;
    for (&lambda, run) in lambdas.iter().zip(&runs) {
        let suffix = cell_suffix(cfg, lambda);
        written.push(write(out.join(format!("trace{suffix}.csv")), &run.trace.to_csv())?);
        written.push(write(out.join(format!("policy{suffix}.txt")), &run.policy.to_text())?);
        let j_true = evaluate(&mdp, &run.policy)?;
        all_converged &= run.converged();
        if !run.converged() {
            eprintln!("λ = {lambda}: not converged {:?}", run.flags);
        }
        let meta = ds.meta();
        rows.push(SummaryRow {
            regime: meta.behaviour.to_string(),
            algorithm: cfg.train.algorithm.to_string(),
            lambda,
            ovr: cfg.train.ovr,
            seed: meta.seed,
            j_true,
            j_random: anchors.random,
            j_optimal: anchors.optimal,
            // Instances where every policy earns the same have no score.
            score: anchors.score(j_true).unwrap_or(f64::NAN),
            converged: run.converged(),
        });
    }
    written.push(write(out.join("summary.csv"), &SummaryRow::to_csv(&rows))?);
    let status = if all_converged { Status::Success } else { Status::NotConverged };
    Ok((written, status))
}

/// `inflate_ratio` multiplies the ratio the sampling checks use; it exists to
/// exercise the failure path.
pub fn verify(cfg: &RunConfig, inflate_ratio: Option<f64>) -> Result<(PathBuf, Status)> {
    let v = &cfg.verify;
    let mut battery = Battery::canned(v.gamma)?;
    if v.degenerate {
        battery.members.push(("two_state_g0".into(), families::two_state(0.0)?));
        battery.members.push(("random4_g0".into(), families::random(4, 2, 0.0, 7)?));
    }
    let verify_cfg = VerifyConfig {
        horizon: v.horizon,
        lemma3_sizes: v.lemma3_sizes.clone(),
        lemma3_trials: v.lemma3_trials,
        coverage_n: v.coverage_n,
        coverage_deltas: v.coverage_deltas.clone(),
        coverage_resamples: v.coverage_resamples,
        seed: cfg.seed,
        fault: inflate_ratio.map(Fault::InflateRatio),
    };
    let reports = verify_all(&battery, &verify_cfg)?;
    let out = prepare_out(cfg)?;
    let path = write(out.join("bounds.csv"), &bounds_csv(&reports))?;
    let violated: Vec<_> = reports.iter().filter(|r| r.asserted && !r.holds()).collect();
    for r in &violated {
        eprintln!("violated: {} on {} (lhs {:.6e}, rhs {:.6e})", r.name, r.context, r.lhs, r.rhs);
    }
    let status = if violated.is_empty() { Status::Success } else { Status::BoundViolated };
    Ok((path, status))
}
