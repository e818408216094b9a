//! `ovrlab`: generate instances and datasets, estimate ratios, train, verify
//! bounds and summarize runs.
//!
//! Exit codes: 0 success, 1 usage or file error, 2 flagged non-convergence,
//! 3 violated bound.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use commands::Status;
use config::RunConfig;
use ovrlab::dataset::BehaviourKind;
use ovrlab::offline::Algorithm;
use ovrlab::ratio::Estimator;

#[derive(Parser, Debug)]
#[command(name = "ovrlab", version, about = "Tabular offline RL with variance regularization")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Seed for every random draw of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run configuration; command-line flags take precedence over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a named MDP instance.
    GenMdp {
        /// two-state, trap-bandit, two-arm-bandit, chain-N or random-N.
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        gamma: Option<f64>,
        /// Number of actions of random-N instances.
        #[arg(long)]
        actions: Option<usize>,
    },
    /// Log episodes of a behaviour regime on an MDP.
    GenData {
        #[arg(long)]
        mdp: PathBuf,
        /// expert, medium, random or mixed.
        #[arg(long)]
        regime: Option<BehaviourKind>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        /// Standard deviation of Gaussian reward corruption.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Estimate the ratio of a target policy's occupancy to the data distribution.
    EstimateRatio {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// exact, dualdice, mwl, dv_kl or classifier.
        #[arg(long)]
        estimator: Option<Estimator>,
        /// optimal, uniform, or a policy file.
        #[arg(long)]
        policy: Option<String>,
    },
    /// Train a policy on a dataset, optionally sweeping the penalty weight.
    Train {
        #[arg(long)]
        mdp: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// batch_q or constrained_q.
        #[arg(long)]
        algorithm: Option<Algorithm>,
        /// Penalty weights; more than one runs a sweep. Implies the regularized loop.
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
    },
    /// Check every bound on the canned battery.
    Verify {
        /// Include the myopic (γ = 0) members.
        #[arg(long)]
        degenerate: bool,
        /// Multiply the ratio used by the sampling checks (failure-path testing).
        #[arg(long, hide = true)]
        inject_ratio_fault: Option<f64>,
    },
    /// Aggregate the training summaries found under a run directory.
    Report {
        run_dir: PathBuf,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Status> {
    let mut cfg = load_config(&cli.common)?;
    let status = match cli.command {
        Command::GenMdp { family, gamma, actions } => {
            let g = &mut cfg.gen_mdp;
            g.family = family.unwrap_or(std::mem::take(&mut g.family));
            g.gamma = gamma.unwrap_or(g.gamma);
            g.actions = actions.unwrap_or(g.actions);
            println!("{}", commands::gen_mdp(&cfg)?.display());
            Status::Success
        }
        Command::GenData {
            mdp,
            regime,
            episodes,
            horizon,
            sigma,
        } => {
            let g = &mut cfg.gen_data;
            g.regime = regime.unwrap_or(g.regime);
            g.episodes = episodes.unwrap_or(g.episodes);
            g.horizon = horizon.unwrap_or(g.horizon);
            g.sigma = sigma.unwrap_or(g.sigma);
            println!("{}", commands::gen_data(&cfg, &mdp)?.display());
            Status::Success
        }
        Command::EstimateRatio {
            mdp,
            data,
            estimator,
            policy,
        } => {
            let e = &mut cfg.estimate_ratio;
            e.estimator = estimator.unwrap_or(e.estimator);
            if let Some(p) = policy {
                e.policy = p;
            }
            let (path, status) = commands::estimate_ratio(&cfg, &mdp, &data)?;
            println!("{}", path.display());
            status
        }
        Command::Train {
            mdp,
            data,
            algorithm,
            lambda,
        } => {
            let t = &mut cfg.train;
            t.algorithm = algorithm.unwrap_or(t.algorithm);
            if !lambda.is_empty() {
                t.lambdas = lambda;
                t.ovr = true;
            }
            let (paths, status) = commands::train(&cfg, &mdp, &data)?;
            for p in paths {
                println!("{}", p.display());
            }
            status
        }
        Command::Verify {
            degenerate,
            inject_ratio_fault,
        } => {
            cfg.verify.degenerate |= degenerate;
            let (path, status) = commands::verify(&cfg, inject_ratio_fault)?;
            println!("{}", path.display());
            status
        }
        Command::Report { run_dir } => {
            let out = cli.common.out.clone().unwrap_or_else(|| run_dir.clone());
            let (path, table) = report::report(&run_dir, &out)?;
            for r in &table {
                println!(
                    "{:<8} {:<14} λ={:<6} n={:<3} score {:8.2} ± {:.2}",
                    r.regime, r.algorithm, r.lambda, r.n, r.score_mean, r.score_sd
                );
            }
            println!("{}", path.display());
            Status::Success
        }
    };
    Ok(status)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage_error = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage_error { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(status) => ExitCode::from(status.exit_code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
