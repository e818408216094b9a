//! Per-run summary rows and their aggregation into a score table.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use ovrlab::FORMAT_TAG;

const SUMMARY_HEADER: &str = "regime,algorithm,lambda,ovr,seed,J_true,J_random,J_optimal,score,converged";
const REPORT_HEADER: &str = "regime,algorithm,lambda,n,score_mean,score_sd,J_true_mean";
pub const SUMMARY_FILE: &str = "summary.csv";

/// The outcome of one trained policy.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub regime: String,
    pub algorithm: String,
    pub lambda: f64,
    pub ovr: bool,
    /// Seed of the dataset the policy was trained on.
    pub seed: u64,
    pub j_true: f64,
    pub j_random: f64,
    pub j_optimal: f64,
    /// `100 (J - J_random) / (J_optimal - J_random)`.
    pub score: f64,
    pub converged: bool,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

impl SummaryRow {
    pub fn to_csv(rows: &[SummaryRow]) -> String {
        let mut out = format!("{FORMAT_TAG}\n{SUMMARY_HEADER}\n");
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.regime,
                r.algorithm,
                r.lambda,
                r.ovr,
                r.seed,
                num(r.j_true),
                num(r.j_random),
                num(r.j_optimal),
                num(r.score),
                r.converged
            ));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Vec<SummaryRow>> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, tag)) if tag.trim() == FORMAT_TAG => {}
            Some((_, tag)) => bail!("format version mismatch: expected `{FORMAT_TAG}`, found `{}`", tag.trim()),
            None => bail!("empty summary"),
        }
        match lines.next() {
            Some((_, h)) if h.trim() == SUMMARY_HEADER => {}
            _ => bail!("line 2: expected header `{SUMMARY_HEADER}`"),
        }
        lines
            .map(|(i, line)| Self::parse_line(line).with_context(|| format!("line {}", i + 1)))
            .collect()
    }

    fn parse_line(line: &str) -> Result<SummaryRow> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 10 {
            bail!("expected 10 fields, found {}", f.len());
        }
        Ok(SummaryRow {
            regime: f[0].to_string(),
            algorithm: f[1].to_string(),
            lambda: f[2].parse()?,
            ovr: f[3].parse()?,
            seed: f[4].parse()?,
            j_true: f[5].parse()?,
            j_random: f[6].parse()?,
            j_optimal: f[7].parse()?,
            score: f[8].parse()?,
            converged: f[9].parse()?,
        })
    }
}

/// One line of the report table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub regime: String,
    pub algorithm: String,
    pub lambda: f64,
    pub n: usize,
    pub score_mean: f64,
    /// Unbiased sample standard deviation; NaN for a single run.
    pub score_sd: f64,
    pub j_true_mean: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Groups rows by (regime, algorithm, λ) in sorted order.
pub fn aggregate(rows: &[SummaryRow]) -> Vec<ReportRow> {
    // λ is nonnegative, so its bit pattern sorts like its value.
    let mut groups: BTreeMap<(&str, &str, u64), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((&r.regime, &r.algorithm, r.lambda.to_bits()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((regime, algorithm, bits), members)| {
            let scores: Vec<f64> = members.iter().map(|r| r.score).collect();
            let (score_mean, score_sd) = mean_sd(&scores);
            let j_true_mean = members.iter().map(|r| r.j_true).sum::<f64>() / members.len() as f64;
            ReportRow {
                regime: regime.to_string(),
                algorithm: algorithm.to_string(),
                lambda: f64::from_bits(bits),
                n: members.len(),
                score_mean,
                score_sd,
                j_true_mean,
            }
        })
        .collect()
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{FORMAT_TAG}\n{REPORT_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.regime,
            r.algorithm,
            r.lambda,
            r.n,
            num(r.score_mean),
            num(r.score_sd),
            num(r.j_true_mean)
        ));
    }
    out
}

/// Every summary file under `dir`, in sorted path order.
fn find_summaries(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read run directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            find_summaries(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == SUMMARY_FILE) {
            found.push(path);
        }
    }
    Ok(())
}

/// Reads every summary under `run_dir` and writes `report.csv` to `out`.
pub fn report(run_dir: &Path, out: &Path) -> Result<(PathBuf, Vec<ReportRow>)> {
    let mut files = Vec::new();
    find_summaries(run_dir, &mut files)?;
    let mut rows = Vec::new();
    for file in &files {
        let text = fs::read_to_string(file).with_context(|| format!("cannot read {}", file.display()))?;
        rows.extend(SummaryRow::parse_csv(&text).with_context(|| format!("in {}", file.display()))?);
    }
    if rows.is_empty() {
        bail!("no training summaries under {}", run_dir.display());
    }
    let table = aggregate(&rows);
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let path = out.join("report.csv");
    fs::write(&path, report_csv(&table)).with_context(|| format!("cannot write {}", path.display()))?;
    Ok((path, table))
}
