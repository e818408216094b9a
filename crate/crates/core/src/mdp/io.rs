use ndarray::{Array1, Array2, Array3};

use super::TabularMdp;
use crate::textio::{join_f64, parse_field, Lines};
use crate::{Result, FORMAT_TAG};

/// Plain-text form: tag line, `MDP n_states n_actions gamma`, the initial
/// distribution, one reward row per state, then one transition row per `(s,a)`.
pub fn write_mdp(mdp: &TabularMdp) -> String {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut out = format!("{FORMAT_TAG}\nMDP {ns} {na} {}\n", crate::textio::fmt_f64(mdp.gamma()));
    out.push_str(&join_f64(mdp.initial()));
    out.push('\n');
    for row in mdp.reward().rows() {
        out.push_str(&join_f64(row));
        out.push('\n');
    }
    for s in 0..ns {
        for a in 0..na {
            out.push_str(&join_f64(mdp.transition().slice(ndarray::s![s, a, ..])));
            out.push('\n');
        }
    }
    out
}

pub fn parse_mdp(text: &str) -> Result<TabularMdp> {
    let mut lines = Lines::new(text);
    lines.expect_tag()?;
    let header = lines.next_line()?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "MDP" {
        return Err(lines.error("expected `MDP n_states n_actions gamma`"));
    }
    let ns: usize = parse_field(parts[1], "n_states").map_err(|e| lines.error(e))?;
    let na: usize = parse_field(parts[2], "n_actions").map_err(|e| lines.error(e))?;
    let gamma: f64 = parse_field(parts[3], "gamma").map_err(|e| lines.error(e))?;
    if ns == 0 || na == 0 || ns > super::MAX_STATES || na > super::MAX_ACTIONS {
        return Err(lines.error(format!("unsupported size {ns}x{na}")));
    }
    let initial = Array1::from(lines.values::<f64>(ns)?);
    let mut reward = Array2::zeros((ns, na));
    for s in 0..ns {
        reward.row_mut(s).assign(&Array1::from(lines.values::<f64>(na)?));
    }
    let mut transition = Array3::zeros((ns, na, ns));
    for s in 0..ns {
        for a in 0..na {
            let row = Array1::from(lines.values::<f64>(ns)?);
            transition.slice_mut(ndarray::s![s, a, ..]).assign(&row);
        }
    }
    if lines.try_next_line().is_some() {
        return Err(lines.error("trailing content after transition rows"));
    }
    TabularMdp::new(transition, reward, gamma, initial)
}
