use ndarray::{Array2, ArrayView1};

use crate::{Error, Result};

const ROW_TOL: f64 = 1e-12;

/// Stochastic tabular policy `π(a|s)`, optionally carrying softmax logits `θ[s,a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Array2<f64>,
    params: Option<Array2<f64>>,
}

impl Policy {
    pub fn from_probs(probs: Array2<f64>) -> Result<Self> {
        let p = Self {
            probs,
            params: None,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
            params: None,
        }
    }

    /// Deterministic policy choosing `actions[s]` in state `s`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidPolicy(format!(
                    "action {a} out of range at state {s}"
                )));
            }
            probs[[s, a]] = 1.0;
        }
        Ok(Self {
            probs,
            params: None,
        })
    }

    /// Softmax-parameterized policy `π_θ(a|s) ∝ exp θ[s,a]`.
    pub fn softmax(params: Array2<f64>) -> Result<Self> {
        if params.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPolicy("non-finite softmax parameter".into()));
        }
        let mut probs = params.clone();
        for mut row in probs.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        Ok(Self {
            probs,
            params: Some(params),
        })
    }

    /// Boltzmann policy over a Q table at temperature `tau`.
    pub fn boltzmann(q: &Array2<f64>, tau: f64) -> Result<Self> {
        if tau <= 0.0 {
            return Err(Error::InvalidArgument(format!("temperature must be > 0, got {tau}")));
        }
        let mut p = Self::softmax(q.mapv(|x| x / tau))?;
        p.params = None;
        Ok(p)
    }

    /// Greedy policy; ties go to the lowest action index.
    pub fn greedy(q: &Array2<f64>) -> Self {
        let actions: Vec<usize> = q.rows().into_iter().map(argmax).collect();
        Self::deterministic(&actions, q.ncols()).expect("argmax is in range")
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.nrows() == 0 || self.probs.ncols() == 0 {
            return Err(Error::InvalidPolicy("empty policy table".into()));
        }
        for (s, row) in self.probs.rows().into_iter().enumerate() {
            if let Some(p) = row.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return Err(Error::InvalidPolicy(format!(
                    "negative or non-finite probability {p} at state {s}"
                )));
            }
            let sum = row.sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[[s, a]]
    }

    pub fn row(&self, s: usize) -> ArrayView1<'_, f64> {
        self.probs.row(s)
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn params(&self) -> Option<&Array2<f64>> {
        self.params.as_ref()
    }

    /// Index of the most probable action in each state (lowest index on ties).
    pub fn modal_actions(&self) -> Vec<usize> {
        self.probs.rows().into_iter().map(argmax).collect()
    }

    /// Text form: `POLICY n_states n_actions` followed by one row per state.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\nPOLICY {} {}\n", crate::FORMAT_TAG, self.n_states(), self.n_actions());
        for row in self.probs.rows() {
            let cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, tag) = lines.next().ok_or(Error::UnexpectedEof)?;
        if tag.trim() != crate::FORMAT_TAG {
            return Err(Error::Version {
                expected: crate::FORMAT_TAG.into(),
                found: tag.trim().into(),
            });
        }
        let (ln, header) = lines.next().ok_or(Error::UnexpectedEof)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "POLICY" {
            return Err(Error::Parse {
                line: ln + 1,
                msg: "expected `POLICY n_states n_actions`".into(),
            });
        }
        let parse_usize = |x: &str| {
            x.parse::<usize>().map_err(|e| Error::Parse {
                line: ln + 1,
                msg: e.to_string(),
            })
        };
        let ns = parse_usize(parts[1])?;
        let na = parse_usize(parts[2])?;
        let mut probs = Array2::zeros((ns, na));
        for s in 0..ns {
            let (ln, line) = lines.next().ok_or(Error::UnexpectedEof)?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|x| x.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: ln + 1,
                    msg: e.to_string(),
                })?;
            if vals.len() != na {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("expected {na} probabilities, found {}", vals.len()),
                });
            }
            probs.row_mut(s).assign(&ndarray::Array1::from(vals));
        }
        Self::from_probs(probs)
    }
}

pub(crate) fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn softmax_rows_match_params() {
        let theta = array![[0.0, 1.0, -2.0], [3.0, 3.0, 3.0]];
        let p = Policy::softmax(theta.clone()).unwrap();
        for s in 0..2 {
            let z: f64 = theta.row(s).iter().map(|x| x.exp()).sum();
            for a in 0..3 {
                assert!((p.prob(s, a) - theta[[s, a]].exp() / z).abs() < 1e-12);
            }
        }
        assert!(p.validate().is_ok());
    }

    #[test]
    fn greedy_breaks_ties_low() {
        let p = Policy::greedy(&array![[1.0, 1.0], [0.0, 2.0]]);
        assert_eq!(p.modal_actions(), vec![0, 1]);
    }

    #[test]
    fn rejects_unnormalized_rows() {
        assert!(Policy::from_probs(array![[0.5, 0.6]]).is_err());
        assert!(Policy::from_probs(array![[1.5, -0.5]]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let p = Policy::softmax(array![[0.1, 0.7], [-1.3, 2.0]]).unwrap();
        let back = Policy::from_text(&p.to_text()).unwrap();
        assert_eq!(back.probs(), p.probs());
    }
}
