use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};

use crate::{Error, Result};

/// Solves `a x = b` with partial-pivot LU and rejects the solution if the
/// relative residual exceeds `max_residual`.
pub(crate) fn solve(a: &Array2<f64>, b: &Array1<f64>, max_residual: f64) -> Result<Array1<f64>> {
    let n = b.len();
    debug_assert_eq!(a.dim(), (n, n));
    let m = DMatrix::from_fn(n, n, |i, j| a[[i, j]]);
    let rhs = DVector::from_iterator(n, b.iter().copied());
    let x = m
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Numerical("singular linear system".into()))?;
    let residual = (&m * &x - &rhs).amax();
    let scale = 1.0 + rhs.amax() + x.amax();
    if !residual.is_finite() || residual > max_residual * scale {
        return Err(Error::Numerical(format!(
            "linear solve residual {residual:.3e} exceeds {max_residual:.1e}"
        )));
    }
    Ok(Array1::from_iter(x.iter().copied()))
}
