//! Thin wrapper over nalgebra for the small Hermitian systems the receivers solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::C64;

pub type CMatrix = DMatrix<C64>;

/// Solves `w · (A + ridge·I) = p` for the row vector `w` (A Hermitian).
///
/// Pivots below `1e-13` of the largest pivot count as singular.
pub(crate) fn solve_row(a: &CMatrix, p: &[C64], ridge: f64) -> Result<Vec<C64>> {
    let n = a.nrows();
    if a.ncols() != n || p.len() != n {
        return Err(Error::LengthMismatch { left: n, right: p.len() });
    }
    let mut m = a.clone();
    for i in 0..n {
        m[(i, i)] += C64::new(ridge, 0.0);
    }
    let lu = m.lu();
    let u = lu.u();
    let pivots: Vec<f64> = (0..n).map(|i| u[(i, i)].norm()).collect();
    let largest = pivots.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 || pivots.iter().any(|&v| v <= 1e-13 * largest) {
        return Err(Error::Singular);
    }
    // (A + λI) wᴴ = pᴴ since A is Hermitian.
    let rhs = DVector::from_iterator(n, p.iter().map(|v| v.conj()));
    let x = lu.solve(&rhs).ok_or(Error::Singular)?;
    Ok(x.iter().map(|v| v.conj()).collect())
}

pub(crate) fn trace_re(a: &CMatrix) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)].re).sum()
}

/// `w · A · wᴴ` for a row vector `w`.
pub(crate) fn quad_form(a: &CMatrix, w: &[C64]) -> f64 {
    let n = w.len();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += w[i] * a[(i, j)] * w[j].conj();
        }
    }
    acc.re
}
