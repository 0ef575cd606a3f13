//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Matrices with a reciprocal condition number below this are treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-10;

/// Reciprocal 2-norm condition number, `sigma_min / sigma_max`. Zero for the
/// zero matrix.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 || !max.is_finite() {
        return 0.0;
    }
    sv.min() / max
}

/// Inverts `m` after checking its conditioning against [`RCOND_THRESHOLD`].
pub fn checked_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dims(
            what,
            "square matrix",
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    let rc = rcond(m);
    if !(rc >= RCOND_THRESHOLD) {
        return Err(Error::Singular { what, rcond: rc });
    }
    m.clone()
        .try_inverse()
        .ok_or(Error::Singular { what, rcond: rc })
}

/// Numerical rank with the usual `max(n, m) * eps * sigma_max` cutoff.
pub fn rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let cutoff = sv.max() * (m.nrows().max(m.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// 1-norm (maximum absolute column sum).
pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}
