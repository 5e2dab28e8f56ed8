//! Receiver-side bound construction.
//!
//! Given the buffer `buf_k` and elementwise bounds `delta` on the possible
//! buffer error, the tightest diagonally-dominant certificate adds the row
//! sums of `delta` to the diagonal of the buffer. For every error matrix
//! `|E| <= delta`, the difference `p_hat - (buf_k - E)` is then diagonally
//! dominant and therefore positive semidefinite.

use crate::error::{Error, Result};
use crate::symmat::SymMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct BoundResult {
    pub p_hat: SymMatrix,
    /// Diagonal of the optimal load, equal to the row sums of `delta`.
    pub s_star: Vec<f64>,
}

fn check_nonnegative(delta: &SymMatrix) -> Result<()> {
    match delta.iter_upper().find(|(_, _, v)| *v < 0.0) {
        Some((i, j, value)) => Err(Error::NegativeEntry { i, j, value }),
        None => Ok(()),
    }
}

/// `a + b` rounded toward `a`, so the stored increment never exceeds `b`.
fn add_toward(a: f64, b: f64) -> f64 {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    if err < 0.0 {
        s.next_down()
    } else {
        s
    }
}

/// `p_hat = buf + diag(delta * 1)`.
///
/// The diagonal sums are rounded toward the buffer, so `p_hat - p` never
/// exceeds `diag(delta * 1) + delta` elementwise in floating point and
/// [`error_bound`] holds exactly; conservativeness can lose at most one ulp.
pub fn bound(buf: &SymMatrix, delta: &SymMatrix) -> Result<BoundResult> {
    if buf.n() != delta.n() {
        return Err(Error::DimensionMismatch {
            expected: buf.n(),
            found: delta.n(),
        });
    }
    check_nonnegative(delta)?;
    let s_star = delta.row_sums();
    let mut p_hat = buf.clone();
    for (i, &s) in s_star.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFinite { i, j: i });
        }
        p_hat.set(i, i, add_toward(buf.get(i, i), s));
    }
    Ok(BoundResult { p_hat, s_star })
}

/// Worst-case Frobenius error `||W o (diag(delta * 1) + delta)||_F` of the
/// bound on the submatrix selected by the 0/1 mask `w`.
pub fn error_bound(w: &SymMatrix, delta: &SymMatrix) -> Result<f64> {
    if let Some((i, j, value)) = w.iter_upper().find(|(_, _, v)| *v != 0.0 && *v != 1.0) {
        return Err(Error::InvalidMask { i, j, value });
    }
    let worst = delta.add_diag(&delta.row_sums())?;
    Ok(w.hadamard(&worst)?.frobenius_norm())
}

/// Membership in the finite-constraint feasible set:
/// `S[i][i] >= sum_j delta[i][j] + sum_{j != i} |S[i][j]|` for every row.
pub fn is_feasible(s: &SymMatrix, delta: &SymMatrix) -> bool {
    let n = s.n();
    assert_eq!(n, delta.n(), "dimension mismatch");
    let delta_rows = delta.row_sums();
    (0..n).all(|i| {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| s.get(i, j).abs()).sum();
        s.get(i, i) >= delta_rows[i] + off
    })
}
