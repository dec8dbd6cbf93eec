//! Dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `a x = b` by LU with partial pivoting.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Solve(format!("singular {}x{} system", a.nrows(), a.ncols())))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solve("solution has non-finite entries".into()));
    }
    Ok(x)
}

/// Solves `aᵀ x = b` by LU with partial pivoting.
pub fn solve_transpose(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    solve(&a.transpose(), b)
}

/// `I - gamma * p`.
pub fn resolvent_matrix(p: &DMatrix<f64>, gamma: f64) -> DMatrix<f64> {
    let n = p.nrows();
    DMatrix::identity(n, n) - p * gamma
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// `‖a - b‖∞ / max(‖b‖∞, floor)`.
pub fn relative_inf_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    diff / inf_norm(b).max(floor)
}
