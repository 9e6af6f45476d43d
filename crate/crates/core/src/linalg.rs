//! Small dense linear-algebra helpers shared by the refinement and
//! correction solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{FdcError, Result};

/// 2-norm condition number from singular values (`inf` when singular).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Spectral norm of the inverse, `1 / σ_min`.
pub fn inverse_norm(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        1.0 / min
    }
}

const SINGULAR_COND: f64 = 1e15;

/// Above this size the SVD condition check is replaced by a cheaper pivot
/// ratio estimate.
const SVD_CHECK_MAX: usize = 256;

/// Solve a square system by LU, refusing numerically singular matrices.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let singular = |cond| FdcError::SingularMatrix { what: what.into(), cond };
    if a.nrows() <= SVD_CHECK_MAX {
        let cond = condition_number(a);
        if !(cond < SINGULAR_COND) {
            return Err(singular(cond));
        }
        return a.clone().lu().solve(b).ok_or_else(|| singular(cond));
    }
    let lu = a.clone().lu();
    let d = lu.u().diagonal().abs();
    let est = d.max() / d.min();
    if !(est < SINGULAR_COND) {
        return Err(singular(est));
    }
    let x = lu.solve(b).ok_or_else(|| singular(est))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(singular(est))
    }
}

pub fn solve_vector(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let x = solve(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()), what)?;
    Ok(x.column(0).into_owned())
}

/// Minimum-norm solution of the underdetermined system `J x = b`,
/// `x = Jᵀ (J Jᵀ)⁻¹ b`, evaluated through `Jᵀ = QR` as `x = Q R⁻ᵀ b` so that
/// the conditioning is that of `J` rather than `J Jᵀ`. Square systems fall
/// back to a direct solve.
pub fn min_norm_solve(j: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if j.nrows() == j.ncols() {
        return solve_vector(j, b, what);
    }
    if j.nrows() > j.ncols() {
        return Err(FdcError::Config(format!(
            "{what}: {} constraints exceed {} free variables",
            j.nrows(),
            j.ncols()
        )));
    }
    let qr = j.transpose().qr();
    let r = qr.r();
    let cond = if r.nrows() <= SVD_CHECK_MAX {
        condition_number(&r)
    } else {
        let d = r.diagonal().abs();
        d.max() / d.min()
    };
    let singular = || FdcError::SingularMatrix { what: what.into(), cond };
    if !(cond < SINGULAR_COND) {
        return Err(singular());
    }
    let y = r.transpose().solve_lower_triangular(b).ok_or_else(singular)?;
    Ok(qr.q() * y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_norm_is_orthogonal_to_null_space() {
        let j = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = min_norm_solve(&j, &b, "test").unwrap();
        assert!((&j * &x - &b).norm() < 1e-14);
        // x lies in the row space of J.
        let proj = j.transpose() * (j.clone() * j.transpose()).try_inverse().unwrap() * &j * &x;
        assert!((proj - &x).norm() < 1e-14);
    }

    #[test]
    fn large_min_norm_solve_uses_the_same_identity() {
        let (m, n) = (300, 330);
        let j = DMatrix::from_fn(m, n, |r, c| if r == c { 2.0 } else { ((r * 7 + c * 13) % 11) as f64 * 1e-3 });
        let b = DVector::from_fn(m, |r, _| (r as f64).sin());
        let x = min_norm_solve(&j, &b, "large").unwrap();
        assert!((&j * &x - &b).amax() < 1e-12);
    }

    #[test]
    fn singular_is_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let e = solve_vector(&a, &DVector::from_vec(vec![1.0, 1.0]), "rank one").unwrap_err();
        assert!(matches!(e, FdcError::SingularMatrix { .. }));
    }

    #[test]
    fn min_norm_survives_a_squared_condition_beyond_double_precision() {
        // cond(J) ~ 1e9, so cond(J Jᵀ) ~ 1e18.
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 1.0, 1.0 + 1e-9, 0.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let x = min_norm_solve(&j, &b, "ill").unwrap();
        assert!((&j * &x - &b).amax() < 1e-6);
        assert_eq!(x[2], 0.0);
    }

    #[test]
    fn overdetermined_is_a_config_error() {
        let j = DMatrix::<f64>::identity(3, 2);
        assert!(min_norm_solve(&j, &DVector::zeros(3), "x").unwrap_err().is_config());
    }
}
