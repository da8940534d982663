//! Small dense linear-algebra helpers shared by the estimators and tests.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Ratio of smallest to largest singular value below which a design is
/// treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Largest condition number accepted when a covariance matrix is inverted.
pub const MAX_CONDITION: f64 = 1e12;

/// Relative size of negative eigenvalues that PSD repair clamps to zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// `min σ / max σ` for the given matrix; zero for an all-zero matrix.
pub fn singular_value_ratio(m: &DMatrix<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    if max <= 0.0 || !max.is_finite() {
        return 0.0;
    }
    sv.min() / max
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Clamps eigenvalues in `[-tol * λ_max, 0)` to zero and rebuilds the matrix.
///
/// Anything more negative is reported as an error. A matrix that is already
/// PSD is returned unchanged (apart from exact symmetrization).
pub fn repair_psd(mut m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    symmetrize(&mut m);
    if m.nrows() == 0 {
        return Ok(m);
    }
    let eig = SymmetricEigen::new(m.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(m);
    }
    if min < -PSD_TOLERANCE * max.max(0.0) {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    let clamped = eig.eigenvalues.map(|l| l.max(0.0));
    let mut repaired =
        &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    symmetrize(&mut repaired);
    Ok(repaired)
}

/// Cholesky factor of a symmetric positive-definite matrix whose condition
/// number is at most [`MAX_CONDITION`].
pub fn guarded_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if min.is_nan() || max.is_nan() || min <= 0.0 || !max.is_finite() {
        return Err(Error::Conditioning(format!(
            "{what} is not positive definite (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    let cond = max / min;
    if cond > MAX_CONDITION {
        return Err(Error::Conditioning(format!(
            "{what} has condition number {cond:e} (limit {MAX_CONDITION:e})"
        )));
    }
    Cholesky::new(sym)
        .ok_or_else(|| Error::Conditioning(format!("{what}: Cholesky factorization failed")))
}

/// `v' M⁻¹ v` through a guarded Cholesky solve.
pub fn inverse_quadratic_form(m: &DMatrix<f64>, v: &DVector<f64>, what: &str) -> Result<f64> {
    if m.nrows() != v.len() || m.ncols() != v.len() {
        return Err(Error::Shape(format!(
            "{what}: {}x{} matrix against vector of length {}",
            m.nrows(),
            m.ncols(),
            v.len()
        )));
    }
    let chol = guarded_cholesky(m, what)?;
    let solved = chol.solve(v);
    Ok(v.dot(&solved).max(0.0))
}

/// Relative Frobenius distance `‖a − b‖ / max(‖b‖, tiny)`.
pub fn relative_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}
