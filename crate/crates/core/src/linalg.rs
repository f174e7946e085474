//! Dense linear-algebra helpers shared by the engine and the DDF rules.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values of `m`, largest first.
///
/// Tall matrices are reduced to their `R` factor first; `R` has the same
/// singular values and the SVD then runs on a `cols x cols` problem.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("matrix has non-finite entries".into()));
    }
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Vec::new());
    }
    let reduced = if m.nrows() > 2 * m.ncols() {
        m.clone().qr().r()
    } else {
        m.clone()
    };
    let mut sv: Vec<f64> = reduced.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Numerical rank: the number of singular values above `tol`.
///
/// With `tol = None` the threshold is `max(rows, cols) * eps * sigma_max`.
pub fn numerical_rank(m: &DMatrix<f64>, tol: Option<f64>) -> Result<usize> {
    let sv = singular_values(m)?;
    let Some(&largest) = sv.first() else {
        return Ok(0);
    };
    let tol = tol.unwrap_or_else(|| m.nrows().max(m.ncols()) as f64 * f64::EPSILON * largest);
    Ok(sv.iter().filter(|&&s| s > tol).count())
}

/// Horizontal concatenation `[a b]`.
pub fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "hcat row mismatch");
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Solve `A x = b` for symmetric positive-definite `A`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().cholesky().map(|c| c.solve(b))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    a.clone().cholesky().map(|c| c.inverse())
}

/// Ratio of the smallest to the largest eigenvalue of a symmetric matrix.
/// Negative when the matrix is indefinite.
pub fn reciprocal_condition(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        return -1.0;
    }
    min / max
}

/// Indices of a maximal set of linearly independent columns, chosen greedily
/// left to right. A column is aliased when its residual after projecting on
/// the kept columns is below `rel_tol` times its own norm.
pub fn independent_columns(m: &DMatrix<f64>, rel_tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for j in 0..m.ncols() {
        let col = m.column(j).clone_owned();
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            continue;
        }
        let mut r = col;
        // two Gram-Schmidt passes for stability
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = r.norm();
        if rn > rel_tol * norm {
            basis.push(r / rn);
            kept.push(j);
        }
    }
    kept
}
