//! Small dense helpers shared by the samplers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative eigenvalue floor used for every SPD check.
pub(crate) const SPD_RELATIVE_TOL: f64 = 1e-10;

pub(crate) fn check_symmetric(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::dim(format!("{what} is {}x{}, expected square", a.nrows(), a.ncols())));
    }
    let scale = a.amax().max(1.0);
    for i in 0..a.nrows() {
        for j in (i + 1)..a.ncols() {
            if (a[(i, j)] - a[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::NotPositiveDefinite(format!("{what} is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub(crate) fn eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(a.clone());
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub(crate) fn is_spd(a: &DMatrix<f64>) -> bool {
    if check_symmetric(a, "matrix").is_err() || a.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let (min, max) = eigen_range(a);
    max > 0.0 && min > SPD_RELATIVE_TOL * max
}

pub(crate) fn require_spd(a: &DMatrix<f64>, what: &str) -> Result<()> {
    check_symmetric(a, what)?;
    if !is_spd(a) {
        return Err(Error::NotPositiveDefinite(format!("{what} has a non-positive eigenvalue")));
    }
    Ok(())
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Lower Cholesky factor. On failure returns the first column whose pivot
/// falls below `rel_tol` times the largest diagonal entry.
pub(crate) fn cholesky_lower(a: &DMatrix<f64>, rel_tol: f64) -> std::result::Result<DMatrix<f64>, usize> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let floor = rel_tol * max_diag.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return Err(j);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ x = b` given the lower factor.
pub(crate) fn cholesky_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let y = solve_lower(l, b);
    solve_upper_transposed(l, &y)
}

pub(crate) fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    y
}

/// Solves `Lᵀ x = y`.
pub(crate) fn solve_upper_transposed(l: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = l.nrows();
    let mut x = y.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

pub(crate) fn cholesky_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::<f64>::zeros(n, n);
    for c in 0..n {
        let mut e = DVector::<f64>::zeros(n);
        e[c] = 1.0;
        inv.set_column(c, &cholesky_solve(l, &e));
    }
    symmetrize(&mut inv);
    inv
}

/// Inverse of an SPD matrix, or an error naming `what`.
pub(crate) fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let l = cholesky_lower(a, 1e-14)
        .map_err(|c| Error::NotPositiveDefinite(format!("{what} is singular at column {c}")))?;
    Ok(cholesky_inverse(&l))
}

/// Least-squares coefficients of `y` on the columns of `x` (via normal equations).
pub(crate) fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> std::result::Result<DVector<f64>, usize> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    let l = cholesky_lower(&xtx, 1e-12)?;
    Ok(cholesky_solve(&l, &xty))
}
