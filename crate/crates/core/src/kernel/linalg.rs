//! Small dense symmetric-matrix helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetry check relative to the largest absolute entry.
pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let scale = m.amax().max(1.0);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Frobenius projection onto `{A : λ_min(A) ≥ eps}`: eigenvalues below `eps`
/// are raised to `eps`.
pub fn sym_eig_clip(matrix: &DMatrix<f64>, eps: f64) -> Result<DMatrix<f64>> {
    if !matrix.is_square() {
        return Err(Error::Dimension { expected: matrix.nrows(), got: matrix.ncols() });
    }
    let asym = max_asymmetry(matrix);
    if asym > 1e-10 {
        return Err(Error::NotSymmetric(asym));
    }
    let mut sym = matrix.clone();
    symmetrize(&mut sym);
    // Feasible inputs are returned untouched.
    if min_eigenvalue_at_least(&sym, eps) {
        return Ok(sym);
    }
    let eig = SymmetricEigen::new(sym);
    let clipped = eig.eigenvalues.map(|l| l.max(eps));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    symmetrize(&mut out);
    Ok(out)
}

/// True when `A − eps·I` admits a Cholesky factorization with a margin.
pub fn min_eigenvalue_at_least(a: &DMatrix<f64>, eps: f64) -> bool {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * eps;
    match nalgebra::Cholesky::new(shifted) {
        Some(ch) => ch.l_dirty().diagonal().iter().all(|d| *d > 0.0 && d.is_finite()),
        None => false,
    }
}

/// Upper-triangular `R` with positive diagonal and `RᵀR = A`.
pub fn cholesky_factor(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !matrix.is_square() {
        return Err(Error::Dimension { expected: matrix.nrows(), got: matrix.ncols() });
    }
    let n = matrix.nrows();
    let mut r = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = matrix[(j, j)];
        for k in 0..j {
            d -= r[(k, j)] * r[(k, j)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite);
        }
        let rjj = d.sqrt();
        r[(j, j)] = rjj;
        for i in (j + 1)..n {
            let mut s = matrix[(j, i)];
            for k in 0..j {
                s -= r[(k, j)] * r[(k, i)];
            }
            r[(j, i)] = s / rjj;
        }
    }
    Ok(r)
}

/// `(A + λI)⁻¹` with `λ = 1e-10 · trace(A)/p` (or `1e-10` when the trace vanishes).
pub fn spd_inverse_ridge(matrix: &DMatrix<f64>) -> DMatrix<f64> {
    let p = matrix.nrows();
    let trace = matrix.trace();
    let lambda = if trace.abs() > 0.0 { 1e-10 * trace.abs() / p as f64 } else { 1e-10 };
    let mut reg = matrix.clone();
    symmetrize(&mut reg);
    for i in 0..p {
        reg[(i, i)] += lambda;
    }
    if let Some(ch) = nalgebra::Cholesky::new(reg.clone()) {
        let mut inv = ch.inverse();
        symmetrize(&mut inv);
        return inv;
    }
    // Indefinite input: fall back to a clipped spectral inverse.
    let eig = SymmetricEigen::new(reg);
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l.abs().max(lambda));
    let mut inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    symmetrize(&mut inv);
    inv
}
