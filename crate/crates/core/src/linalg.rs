//! Small dense linear-algebra helpers layered over nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Cholesky factorization with the diagonal jitter policy used by the
/// surrogate step: try the matrix as is, then add `c * (1 + max diag) * I`
/// for `c = 1e-8, 1e-7, ..., 1e-2`.
///
/// Returns the factor and the jitter that was added (zero when none).
pub fn cholesky_with_jitter<T: Real>(h: &DMatrix<T>) -> Result<(Cholesky<T, Dyn>, T)> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Ok((c, T::zero()));
    }
    let max_diag = h
        .diagonal()
        .iter()
        .fold(T::zero(), |m, &d| if d.abs() > m { d.abs() } else { m });
    let base = T::one() + max_diag;
    let mut coef = T::lit(1e-8);
    let cap = T::lit(1e-2) * (T::one() + T::lit(1e-9));
    while coef <= cap {
        let jitter = coef * base;
        let mut hj = h.clone();
        for i in 0..hj.nrows() {
            hj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(hj) {
            return Ok((c, jitter));
        }
        coef *= T::lit(10.0);
    }
    Err(Error::IndefiniteSurrogate)
}

/// Solves `m * out = rhs` for symmetric positive definite `m`.
pub fn spd_solve<T: Real>(m: &DMatrix<T>, rhs: &DMatrix<T>) -> Option<DMatrix<T>> {
    Cholesky::new(m.clone()).map(|c| c.solve(rhs))
}

/// Solves a general square system through LU.
pub fn lu_solve<T: Real>(m: &DMatrix<T>, rhs: &DVector<T>) -> Option<DVector<T>> {
    m.clone().lu().solve(rhs)
}

/// Ratio of largest to smallest absolute eigenvalue of a symmetric matrix.
pub fn condition_number_sym<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::one();
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut lo = T::max_value().unwrap_or(T::lit(f64::MAX));
    let mut hi = T::zero();
    for &e in eig.eigenvalues.iter() {
        let a = e.abs();
        if a < lo {
            lo = a;
        }
        if a > hi {
            hi = a;
        }
    }
    if lo <= T::zero() {
        T::lit(f64::INFINITY)
    } else {
        hi / lo
    }
}

/// Symmetric inverse square root `V diag(1/sqrt(l)) V^T` of an SPD matrix.
pub fn symmetric_inverse_sqrt<T: Real>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&e| e <= T::zero()) {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| T::one() / e.sqrt()));
    Some(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Columns of `x` listed in `idx`, in order.
pub fn select_columns<T: Real>(x: &DMatrix<T>, idx: &[usize]) -> DMatrix<T> {
    DMatrix::from_fn(x.nrows(), idx.len(), |i, j| x[(i, idx[j])])
}

/// Entries of `v` listed in `idx`, in order.
pub fn select_entries<T: Real>(v: &DVector<T>, idx: &[usize]) -> DVector<T> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// `X^T diag(w) X` without forming the diagonal matrix.
pub fn weighted_gram<T: Real>(x: &DMatrix<T>, w: &DVector<T>) -> DMatrix<T> {
    let mut xw = x.clone();
    for (mut row, &wi) in xw.row_iter_mut().zip(w.iter()) {
        row *= wi;
    }
    x.tr_mul(&xw)
}

/// Symmetrizes in place by averaging with the transpose.
pub fn symmetrize<T: Real>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let a = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = a;
            m[(j, i)] = a;
        }
    }
}
