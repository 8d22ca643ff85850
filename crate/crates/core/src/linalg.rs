//! Small dense linear-algebra helpers: jittered Cholesky and structure-aware products.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{numerical, Result};
use crate::scalar::Scalar;

/// Number of jitter doublings attempted after the first jittered retry.
pub const JITTER_DOUBLINGS: usize = 3;

/// A Cholesky factorization together with the diagonal jitter that was needed.
#[derive(Debug, Clone)]
pub struct Factor<T: Scalar> {
    pub chol: Cholesky<T, Dyn>,
    pub jitter: T,
}

impl<T: Scalar> Factor<T> {
    pub fn log_det(&self) -> T {
        let l = self.chol.l_dirty();
        let mut acc = T::zero();
        for i in 0..l.nrows() {
            acc += l[(i, i)].ln();
        }
        acc + acc
    }

    pub fn solve(&self, rhs: &DVector<T>) -> DVector<T> {
        self.chol.solve(rhs)
    }

    pub fn lower(&self) -> DMatrix<T> {
        self.chol.l()
    }
}

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factorization with the diagonal-jitter fallback.
///
/// On failure, `JITTER · trace/n · I` is added (scale 1 when the trace is not
/// positive) and the factorization retried with the jitter doubled up to
/// [`JITTER_DOUBLINGS`] times.
pub fn cholesky_jittered<T: Scalar>(m: &DMatrix<T>) -> Result<Factor<T>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(numerical(format!("cannot factor non-square {}x{} matrix", n, m.ncols())));
    }
    if m.iter().any(|v| !v.finite()) {
        return Err(numerical("matrix to factor has non-finite entries"));
    }
    if let Some(chol) = Cholesky::new(m.clone()) {
        return Ok(Factor { chol, jitter: T::zero() });
    }
    let mean_diag = m.trace() / T::from_usize_lossy(n.max(1));
    let scale = if mean_diag > T::zero() { mean_diag } else { T::one() };
    let mut jitter = T::JITTER * scale;
    for _ in 0..=JITTER_DOUBLINGS {
        let mut shifted = m.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(shifted) {
            return Ok(Factor { chol, jitter });
        }
        jitter += jitter;
    }
    Err(numerical(format!(
        "{n}x{n} matrix is not positive definite after jitter {}",
        jitter.as_f64()
    )))
}

/// True when every off-diagonal entry is exactly zero.
pub fn is_diagonal<T: Scalar>(m: &DMatrix<T>) -> bool {
    let (r, c) = m.shape();
    (0..c).all(|j| (0..r).all(|i| i == j || m[(i, j)] == T::zero()))
}

/// `h · b`, skipping the exact zeros of `h`.
///
/// Observation Jacobians of the benchmark models are very sparse (diagonal or
/// touching only position components), which makes `H P` and `H (P Hᵀ)` cheap.
pub fn sparse_left_mul<T: Scalar>(h: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    assert_eq!(h.ncols(), b.nrows(), "inner dimensions must agree");
    let (m, k) = h.shape();
    let n = b.ncols();
    let mut out = DMatrix::zeros(m, n);
    for j in 0..k {
        for i in 0..m {
            let hij = h[(i, j)];
            if hij == T::zero() {
                continue;
            }
            for c in 0..n {
                out[(i, c)] += hij * b[(j, c)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_rescues_singular_matrix() {
        let m = DMatrix::<f64>::from_element(2, 2, 1.0);
        let f = cholesky_jittered(&m).unwrap();
        assert!(f.jitter > 0.0);
        assert!(f.jitter <= 8e-9);
    }

    #[test]
    fn zero_matrix_gets_absolute_jitter() {
        let m = DMatrix::<f64>::zeros(3, 3);
        let f = cholesky_jittered(&m).unwrap();
        assert_eq!(f.jitter, 1e-9);
        let l = f.lower();
        assert!((l[(0, 0)] * l[(0, 0)] - 1e-9).abs() < 1e-20);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky_jittered(&m).is_err());
        let nan = DMatrix::<f64>::from_element(1, 1, f64::NAN);
        assert!(cholesky_jittered(&nan).is_err());
    }

    #[test]
    fn log_det_matches_determinant() {
        let m = DMatrix::<f64>::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = cholesky_jittered(&m).unwrap();
        assert!((f.log_det() - 11.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn sparse_product_equals_dense() {
        let h = DMatrix::<f64>::from_row_slice(2, 3, &[1.0, 0.0, 2.0, 0.0, -1.0, 0.0]);
        let b = DMatrix::<f64>::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 3.5);
        assert_eq!(sparse_left_mul(&h, &b), &h * &b);
    }

    #[test]
    fn symmetrize_averages_off_diagonal() {
        let mut m = DMatrix::<f64>::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 1.0]);
        symmetrize(&mut m);
        assert_eq!(m[(0, 1)], 3.0);
        assert_eq!(m[(1, 0)], 3.0);
    }
}
