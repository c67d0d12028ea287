//! Small dense complex linear-algebra helpers shared by the AMMSE formulas and
//! the conic layer.
//!
//! Complex Hermitian `n×n` matrices are carried into real semidefinite programs
//! through the embedding
//!
//! ```text
//!          [ Re Q  -Im Q ]
//! emb(Q) = [             ]
//!          [ Im Q   Re Q ]
//! ```
//!
//! which is symmetric, PSD iff `Q` is PSD, and satisfies
//! `tr(emb(A) emb(B)) = 2 Re tr(A B)`. Each eigenvalue of `Q` appears twice in
//! `emb(Q)`, so a complex rank-1 matrix becomes a real rank-2 block.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Asymmetry above which [`symmetrize`] logs a warning.
pub const HERMITIAN_WARN_TOL: f64 = 1e-8;

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// `xᴴ A y`.
pub fn sesquilinear(x: &CVector, a: &CMatrix, y: &CVector) -> Complex64 {
    x.dotc(&(a * y))
}

/// Real part of `xᴴ A x`; exact for Hermitian `A` up to rounding.
pub fn quad_form(x: &CVector, a: &CMatrix) -> f64 {
    sesquilinear(x, a, x).re
}

/// `tr(A B)` without forming the product.
pub fn trace_product(a: &CMatrix, b: &CMatrix) -> Complex64 {
    let n = a.nrows();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Largest entry of `|A - Aᴴ|`.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Returns `(A + Aᴴ)/2`, warning when the input was noticeably non-Hermitian.
pub fn symmetrize(a: &CMatrix) -> CMatrix {
    let defect = hermitian_defect(a);
    if defect > HERMITIAN_WARN_TOL * (1.0 + a.norm()) {
        log::warn!("symmetrizing matrix with Hermitian defect {defect:.3e}");
    }
    (a + a.adjoint()).scale(0.5)
}

/// Rejects matrices that are not square or clearly not Hermitian.
pub fn check_hermitian(a: &CMatrix, tol: f64) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension {
            expected: a.nrows(),
            actual: a.ncols(),
        });
    }
    let defect = hermitian_defect(a);
    if defect > tol * (1.0 + a.norm()) {
        return Err(Error::NotHermitian(defect));
    }
    Ok(())
}

/// `x xᴴ`.
pub fn outer(x: &CVector) -> CMatrix {
    x * x.adjoint()
}

/// Real symmetric `2n×2n` embedding of a complex `n×n` matrix.
pub fn embed_hermitian(q: &CMatrix) -> DMatrix<f64> {
    let n = q.nrows();
    let mut out = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = q[(i, j)];
            out[(i, j)] = z.re;
            out[(i + n, j + n)] = z.re;
            out[(i, j + n)] = -z.im;
            out[(i + n, j)] = z.im;
        }
    }
    out
}

/// Inverse of [`embed_hermitian`].
///
/// A real block returned by a solver need not have the exact
/// `[[R, -I], [I, R]]` structure; averaging the two copies projects it onto
/// the embedded subspace, which preserves every trace against embedded
/// coefficient matrices and preserves semidefiniteness.
pub fn unembed_hermitian(x: &DMatrix<f64>) -> Result<CMatrix> {
    let m = x.nrows();
    if m != x.ncols() || m % 2 != 0 {
        return Err(Error::Dimension {
            expected: m + (m % 2),
            actual: x.ncols(),
        });
    }
    let n = m / 2;
    Ok(CMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (x[(i, j)] + x[(i + n, j + n)]);
        let im = 0.5 * (x[(i + n, j)] - x[(i, j + n)]);
        c(re, im)
    }))
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted descending.
pub fn hermitian_eigen(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = symmetrize(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(a.nrows(), order.len(), |r, col| eig.eigenvectors[(r, order[col])]);
    (values, vectors)
}

/// Leading eigenvalue and unit eigenvector.
pub fn principal_eigenpair(a: &CMatrix) -> (f64, CVector) {
    let (values, vectors) = hermitian_eigen(a);
    (values[0], vectors.column(0).into_owned())
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    let (values, _) = hermitian_eigen(a);
    values.last().copied().unwrap_or(0.0)
}

/// `Σ |z_i|²`.
pub fn norm_sqr(x: &CVector) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}
