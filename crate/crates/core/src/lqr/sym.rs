//! Symmetric matrix vectorization and a few dense helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Length of `svec` for an `n x n` matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Inverse of [`svec_len`]; errors if `len` is not triangular.
pub fn triangular_side(len: usize) -> Result<usize> {
    // n = (sqrt(8 len + 1) - 1) / 2, then confirm exactly.
    let guess = (((8 * len + 1) as f64).sqrt() as usize).saturating_sub(1) / 2;
    for n in guess.saturating_sub(1)..=guess + 1 {
        if svec_len(n) == len {
            return Ok(n);
        }
    }
    Err(Error::NotTriangular(len))
}

fn require_square(m: &DMatrix<f64>) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Upper triangle of `m` stacked column by column (for column `j`, rows
/// `0..=j`), with off-diagonal entries scaled by `sqrt(2)` so that
/// `svec(a) . svec(b) = tr(a b)`.
///
/// The input is symmetrized as `(m + m^T) / 2` first.
pub fn svec(m: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = require_square(m)?;
    let mut out = DVector::zeros(svec_len(n));
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            out[k] = if i == j {
                m[(i, i)]
            } else {
                SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)])
            };
            k += 1;
        }
    }
    Ok(out)
}

/// Inverse of [`svec`].
pub fn smat(v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = triangular_side(v.len())?;
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    Ok(m)
}

/// `svec(z z^T)` written straight into `out` without forming the outer product.
pub(crate) fn svec_outer_into(z: &[f64], out: &mut [f64]) {
    let mut k = 0;
    for j in 0..z.len() {
        for i in 0..j {
            out[k] = SQRT_2 * z[i] * z[j];
            k += 1;
        }
        out[k] = z[j] * z[j];
        k += 1;
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Block-diagonal matrix with `a` then `b`.
pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// `[I; K]`, the map from state to (state, on-policy action).
pub fn stack_identity(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.ncols();
    let mut out = DMatrix::zeros(n + k.nrows(), n);
    out.view_mut((0, 0), (n, n)).fill_with_identity();
    out.view_mut((n, 0), k.shape()).copy_from(k);
    out
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clamped).
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(m).symmetric_eigen();
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}
