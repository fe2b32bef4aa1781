//! Discrete-time Lyapunov equation `P = X P X^T + Y`.

use nalgebra::DMatrix;

use super::stability::spectral_radius;
use super::sym::symmetrize;
use crate::error::{Error, Result};

/// Above this size the `n^2 x n^2` Kronecker system gets expensive and the
/// doubling iteration is used instead.
const KRONECKER_MAX_DIM: usize = 32;

/// Solves `P = X P X^T + Y` for stable `X`.
///
/// Small problems go through the vectorized system
/// `(I - X (x) X) vec(P) = vec(Y)`; larger ones use Smith doubling, whose
/// residual is checked before returning.
pub fn lyapunov_solve(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    if x.ncols() != n {
        return Err(Error::NotSquare {
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    if y.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "lyapunov: X is {n}x{n} but Y is {}x{}",
            y.nrows(),
            y.ncols()
        )));
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let rho = spectral_radius(x);
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    let y = symmetrize(y);
    let p = if n <= KRONECKER_MAX_DIM {
        kronecker(x, &y)?
    } else {
        doubling(x, &y)
    };
    let p = symmetrize(&p);
    let resid = (&p - x * &p * x.transpose() - &y).norm();
    if resid > 1e-9 * (1.0 + y.norm()) {
        // Kronecker LU can lose accuracy when rho is close to one; polish
        // with a few doubling sweeps seeded from the current answer.
        let refined = symmetrize(&refine(x, &y, &p));
        let r2 = (&refined - x * &refined * x.transpose() - &y).norm();
        if r2 < resid {
            return Ok(refined);
        }
    }
    Ok(p)
}

fn kronecker(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    let nn = n * n;
    // Column-major vec: vec(X P X^T) = (X (x) X) vec(P).
    let mut lhs = x.kronecker(x);
    lhs.neg_mut();
    for k in 0..nn {
        lhs[(k, k)] += 1.0;
    }
    let rhs = nalgebra::DVector::from_column_slice(y.as_slice());
    let sol = lhs
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Unstable { rho: spectral_radius(x) })?;
    Ok(DMatrix::from_column_slice(n, n, sol.as_slice()))
}

/// Smith doubling: `P_{k+1} = P_k + X_k P_k X_k^T`, `X_{k+1} = X_k^2`.
fn doubling(x: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = y.clone();
    let mut a = x.clone();
    for _ in 0..64 {
        let step = &a * &p * a.transpose();
        let done = step.norm() <= 1e-16 * p.norm().max(1e-300);
        p += step;
        a = &a * &a;
        if done {
            break;
        }
    }
    p
}

/// Error correction: solve for `E` with the residual as right-hand side.
fn refine(x: &DMatrix<f64>, y: &DMatrix<f64>, p: &DMatrix<f64>) -> DMatrix<f64> {
    let r = y + x * p * x.transpose() - p;
    p + doubling(x, &r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_dynamics_returns_rhs() {
        let y = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let p = lyapunov_solve(&DMatrix::zeros(2, 2), &y).unwrap();
        assert!((p - y).norm() < 1e-14);
    }

    #[test]
    fn scalar_geometric_series() {
        let p = lyapunov_solve(&DMatrix::from_element(1, 1, 0.5), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert!((p[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn unstable_is_rejected() {
        let err = lyapunov_solve(&DMatrix::from_element(1, 1, 1.5), &DMatrix::identity(1, 1)).unwrap_err();
        assert!(matches!(err, Error::Unstable { rho } if (rho - 1.5).abs() < 1e-12));
    }

    #[test]
    fn doubling_path_for_large_systems() {
        let n = 40;
        let x = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                0.6
            } else if j == i + 1 {
                0.3
            } else {
                0.0
            }
        });
        let y = DMatrix::identity(n, n);
        let p = lyapunov_solve(&x, &y).unwrap();
        let resid = (&p - &x * &p * x.transpose() - &y).norm();
        assert!(resid < 1e-9 * (1.0 + y.norm()), "residual {resid}");
    }
}
