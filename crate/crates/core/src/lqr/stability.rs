use nalgebra::DMatrix;
use serde::Serialize;

use super::sym::spectral_norm;

/// Empirical `(tau, rho)` certificate: `||X^k|| <= tau rho^k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub rho: f64,
    pub tau: f64,
}

const TAU_HORIZON: usize = 200;

pub fn spectral_radius(x: &DMatrix<f64>) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.complex_eigenvalues()
        .iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
}

/// `rho` is the spectral radius; `tau` is `max_k ||X^k||_2 / rho^k` over
/// `k <= 200`.
///
/// Powers that vanish exactly are skipped. A nonzero nilpotent matrix has
/// `rho = 0` and therefore an infinite `tau`.
pub fn stability_report(x: &DMatrix<f64>) -> StabilityReport {
    let rho = spectral_radius(x);
    let n = x.nrows();
    let mut tau: f64 = 1.0;
    let mut power = DMatrix::<f64>::identity(n, n);
    let mut rho_k = 1.0;
    for _ in 1..=TAU_HORIZON {
        power = &power * x;
        rho_k *= rho;
        let norm = spectral_norm(&power);
        if norm == 0.0 {
            break;
        }
        if rho_k == 0.0 {
            return StabilityReport {
                rho,
                tau: f64::INFINITY,
            };
        }
        tau = tau.max(norm / rho_k);
        if !tau.is_finite() {
            break;
        }
    }
    StabilityReport { rho, tau }
}
