//! Sample-complexity calculators for the direct and indirect estimators.
//!
//! The bounds carry an unidentified absolute constant (polylog factors);
//! it is exposed as [`BoundInputs::constant`] and defaults to 1, so only
//! ratios and trends of the outputs are meaningful. `||M||_+` denotes
//! `||M|| + 1` with spectral norms throughout.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::AgentSet;
use crate::lqr::{
    extract_subsystem, lyapunov_solve, spectral_norm, stability_report, state_indices, true_q_matrix,
    Closure, MultiAgentSystem, StructuredPolicy,
};

/// Model quantities of one index set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetBoundTerms {
    pub state_dim: usize,
    pub control_dim: usize,
    pub tau: f64,
    pub rho: f64,
    pub a_norm: f64,
    pub b_norm: f64,
    /// `||K_set||` (the `+1` is added internally).
    pub k_norm: f64,
    pub k_play_norm: f64,
    pub sigma0_norm: f64,
    /// `||L(A+BK, sigma_w^2 I + sigma_eta^2 B B^T)||`.
    pub p_inf_norm: f64,
    pub q_true_fro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundInputs {
    pub sigma_w: f64,
    pub sigma_eta: f64,
    /// Target accuracy for the sample-count estimate.
    pub epsilon: f64,
    #[serde(default = "default_constant")]
    pub constant: f64,
    /// One entry for the direct bound; one per member of `I^i_GD` for the
    /// indirect bound.
    pub terms: Vec<SetBoundTerms>,
    /// Indirect weights `w_j`; proportional to `||Q_j||_F` when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
}

fn default_constant() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub sigma_bar: f64,
    /// Lower bound on `T` for the error guarantee to apply.
    pub t_min: f64,
    /// `err(T) = error_coefficient / sqrt(T)`.
    pub error_coefficient: f64,
    /// Samples sufficient for `epsilon` accuracy.
    pub t_epsilon: f64,
}

impl BoundReport {
    pub fn error_at(&self, t: f64) -> f64 {
        self.error_coefficient / t.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndirectBoundReport {
    pub t_min: f64,
    pub error_coefficient: f64,
    pub t_epsilon: f64,
    pub weights: Vec<f64>,
    pub members: Vec<BoundReport>,
}

impl IndirectBoundReport {
    pub fn error_at(&self, t: f64) -> f64 {
        self.error_coefficient / t.sqrt()
    }
}

fn check_common(inputs: &BoundInputs) -> Result<()> {
    let pre = |msg: String| Err(Error::BoundPrecondition(msg));
    if !(inputs.sigma_eta > 0.0) || !(inputs.sigma_w > 0.0) {
        return pre("sigma_w and sigma_eta must be positive".into());
    }
    if inputs.sigma_eta > inputs.sigma_w {
        return pre(format!(
            "sigma_eta ({}) must not exceed sigma_w ({})",
            inputs.sigma_eta, inputs.sigma_w
        ));
    }
    if !(inputs.epsilon > 0.0) || !(inputs.constant > 0.0) {
        return pre("epsilon and the constant must be positive".into());
    }
    if inputs.terms.is_empty() {
        return pre("at least one set of terms is required".into());
    }
    for t in &inputs.terms {
        if !(t.rho > 0.0 && t.rho < 1.0) {
            return pre(format!("rho must lie in (0, 1), got {}", t.rho));
        }
        if !(t.tau >= 1.0) || !t.tau.is_finite() {
            return pre(format!("tau must be finite and at least 1, got {}", t.tau));
        }
    }
    Ok(())
}

struct Parts {
    sigma_bar: f64,
    /// `||Kplay||_+^2 sigma_w sigma_bar tau^2 ||K||_+^4 (||A||^2+||B||^2) / (rho^2 (1-rho^2))`.
    w: f64,
    n: f64,
    nx: f64,
}

fn parts(inputs: &BoundInputs, t: &SetBoundTerms) -> Parts {
    let sw = inputs.sigma_w;
    let se = inputs.sigma_eta;
    let sigma_bar = (t.tau * t.tau * t.rho.powi(4) * t.sigma0_norm + t.p_inf_norm + sw * sw + se * se * t.b_norm * t.b_norm)
        .sqrt();
    let kp = t.k_play_norm + 1.0;
    let k = t.k_norm + 1.0;
    let ab = t.a_norm * t.a_norm + t.b_norm * t.b_norm;
    let rr = t.rho * t.rho * (1.0 - t.rho * t.rho);
    let w = kp * kp * sw * sigma_bar * t.tau * t.tau * k.powi(4) * ab / rr;
    Parts {
        sigma_bar,
        w,
        n: (t.state_dim + t.control_dim) as f64,
        nx: t.state_dim as f64,
    }
}

fn member_report(inputs: &BoundInputs, t: &SetBoundTerms, weight: f64) -> BoundReport {
    let c = inputs.constant;
    let se4 = inputs.sigma_eta.powi(4);
    let p = parts(inputs, t);
    // The second term of the T lower bound equals nx^2 n^2 W^2 / sigma_eta^4.
    let t_min = c * (p.n * p.n).max(p.nx * p.nx * p.n * p.n * p.w * p.w / se4);
    let error_coefficient = c * p.n * p.w * t.q_true_fro / (inputs.sigma_eta * inputs.sigma_eta);
    let q_scaled = t.q_true_fro / weight;
    let t_epsilon = (c * c * p.w * p.w * p.n.powi(3) * q_scaled * q_scaled / (se4 * inputs.epsilon * inputs.epsilon))
        .max(c * p.w * p.w * p.nx * p.nx * p.n * p.n / se4);
    BoundReport {
        sigma_bar: p.sigma_bar,
        t_min,
        error_coefficient,
        t_epsilon,
    }
}

/// Bound for a single regression over the direct set.
pub fn sample_bound_direct(inputs: &BoundInputs) -> Result<BoundReport> {
    check_common(inputs)?;
    if inputs.terms.len() != 1 {
        return Err(Error::BoundPrecondition(format!(
            "the direct bound takes exactly one set of terms, got {}",
            inputs.terms.len()
        )));
    }
    Ok(member_report(inputs, &inputs.terms[0], 1.0))
}

/// Bound for the sum of per-member regressions: `T_min` is the largest
/// member requirement, the error coefficient is the sum over members, and
/// the epsilon sample count uses `||Q_j|| / w_j`.
pub fn sample_bound_indirect(inputs: &BoundInputs) -> Result<IndirectBoundReport> {
    check_common(inputs)?;
    let weights = match &inputs.weights {
        Some(w) => {
            if w.len() != inputs.terms.len() {
                return Err(Error::BoundPrecondition(format!(
                    "{} weights for {} members",
                    w.len(),
                    inputs.terms.len()
                )));
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|v| !(*v > 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::BoundPrecondition(format!(
                    "weights must be positive and sum to 1, got sum {sum}"
                )));
            }
            w.clone()
        }
        None => {
            let total: f64 = inputs.terms.iter().map(|t| t.q_true_fro).sum();
            if !(total > 0.0) {
                return Err(Error::BoundPrecondition(
                    "default weights need a positive total ||Q_j||".into(),
                ));
            }
            inputs.terms.iter().map(|t| t.q_true_fro / total).collect()
        }
    };
    let members: Vec<BoundReport> = inputs
        .terms
        .iter()
        .zip(&weights)
        .map(|(t, w)| member_report(inputs, t, *w))
        .collect();
    Ok(IndirectBoundReport {
        t_min: members.iter().map(|m| m.t_min).fold(0.0, f64::max),
        error_coefficient: members.iter().map(|m| m.error_coefficient).sum(),
        t_epsilon: members.iter().map(|m| m.t_epsilon).fold(0.0, f64::max),
        weights,
        members,
    })
}

impl SetBoundTerms {
    /// Evaluates every model quantity on `set` for the summed cost of
    /// `owners`.
    pub fn from_model(
        system: &MultiAgentSystem,
        policy: &StructuredPolicy,
        play: &StructuredPolicy,
        set: &AgentSet,
        owners: &AgentSet,
        initial_cov: &DMatrix<f64>,
        sigma_eta: f64,
    ) -> Result<Self> {
        let sub = extract_subsystem(system, policy, set, owners, Closure::Skip)?;
        let closed = sub.closed_loop();
        let stab = stability_report(&closed);
        let sw2 = system.sigma_w() * system.sigma_w();
        let n = sub.state_dim();
        let noise = DMatrix::identity(n, n) * sw2 + &sub.b * sub.b.transpose() * (sigma_eta * sigma_eta);
        let p_inf = lyapunov_solve(&closed, &noise)?;
        let q = true_q_matrix(&sub)?;
        let idx = state_indices(set, system.n_x());
        let sigma0 = initial_cov.select_rows(&idx).select_columns(&idx);
        Ok(SetBoundTerms {
            state_dim: n,
            control_dim: sub.control_dim(),
            tau: stab.tau,
            rho: stab.rho,
            a_norm: spectral_norm(&sub.a),
            b_norm: spectral_norm(&sub.b),
            k_norm: spectral_norm(&sub.k),
            k_play_norm: spectral_norm(&play.restricted(set)),
            sigma0_norm: spectral_norm(&sigma0),
            p_inf_norm: spectral_norm(&p_inf),
            q_true_fro: q.norm(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms(state_dim: usize) -> SetBoundTerms {
        SetBoundTerms {
            state_dim,
            control_dim: state_dim,
            tau: 1.5,
            rho: 0.8,
            a_norm: 1.0,
            b_norm: 1.0,
            k_norm: 0.5,
            k_play_norm: 0.0,
            sigma0_norm: 1.0,
            p_inf_norm: 3.0,
            q_true_fro: 10.0,
        }
    }

    fn inputs(t: Vec<SetBoundTerms>) -> BoundInputs {
        BoundInputs {
            sigma_w: 1.0,
            sigma_eta: 1.0,
            epsilon: 0.1,
            constant: 1.0,
            terms: t,
            weights: None,
        }
    }

    #[test]
    fn error_scales_as_inverse_root() {
        let r = sample_bound_direct(&inputs(vec![terms(3)])).unwrap();
        let ratio = r.error_at(2000.0) / r.error_at(1000.0);
        assert!((ratio - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn preconditions() {
        let mut bad = inputs(vec![terms(3)]);
        bad.sigma_eta = 2.0;
        assert!(matches!(sample_bound_direct(&bad), Err(Error::BoundPrecondition(_))));
        let mut bad = inputs(vec![terms(3)]);
        bad.terms[0].rho = 1.0;
        assert!(sample_bound_direct(&bad).is_err());
        let mut bad = inputs(vec![terms(3)]);
        bad.terms[0].tau = 0.5;
        assert!(sample_bound_direct(&bad).is_err());
        let mut bad = inputs(vec![terms(3), terms(3)]);
        bad.weights = Some(vec![0.5, 0.6]);
        assert!(sample_bound_indirect(&bad).is_err());
        assert!(sample_bound_direct(&inputs(vec![terms(3), terms(3)])).is_err());
    }

    #[test]
    fn single_member_indirect_equals_direct() {
        let i = inputs(vec![terms(6)]);
        let d = sample_bound_direct(&i).unwrap();
        let ind = sample_bound_indirect(&i).unwrap();
        assert_eq!(ind.t_min, d.t_min);
        assert_eq!(ind.error_coefficient, d.error_coefficient);
        assert_eq!(ind.t_epsilon, d.t_epsilon);
    }
}
