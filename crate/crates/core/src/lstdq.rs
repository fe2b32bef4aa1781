//! Least-squares temporal-difference estimation of quadratic Q-functions.
//!
//! For an index set with `m = (n_x + n_u) |set|` coordinates the Q-function
//! is `z^T Q z` with `z = [x_set; u_set]`, parameterized by `q = svec(Q)` of
//! length `d = m (m + 1) / 2`. The average-cost fixed point
//!
//! ```text
//! c_t = (phi_t - psi_{t+1} + f) . q
//! ```
//!
//! is solved in the least-squares sense with `phi_t` as instruments.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::AgentSet;
use crate::lqr::{
    control_indices, smat, stack_identity, state_indices, svec, svec_len, svec_outer_into,
    symmetrize, Closure, MultiAgentSystem, StructuredPolicy, TrajectoryBatch,
};

/// Relative pivot below which the regression operator counts as singular.
pub const SINGULAR_THRESHOLD: f64 = 1e-10;

/// Default eigenvalue floor for the PSD projection.
pub const DEFAULT_ZETA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionBundle {
    pub index_set: AgentSet,
    /// `T x d`, row `t` is `svec(z_t z_t^T)` with the logged action.
    pub phi: DMatrix<f64>,
    /// `T x d`, row `t` is `svec(z'_t z'_t^T)` with `z'_t = [x(t+1); K x(t+1)]`.
    pub psi_plus: DMatrix<f64>,
    /// The constant noise-correction row `svec(sigma_w^2 [I;K][I;K]^T)`.
    pub f_row: DVector<f64>,
    /// Summed raw costs of the cost owners at each step.
    pub c_hat: DVector<f64>,
}

impl RegressionBundle {
    pub fn samples(&self) -> usize {
        self.phi.nrows()
    }

    pub fn features(&self) -> usize {
        self.phi.ncols()
    }

    /// Full `T x d` matrix `F` (every row equals `f_row`).
    pub fn f_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.samples(), self.features(), |_, k| self.f_row[k])
    }
}

/// Builds the regression for `index_set` from a logged trajectory.
///
/// `eval_policy` supplies the next-step action through its restriction to
/// the set; `cost_owners` are the agents whose raw local costs are summed
/// into the target. With [`Closure::Require`] the set must be closed under
/// reachability, which is what makes the restricted Bellman equation exact.
pub fn build_regression(
    batch: &TrajectoryBatch,
    system: &MultiAgentSystem,
    eval_policy: &StructuredPolicy,
    index_set: &AgentSet,
    cost_owners: &AgentSet,
    closure: Closure,
) -> Result<RegressionBundle> {
    let graphs = system.graphs();
    for a in index_set.iter().chain(cost_owners.iter()) {
        graphs.check_agent(a)?;
    }
    if closure == Closure::Require {
        graphs.check_closed(index_set)?;
    }
    let (n_x, n_u) = (system.n_x(), system.n_u());
    if batch.states.ncols() != system.state_dim() || batch.controls.ncols() != system.control_dim() {
        return Err(Error::Dimension("trajectory does not match the system".into()));
    }
    let xi = state_indices(index_set, n_x);
    let ui = control_indices(index_set, n_u);
    let (ns, nc) = (xi.len(), ui.len());
    let m = ns + nc;
    let d = svec_len(m);
    let horizon = batch.len();
    if horizon < d {
        return Err(Error::Underdetermined {
            samples: horizon,
            features: d,
        });
    }

    let k_set = eval_policy.restricted(index_set);
    let xs = batch.states.select_columns(&xi);
    let us = batch.controls.select_columns(&ui);
    // Next-step on-policy actions for t = 1..=T.
    let next_u = xs.rows(1, horizon) * k_set.transpose();

    let mut phi = vec![0.0; horizon * d];
    let mut psi = vec![0.0; horizon * d];
    let mut z = vec![0.0; m];
    let mut zn = vec![0.0; m];
    for t in 0..horizon {
        for p in 0..ns {
            z[p] = xs[(t, p)];
            zn[p] = xs[(t + 1, p)];
        }
        for p in 0..nc {
            z[ns + p] = us[(t, p)];
            zn[ns + p] = next_u[(t, p)];
        }
        svec_outer_into(&z, &mut phi[t * d..(t + 1) * d]);
        svec_outer_into(&zn, &mut psi[t * d..(t + 1) * d]);
    }

    let ik = stack_identity(&k_set);
    let sw2 = system.sigma_w() * system.sigma_w();
    let f_row = svec(&(&ik * ik.transpose() * sw2))?;

    for j in cost_owners.iter() {
        if let Some(missing) = graphs.cost_set(j).iter().find(|a| !index_set.contains(*a)) {
            return Err(Error::CostOutsideSet {
                agent: j + 1,
                missing: missing + 1,
            });
        }
    }
    let mut c_hat = DVector::zeros(horizon);
    if !cost_owners.is_empty() {
        let mut x = vec![0.0; system.state_dim()];
        let mut u = vec![0.0; system.control_dim()];
        for t in 0..horizon {
            for (k, v) in x.iter_mut().enumerate() {
                *v = batch.states[(t, k)];
            }
            for (k, v) in u.iter_mut().enumerate() {
                *v = batch.controls[(t, k)];
            }
            c_hat[t] = cost_owners.iter().map(|j| system.local_cost(j, &x, &u)).sum();
        }
    }

    Ok(RegressionBundle {
        index_set: index_set.clone(),
        phi: DMatrix::from_row_slice(horizon, d, &phi),
        psi_plus: DMatrix::from_row_slice(horizon, d, &psi),
        f_row,
        c_hat,
    })
}

/// Estimated Q-parameter with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct QEstimate {
    pub index_set: AgentSet,
    /// `svec(matrix)`.
    pub q: DVector<f64>,
    pub matrix: DMatrix<f64>,
    /// Floor used by the PSD projection, `None` before projecting.
    pub zeta: Option<f64>,
    /// `min |R_kk| / max |R_kk|` of the column-pivoted QR of the operator; an
    /// estimate of its inverse condition number.
    pub relative_pivot: f64,
    pub samples: usize,
}

/// Solves `Phi^T (Phi - Psi + 1 f^T) q = Phi^T c_hat` by column-pivoted QR.
pub fn lstdq_solve(bundle: &RegressionBundle) -> Result<QEstimate> {
    let d = bundle.features();
    let mut lhs = &bundle.phi - &bundle.psi_plus;
    for mut row in lhs.row_iter_mut() {
        row += bundle.f_row.transpose();
    }
    let phi_t = bundle.phi.transpose();
    let g = &phi_t * lhs;
    let rhs = &phi_t * &bundle.c_hat;

    let qr = g.col_piv_qr();
    let r = qr.r();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for k in 0..d {
        let v = r[(k, k)].abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let relative_pivot = if hi > 0.0 && hi.is_finite() { lo / hi } else { 0.0 };
    if !(relative_pivot >= SINGULAR_THRESHOLD) {
        return Err(Error::Singular {
            relative_pivot,
            threshold: SINGULAR_THRESHOLD,
        });
    }
    let q = qr.solve(&rhs).ok_or(Error::Singular {
        relative_pivot,
        threshold: SINGULAR_THRESHOLD,
    })?;
    let matrix = smat(&q)?;
    Ok(QEstimate {
        index_set: bundle.index_set.clone(),
        q,
        matrix,
        zeta: None,
        relative_pivot,
        samples: bundle.samples(),
    })
}

/// Frobenius projection onto `{ M symmetric : M >= zeta I }`.
pub fn psd_project(q: &DMatrix<f64>, zeta: f64) -> DMatrix<f64> {
    if q.is_empty() {
        return q.clone();
    }
    let eig = symmetrize(q).symmetric_eigen();
    let clamped = eig.eigenvalues.map(|l| l.max(zeta));
    symmetrize(&(&eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()))
}

impl QEstimate {
    pub fn project(&self, zeta: f64) -> Result<QEstimate> {
        let matrix = psd_project(&self.matrix, zeta);
        Ok(QEstimate {
            index_set: self.index_set.clone(),
            q: svec(&matrix)?,
            matrix,
            zeta: Some(zeta),
            relative_pivot: self.relative_pivot,
            samples: self.samples,
        })
    }

    /// Writes `field,value` rows: agents (1-based, space separated),
    /// diagnostics, then `q_0 .. q_{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["field", "value"])?;
        let agents: Vec<String> = self.index_set.to_one_based().iter().map(|a| a.to_string()).collect();
        w.write_record(["index_set", &agents.join(" ")])?;
        w.write_record(["samples", &self.samples.to_string()])?;
        w.write_record(["relative_pivot", &self.relative_pivot.to_string()])?;
        let zeta = self.zeta.map(|z| z.to_string()).unwrap_or_default();
        w.write_record(["zeta", &zeta])?;
        for (k, v) in self.q.iter().enumerate() {
            w.write_record([format!("q_{k}"), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<QEstimate> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut index_set = AgentSet::empty();
        let mut samples = 0;
        let mut relative_pivot = f64::NAN;
        let mut zeta = None;
        let mut q = Vec::new();
        let bad = |what: &str| Error::Csv(format!("malformed q-estimate field {what}"));
        for rec in rdr.records() {
            let rec = rec?;
            let (field, value) = (&rec[0], &rec[1]);
            match field {
                "index_set" => {
                    index_set = value
                        .split_whitespace()
                        .map(|s| s.parse::<usize>().ok().filter(|a| *a > 0).map(|a| a - 1))
                        .collect::<Option<AgentSet>>()
                        .ok_or_else(|| bad(field))?;
                }
                "samples" => samples = value.parse().map_err(|_| bad(field))?,
                "relative_pivot" => relative_pivot = value.parse().map_err(|_| bad(field))?,
                "zeta" => {
                    zeta = if value.is_empty() {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad(field))?)
                    }
                }
                f if f.starts_with("q_") => q.push(value.parse::<f64>().map_err(|_| bad(field))?),
                other => return Err(bad(other)),
            }
        }
        let q = DVector::from_vec(q);
        let matrix = smat(&q)?;
        Ok(QEstimate {
            index_set,
            q,
            matrix,
            zeta,
            relative_pivot,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CouplingGraphs;
    use crate::lqr::{rollout, AgentCost, InitialState};

    fn scalar(a: f64, sigma_w: f64) -> (MultiAgentSystem, StructuredPolicy) {
        let g = CouplingGraphs::new(1, &[(0, 0)], &[(0, 0)], &[(0, 0)]).unwrap();
        let sys = MultiAgentSystem::new(
            g.clone(),
            1,
            1,
            DMatrix::from_element(1, 1, a),
            DMatrix::identity(1, 1),
            vec![AgentCost {
                s: DMatrix::identity(1, 1),
                r: DMatrix::identity(1, 1),
            }],
            sigma_w,
        )
        .unwrap();
        (sys, StructuredPolicy::zeros(&g, 1, 1))
    }

    #[test]
    fn smallest_instance_rows() {
        let (sys, pol) = scalar(0.5, 1.0);
        let batch = rollout(&sys, &pol, 3, 1.0, &InitialState::standard(1), 5).unwrap();
        let set = AgentSet::singleton(0);
        let b = build_regression(&batch, &sys, &pol, &set, &set, Closure::Require).unwrap();
        assert_eq!(b.features(), 3);
        for t in 0..3 {
            let (x, u) = (batch.states[(t, 0)], batch.controls[(t, 0)]);
            let row = [x * x, std::f64::consts::SQRT_2 * x * u, u * u];
            for k in 0..3 {
                assert!((b.phi[(t, k)] - row[k]).abs() < 1e-14);
            }
            let xn = batch.states[(t + 1, 0)];
            assert!((b.psi_plus[(t, 0)] - xn * xn).abs() < 1e-14);
            assert_eq!(b.psi_plus[(t, 2)], 0.0);
            assert!((b.c_hat[t] - x * x - u * u).abs() < 1e-13);
        }
        assert_eq!(b.f_row.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn too_short_is_underdetermined() {
        let (sys, pol) = scalar(0.5, 1.0);
        let batch = rollout(&sys, &pol, 2, 1.0, &InitialState::standard(1), 5).unwrap();
        let set = AgentSet::singleton(0);
        let err = build_regression(&batch, &sys, &pol, &set, &set, Closure::Require).unwrap_err();
        assert_eq!(err, Error::Underdetermined { samples: 2, features: 3 });
    }

    #[test]
    fn zero_cost_gives_zero_q() {
        let (sys, pol) = scalar(0.5, 1.0);
        let batch = rollout(&sys, &pol, 200, 1.0, &InitialState::standard(1), 1).unwrap();
        let set = AgentSet::singleton(0);
        let b = build_regression(&batch, &sys, &pol, &set, &AgentSet::empty(), Closure::Require).unwrap();
        assert!(b.c_hat.iter().all(|c| *c == 0.0));
        let est = lstdq_solve(&b).unwrap();
        assert!(est.q.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn degenerate_features_are_singular() {
        // No exploration and no noise: every row is zero.
        let (sys, pol) = scalar(0.5, 0.0);
        let batch = rollout(&sys, &pol, 10, 0.0, &InitialState::zero(1), 1).unwrap();
        let set = AgentSet::singleton(0);
        let b = build_regression(&batch, &sys, &pol, &set, &set, Closure::Require).unwrap();
        assert!(matches!(lstdq_solve(&b), Err(Error::Singular { .. })));
    }

    #[test]
    fn projection_examples() {
        let m = DMatrix::from_diagonal(&DVector::from_row_slice(&[-1.0, 2.0]));
        let p = psd_project(&m, 0.0);
        assert!((p - DMatrix::from_diagonal(&DVector::from_row_slice(&[0.0, 2.0]))).norm() < 1e-14);
        let ok = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!((psd_project(&ok, 1e-6) - &ok).norm() < 1e-13);
    }

    #[test]
    fn csv_round_trip() {
        let est = QEstimate {
            index_set: AgentSet::new([0, 2]),
            q: DVector::from_row_slice(&[1.0, 0.1, 2.0 / 3.0]),
            matrix: smat(&DVector::from_row_slice(&[1.0, 0.1, 2.0 / 3.0])).unwrap(),
            zeta: Some(1e-6),
            relative_pivot: 0.0123,
            samples: 500,
        };
        let mut buf = Vec::new();
        est.write_csv(&mut buf).unwrap();
        let back = QEstimate::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, est);
    }
}
