//! Restriction of the global problem to a closed agent set, and the exact
//! Q-matrix of a linear policy.

use nalgebra::DMatrix;

use super::lyapunov::lyapunov_solve;
use super::sym::{block_diag, stack_identity, symmetrize};
use super::system::{control_indices, state_indices, MultiAgentSystem, StructuredPolicy};
use crate::error::{Error, Result};
use crate::graph::AgentSet;

/// Whether [`extract_subsystem`] insists on the set being closed under
/// state/observation reachability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Closure {
    Require,
    Skip,
}

/// System, cost and gain restricted to the coordinates of `index_set`.
///
/// Coordinates are ordered `[x_a1 .. x_ak]` for states and `[u_a1 .. u_ak]`
/// for controls, with `a1 < .. < ak`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    pub index_set: AgentSet,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl Subsystem {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn closed_loop(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.k
    }
}

/// Restricts `system` and `policy` to `index_set`, with cost equal to the
/// sum of the raw local costs of `cost_owners`.
///
/// Each owner's cost set must lie inside `index_set`. With
/// [`Closure::Require`] the set must also be closed, which makes the
/// restricted dynamics exact.
pub fn extract_subsystem(
    system: &MultiAgentSystem,
    policy: &StructuredPolicy,
    index_set: &AgentSet,
    cost_owners: &AgentSet,
    closure: Closure,
) -> Result<Subsystem> {
    let graphs = system.graphs();
    for a in index_set.iter().chain(cost_owners.iter()) {
        graphs.check_agent(a)?;
    }
    if closure == Closure::Require {
        graphs.check_closed(index_set)?;
    }
    let (n_x, n_u) = (system.n_x(), system.n_u());
    let xi = state_indices(index_set, n_x);
    let ui = control_indices(index_set, n_u);
    let a = system.a().select_rows(&xi).select_columns(&xi);
    let b = system.b().select_rows(&xi).select_columns(&ui);
    let k = policy.matrix().select_rows(&ui).select_columns(&xi);

    let mut s = DMatrix::zeros(xi.len(), xi.len());
    let mut r = DMatrix::zeros(ui.len(), ui.len());
    for j in cost_owners.iter() {
        let cset = graphs.cost_set(j);
        if let Some(missing) = cset.iter().find(|m| !index_set.contains(*m)) {
            return Err(Error::CostOutsideSet {
                agent: j + 1,
                missing: missing + 1,
            });
        }
        let c = system.cost(j);
        for (p, pa) in cset.iter().enumerate() {
            let sp = index_set.position(pa).expect("checked above");
            for (q, qa) in cset.iter().enumerate() {
                let sq = index_set.position(qa).expect("checked above");
                let mut sv = s.view_mut((sp * n_x, sq * n_x), (n_x, n_x));
                sv += c.s.view((p * n_x, q * n_x), (n_x, n_x));
                let mut rv = r.view_mut((sp * n_u, sq * n_u), (n_u, n_u));
                rv += c.r.view((p * n_u, q * n_u), (n_u, n_u));
            }
        }
    }
    Ok(Subsystem {
        index_set: index_set.clone(),
        a,
        b,
        s,
        r,
        k,
    })
}

/// Value matrix `P` with `V(x) = x^T P x` (relative), solving
/// `P = (A+BK)^T P (A+BK) + S + K^T R K`.
pub fn value_matrix(sub: &Subsystem) -> Result<DMatrix<f64>> {
    let closed = sub.closed_loop();
    let stage = &sub.s + sub.k.transpose() * &sub.r * &sub.k;
    lyapunov_solve(&closed.transpose(), &stage)
}

/// Exact Q-matrix over `(x_set, u_set)`:
/// `Q = blkdiag(S, R) + [A B]^T P [A B]`.
pub fn true_q_matrix(sub: &Subsystem) -> Result<DMatrix<f64>> {
    let p = value_matrix(sub)?;
    let n = sub.state_dim();
    let m = sub.control_dim();
    let mut ab = DMatrix::zeros(n, n + m);
    ab.view_mut((0, 0), (n, n)).copy_from(&sub.a);
    ab.view_mut((0, n), (n, m)).copy_from(&sub.b);
    let q = block_diag(&sub.s, &sub.r) + ab.transpose() * p * ab;
    Ok(symmetrize(&q))
}

/// `M = [I; K]^T Q [I; K]`, the value matrix implied by a Q-matrix.
pub fn on_policy_value(q: &DMatrix<f64>, k: &DMatrix<f64>) -> DMatrix<f64> {
    let ik = stack_identity(k);
    ik.transpose() * q * ik
}

/// Average cost `lambda = sigma_w^2 tr([I;K]^T Q [I;K])` implied by `Q`.
pub fn average_cost_from_q(q: &DMatrix<f64>, k: &DMatrix<f64>, sigma_w: f64) -> f64 {
    sigma_w * sigma_w * on_policy_value(q, k).trace()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CouplingGraphs;
    use crate::lqr::system::AgentCost;

    fn scalar_system(a: f64) -> (MultiAgentSystem, StructuredPolicy) {
        let g = CouplingGraphs::new(1, &[(0, 0)], &[(0, 0)], &[(0, 0)]).unwrap();
        let costs = vec![AgentCost {
            s: DMatrix::identity(1, 1),
            r: DMatrix::identity(1, 1),
        }];
        let sys = MultiAgentSystem::new(
            g.clone(),
            1,
            1,
            DMatrix::from_element(1, 1, a),
            DMatrix::identity(1, 1),
            costs,
            1.0,
        )
        .unwrap();
        let pol = StructuredPolicy::zeros(&g, 1, 1);
        (sys, pol)
    }

    #[test]
    fn scalar_q_matrices() {
        let (sys, pol) = scalar_system(0.0);
        let set = AgentSet::singleton(0);
        let sub = extract_subsystem(&sys, &pol, &set, &set, Closure::Require).unwrap();
        let q = true_q_matrix(&sub).unwrap();
        assert!((q - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0])).norm() < 1e-14);

        let (sys, pol) = scalar_system(0.5);
        let sub = extract_subsystem(&sys, &pol, &set, &set, Closure::Require).unwrap();
        let q = true_q_matrix(&sub).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 7.0 / 3.0]);
        assert!((q - expect).norm() < 1e-13);
    }

    #[test]
    fn unclosed_set_is_rejected() {
        let g = CouplingGraphs::new(2, &[(0, 0), (1, 1), (0, 1)], &[(0, 0), (1, 1)], &[(0, 0), (1, 1)]).unwrap();
        let costs = vec![
            AgentCost {
                s: DMatrix::identity(1, 1),
                r: DMatrix::identity(1, 1),
            };
            2
        ];
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.2, 0.5]);
        let sys = MultiAgentSystem::new(g.clone(), 1, 1, a, DMatrix::identity(2, 2), costs, 1.0).unwrap();
        let pol = StructuredPolicy::zeros(&g, 1, 1);
        let set = AgentSet::singleton(1);
        let err = extract_subsystem(&sys, &pol, &set, &set, Closure::Require).unwrap_err();
        assert_eq!(err, Error::NotClosed { missing: 1, member: 2 });
        extract_subsystem(&sys, &pol, &set, &set, Closure::Skip).unwrap();
        let err = extract_subsystem(&sys, &pol, &AgentSet::singleton(0), &set, Closure::Skip).unwrap_err();
        assert_eq!(err, Error::CostOutsideSet { agent: 2, missing: 2 });
    }
}
