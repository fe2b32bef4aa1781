//! The two benchmark networks and their default model.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CouplingGraphs;
use crate::lqr::{AgentCost, MultiAgentSystem};

fn check_size(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::Config(format!("the example networks need N >= 2, got {n}")));
    }
    Ok(())
}

/// Ring-pairing network: every odd agent `j` drives and is observed by its
/// neighbours `j - 1` and `j + 1`, agent 1 also drives agent `N` (and `N`
/// drives 1 when `N` is odd); costs are purely local.
pub fn generate_example1(n: usize) -> Result<CouplingGraphs> {
    check_size(n)?;
    let mut so = Vec::new();
    for j in (1..=n).step_by(2) {
        if j > 1 {
            so.push((j, j - 1));
        }
        if j < n {
            so.push((j, j + 1));
        }
    }
    so.push((1, n));
    if n % 2 == 1 {
        so.push((n, 1));
    }
    so.extend((1..=n).map(|i| (i, i)));
    let cost: Vec<_> = (1..=n).map(|i| (i, i)).collect();
    CouplingGraphs::from_one_based(n, &so, &so, &cost)
}

/// Leader-follower network: agent 1 is observed by and enters the cost of
/// every agent; dynamics are decoupled.
pub fn generate_example2(n: usize) -> Result<CouplingGraphs> {
    check_size(n)?;
    let selfs: Vec<_> = (1..=n).map(|i| (i, i)).collect();
    let mut oc: Vec<_> = (1..=n).map(|j| (1, j)).collect();
    oc.extend(selfs.iter().copied());
    CouplingGraphs::from_one_based(n, &selfs, &oc, &oc)
}

/// Cost weights: `s_i` has `diag / |I^i_C|` on the diagonal and
/// `offdiag / |I^i_C|` elsewhere, `S_i = s_i (x) I_{n_x}` and
/// `R_i = r_scale I_{|I^i_C|} (x) I_{n_u}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostParams {
    pub diag: f64,
    pub offdiag: f64,
    pub r_scale: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            diag: 200.0,
            offdiag: -10.0,
            r_scale: 1.0,
        }
    }
}

pub fn build_cost_blocks(graphs: &CouplingGraphs, n_x: usize, n_u: usize, params: &CostParams) -> Result<Vec<AgentCost>> {
    (0..graphs.n_agents())
        .map(|i| {
            let c = graphs.cost_set(i).len();
            if c == 0 {
                return Err(Error::Config(format!("agent {} has an empty cost set", i + 1)));
            }
            let scale = 1.0 / c as f64;
            let s_small = DMatrix::from_fn(c, c, |k, l| {
                if k == l {
                    params.diag * scale
                } else {
                    params.offdiag * scale
                }
            });
            let min_eig = s_small.clone().symmetric_eigenvalues().min();
            if min_eig < -1e-12 || !(params.r_scale > 0.0) {
                return Err(Error::Config(format!(
                    "cost weights for agent {} are not positive semidefinite (min eigenvalue {min_eig})",
                    i + 1
                )));
            }
            let s = s_small.kronecker(&DMatrix::identity(n_x, n_x));
            let r = DMatrix::identity(c * n_u, c * n_u) * params.r_scale;
            Ok(AgentCost { s, r })
        })
        .collect()
}

/// Per-agent dynamics: a tridiagonal local `A_ii`, rectangular-identity
/// `B_ii`, and uniform scalar couplings for every listed state edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsParams {
    pub a_diag: f64,
    pub a_offdiag: f64,
    pub b_diag: f64,
    pub a_coupling: f64,
    pub b_coupling: f64,
    /// Explicit `(A_ii, B_ii)` for selected agents (1-based, row-major).
    pub overrides: Vec<AgentDynamics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDynamics {
    pub agent: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            a_diag: 0.95,
            a_offdiag: 0.01,
            b_diag: 1.0,
            a_coupling: 0.1,
            b_coupling: 0.0,
            overrides: Vec::new(),
        }
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{what} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn build_system(
    graphs: &CouplingGraphs,
    n_x: usize,
    n_u: usize,
    dynamics: &DynamicsParams,
    costs: &CostParams,
    sigma_w: f64,
) -> Result<MultiAgentSystem> {
    let n = graphs.n_agents();
    let a_local = DMatrix::from_fn(n_x, n_x, |i, j| {
        if i == j {
            dynamics.a_diag
        } else if i.abs_diff(j) == 1 {
            dynamics.a_offdiag
        } else {
            0.0
        }
    });
    let b_local = DMatrix::from_fn(n_x, n_u, |i, j| if i == j { dynamics.b_diag } else { 0.0 });
    let mut locals = vec![(a_local, b_local); n];
    for o in &dynamics.overrides {
        if o.agent == 0 || o.agent > n {
            return Err(Error::Config(format!("dynamics override for agent {} is out of range", o.agent)));
        }
        locals[o.agent - 1] = (
            matrix_from_rows(&o.a, n_x, n_x, "override A")?,
            matrix_from_rows(&o.b, n_x, n_u, "override B")?,
        );
    }
    let mut a = DMatrix::zeros(n * n_x, n * n_x);
    let mut b = DMatrix::zeros(n * n_x, n * n_u);
    for i in 0..n {
        for j in graphs.state_set(i).iter() {
            let (ab, bb) = if i == j {
                locals[i].clone()
            } else {
                (
                    DMatrix::identity(n_x, n_x) * dynamics.a_coupling,
                    DMatrix::from_fn(n_x, n_u, |p, q| if p == q { dynamics.b_coupling } else { 0.0 }),
                )
            };
            a.view_mut((i * n_x, j * n_x), (n_x, n_x)).copy_from(&ab);
            b.view_mut((i * n_x, j * n_u), (n_x, n_u)).copy_from(&bb);
        }
    }
    let cost_blocks = build_cost_blocks(graphs, n_x, n_u, costs)?;
    MultiAgentSystem::new(graphs.clone(), n_x, n_u, a, b, cost_blocks, sigma_w)
}
