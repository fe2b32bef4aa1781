//! Block-structured global system and structured linear policies.

use nalgebra::{DMatrix, DVector};

use super::sym::symmetrize;
use crate::error::{Error, Result};
use crate::graph::{AgentSet, CouplingGraphs};

/// Global state coordinates of the agents in `set`, in set order.
pub fn state_indices(set: &AgentSet, n_x: usize) -> Vec<usize> {
    set.iter().flat_map(|a| a * n_x..(a + 1) * n_x).collect()
}

pub fn control_indices(set: &AgentSet, n_u: usize) -> Vec<usize> {
    set.iter().flat_map(|a| a * n_u..(a + 1) * n_u).collect()
}

/// Local cost of one agent over its cost set `I^i_C`:
/// `c_i = x_C^T S_i x_C + u_C^T R_i u_C`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentCost {
    pub s: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiAgentSystem {
    graphs: CouplingGraphs,
    n_x: usize,
    n_u: usize,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    costs: Vec<AgentCost>,
    sigma_w: f64,
    s_avg: DMatrix<f64>,
    r_avg: DMatrix<f64>,
}

fn check_block_sparsity(
    field: &'static str,
    m: &DMatrix<f64>,
    graphs: &CouplingGraphs,
    row_block: usize,
    col_block: usize,
    allowed: impl Fn(&CouplingGraphs, usize) -> AgentSet,
) -> Result<()> {
    let n = graphs.n_agents();
    for i in 0..n {
        let ok = allowed(graphs, i);
        for j in 0..n {
            if ok.contains(j) {
                continue;
            }
            let blk = m.view((i * row_block, j * col_block), (row_block, col_block));
            if blk.iter().any(|v| *v != 0.0) {
                return Err(Error::SparsityViolation {
                    field,
                    row: i + 1,
                    col: j + 1,
                });
            }
        }
    }
    Ok(())
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    let scale = 1.0 + m.amax();
    (m - m.transpose()).amax() <= 1e-10 * scale
}

impl MultiAgentSystem {
    /// `a` and `b` are the assembled global matrices; they must vanish on
    /// blocks `(i, j)` with `j` outside `I^i_S`. `costs[i]` is laid out over
    /// `I^i_C` in ascending agent order.
    pub fn new(
        graphs: CouplingGraphs,
        n_x: usize,
        n_u: usize,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        costs: Vec<AgentCost>,
        sigma_w: f64,
    ) -> Result<Self> {
        let n = graphs.n_agents();
        if n_x == 0 || n_u == 0 {
            return Err(Error::InvalidModel("n_x and n_u must be positive".into()));
        }
        if a.shape() != (n * n_x, n * n_x) {
            return Err(Error::Dimension(format!(
                "A must be {0}x{0}, got {1}x{2}",
                n * n_x,
                a.nrows(),
                a.ncols()
            )));
        }
        if b.shape() != (n * n_x, n * n_u) {
            return Err(Error::Dimension(format!(
                "B must be {}x{}, got {}x{}",
                n * n_x,
                n * n_u,
                b.nrows(),
                b.ncols()
            )));
        }
        if costs.len() != n {
            return Err(Error::Dimension(format!(
                "expected {n} agent costs, got {}",
                costs.len()
            )));
        }
        if !(sigma_w >= 0.0 && sigma_w.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "sigma_w must be finite and non-negative, got {sigma_w}"
            )));
        }
        check_block_sparsity("A", &a, &graphs, n_x, n_x, |g, i| g.state_set(i).clone())?;
        check_block_sparsity("B", &b, &graphs, n_x, n_u, |g, i| g.state_set(i).clone())?;

        let mut s_sum = DMatrix::zeros(n * n_x, n * n_x);
        let mut r_sum = DMatrix::zeros(n * n_u, n * n_u);
        for (i, c) in costs.iter().enumerate() {
            let set = graphs.cost_set(i);
            let dx = set.len() * n_x;
            let du = set.len() * n_u;
            if c.s.shape() != (dx, dx) || c.r.shape() != (du, du) {
                return Err(Error::Dimension(format!(
                    "agent {} cost blocks must be {dx}x{dx} and {du}x{du}",
                    i + 1
                )));
            }
            if !is_symmetric(&c.s) || !is_symmetric(&c.r) {
                return Err(Error::InvalidModel(format!(
                    "agent {} cost blocks must be symmetric",
                    i + 1
                )));
            }
            let tol = 1e-10 * (1.0 + c.s.amax().max(c.r.amax()));
            if min_eigenvalue(&c.s) < -tol || min_eigenvalue(&c.r) < -tol {
                return Err(Error::InvalidModel(format!(
                    "agent {} cost blocks must be positive semidefinite",
                    i + 1
                )));
            }
            let xi = state_indices(set, n_x);
            let ui = control_indices(set, n_u);
            for (p, &gp) in xi.iter().enumerate() {
                for (q, &gq) in xi.iter().enumerate() {
                    s_sum[(gp, gq)] += c.s[(p, q)];
                }
            }
            for (p, &gp) in ui.iter().enumerate() {
                for (q, &gq) in ui.iter().enumerate() {
                    r_sum[(gp, gq)] += c.r[(p, q)];
                }
            }
        }
        let inv_n = 1.0 / n as f64;
        let s_avg = symmetrize(&(s_sum * inv_n));
        let r_avg = symmetrize(&(r_sum * inv_n));
        if min_eigenvalue(&r_avg) <= 0.0 {
            return Err(Error::InvalidModel(
                "global control cost R must be positive definite".into(),
            ));
        }
        Ok(MultiAgentSystem {
            graphs,
            n_x,
            n_u,
            a,
            b,
            costs,
            sigma_w,
            s_avg,
            r_avg,
        })
    }

    pub fn graphs(&self) -> &CouplingGraphs {
        &self.graphs
    }

    pub fn n_agents(&self) -> usize {
        self.graphs.n_agents()
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn state_dim(&self) -> usize {
        self.n_agents() * self.n_x
    }

    pub fn control_dim(&self) -> usize {
        self.n_agents() * self.n_u
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn a_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.a
            .view((i * self.n_x, j * self.n_x), (self.n_x, self.n_x))
            .into_owned()
    }

    pub fn b_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.b
            .view((i * self.n_x, j * self.n_u), (self.n_x, self.n_u))
            .into_owned()
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn costs(&self) -> &[AgentCost] {
        &self.costs
    }

    pub fn cost(&self, agent: usize) -> &AgentCost {
        &self.costs[agent]
    }

    /// Averaged global state cost `(1/N) sum_i S_i` (embedded).
    pub fn global_s(&self) -> &DMatrix<f64> {
        &self.s_avg
    }

    pub fn global_r(&self) -> &DMatrix<f64> {
        &self.r_avg
    }

    /// Raw (unaveraged) cost of agent `agent` embedded in global coordinates.
    pub fn embedded_cost(&self, agent: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let set = self.graphs.cost_set(agent);
        let mut s = DMatrix::zeros(self.state_dim(), self.state_dim());
        let mut r = DMatrix::zeros(self.control_dim(), self.control_dim());
        let xi = state_indices(set, self.n_x);
        let ui = control_indices(set, self.n_u);
        let c = &self.costs[agent];
        for (p, &gp) in xi.iter().enumerate() {
            for (q, &gq) in xi.iter().enumerate() {
                s[(gp, gq)] = c.s[(p, q)];
            }
        }
        for (p, &gp) in ui.iter().enumerate() {
            for (q, &gq) in ui.iter().enumerate() {
                r[(gp, gq)] = c.r[(p, q)];
            }
        }
        (s, r)
    }

    /// Raw local cost `c_i(x, u)` evaluated at global vectors.
    pub fn local_cost(&self, agent: usize, x: &[f64], u: &[f64]) -> f64 {
        let set = self.graphs.cost_set(agent);
        let xi = state_indices(set, self.n_x);
        let ui = control_indices(set, self.n_u);
        let c = &self.costs[agent];
        quad_form_indexed(&c.s, x, &xi) + quad_form_indexed(&c.r, u, &ui)
    }

    /// Copy with a different process-noise level.
    pub fn with_sigma_w(&self, sigma_w: f64) -> Result<Self> {
        MultiAgentSystem::new(
            self.graphs.clone(),
            self.n_x,
            self.n_u,
            self.a.clone(),
            self.b.clone(),
            self.costs.clone(),
            sigma_w,
        )
    }
}

/// `v_idx^T M v_idx`.
pub(crate) fn quad_form_indexed(m: &DMatrix<f64>, v: &[f64], idx: &[usize]) -> f64 {
    let mut acc = 0.0;
    for (q, &gq) in idx.iter().enumerate() {
        let vq = v[gq];
        if vq == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (p, &gp) in idx.iter().enumerate() {
            row += m[(p, q)] * v[gp];
        }
        acc += row * vq;
    }
    acc
}

/// Global gain `K` whose block `K_ij` is zero unless `j` is in `I^i_O`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredPolicy {
    n_x: usize,
    n_u: usize,
    observation: Vec<AgentSet>,
    k: DMatrix<f64>,
}

impl StructuredPolicy {
    pub fn zeros(graphs: &CouplingGraphs, n_x: usize, n_u: usize) -> Self {
        let n = graphs.n_agents();
        StructuredPolicy {
            n_x,
            n_u,
            observation: (0..n).map(|i| graphs.observation_set(i).clone()).collect(),
            k: DMatrix::zeros(n * n_u, n * n_x),
        }
    }

    pub fn from_matrix(graphs: &CouplingGraphs, n_x: usize, n_u: usize, k: DMatrix<f64>) -> Result<Self> {
        let n = graphs.n_agents();
        if k.shape() != (n * n_u, n * n_x) {
            return Err(Error::Dimension(format!(
                "K must be {}x{}, got {}x{}",
                n * n_u,
                n * n_x,
                k.nrows(),
                k.ncols()
            )));
        }
        check_block_sparsity("K", &k, graphs, n_u, n_x, |g, i| g.observation_set(i).clone())?;
        let mut p = StructuredPolicy::zeros(graphs, n_x, n_u);
        p.k = k;
        Ok(p)
    }

    pub fn for_system(system: &MultiAgentSystem, k: DMatrix<f64>) -> Result<Self> {
        StructuredPolicy::from_matrix(system.graphs(), system.n_x(), system.n_u(), k)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn n_agents(&self) -> usize {
        self.observation.len()
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn observation_set(&self, agent: usize) -> &AgentSet {
        &self.observation[agent]
    }

    pub fn block(&self, i: usize, j: usize) -> DMatrix<f64> {
        self.k
            .view((i * self.n_u, j * self.n_x), (self.n_u, self.n_x))
            .into_owned()
    }

    /// Overwrites `K_ij`; fails if `j` is not observed by `i`.
    pub fn set_block(&mut self, i: usize, j: usize, value: &DMatrix<f64>) -> Result<()> {
        if value.shape() != (self.n_u, self.n_x) {
            return Err(Error::Dimension(format!(
                "K block must be {}x{}",
                self.n_u, self.n_x
            )));
        }
        if !self.observation[i].contains(j) && value.iter().any(|v| *v != 0.0) {
            return Err(Error::SparsityViolation {
                field: "K",
                row: i + 1,
                col: j + 1,
            });
        }
        self.k
            .view_mut((i * self.n_u, j * self.n_x), (self.n_u, self.n_x))
            .copy_from(value);
        Ok(())
    }

    /// `K_i` restricted to the columns of `I^i_O`: an `n_u x (n_x |I^i_O|)`
    /// matrix.
    pub fn observed_gain(&self, agent: usize) -> DMatrix<f64> {
        let cols = state_indices(&self.observation[agent], self.n_x);
        let rows: Vec<usize> = (agent * self.n_u..(agent + 1) * self.n_u).collect();
        self.k.select_rows(&rows).select_columns(&cols)
    }

    /// Writes `K_i` over `I^i_O` from an `n_u x (n_x |I^i_O|)` matrix.
    pub(crate) fn set_observed_gain(&mut self, agent: usize, gain: &DMatrix<f64>) {
        let obs = self.observation[agent].clone();
        for (k, j) in obs.iter().enumerate() {
            let blk = gain.view((0, k * self.n_x), (self.n_u, self.n_x));
            self.k
                .view_mut((agent * self.n_u, j * self.n_x), (self.n_u, self.n_x))
                .copy_from(&blk);
        }
    }

    /// Restriction `K_set` of the gain to the rows/columns of `set`.
    pub fn restricted(&self, set: &AgentSet) -> DMatrix<f64> {
        let rows = control_indices(set, self.n_u);
        let cols = state_indices(set, self.n_x);
        self.k.select_rows(&rows).select_columns(&cols)
    }

    pub fn act(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.k * x
    }
}
