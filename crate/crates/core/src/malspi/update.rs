use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::AgentSet;
use crate::lqr::{stack_identity, state_indices, StructuredPolicy, TrajectoryBatch};

/// Empirical second moment `(1/T) sum_t x_set(t) x_set(t)^T` over
/// `t = 0..T-1`.
pub fn state_second_moment(batch: &TrajectoryBatch, set: &AgentSet, n_x: usize) -> DMatrix<f64> {
    let idx = state_indices(set, n_x);
    let xs = batch.states.rows(0, batch.len()).select_columns(&idx);
    let t = batch.len().max(1) as f64;
    (xs.transpose() * &xs) / t
}

/// Gradient estimate for agent `agent`'s observed gain,
/// `2 Ê[J_i Q̂ [x_set; K_set x_set] x_O^T]`, as an `n_u x (n_x |I^i_O|)`
/// matrix. The action inside the expectation is the current policy's.
pub fn policy_gradient(
    policy: &StructuredPolicy,
    agent: usize,
    q_hat: &DMatrix<f64>,
    set: &AgentSet,
    batch: &TrajectoryBatch,
) -> Result<DMatrix<f64>> {
    let (n_x, n_u) = (policy.n_x(), policy.n_u());
    let obs = policy.observation_set(agent);
    if let Some(missing) = std::iter::once(agent).chain(obs.iter()).find(|a| !set.contains(*a)) {
        return Err(Error::UpdateSetIncomplete {
            agent: agent + 1,
            missing: missing + 1,
        });
    }
    let m = set.len() * (n_x + n_u);
    if q_hat.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "Q estimate must be {m}x{m} for set {set}"
        )));
    }
    let k_set = policy.restricted(set);
    let sigma = state_second_moment(batch, set, n_x);
    let u_row = set.len() * n_x + set.position(agent).expect("checked") * n_u;
    let obs_cols: Vec<usize> = obs
        .iter()
        .flat_map(|j| {
            let p = set.position(j).expect("checked");
            p * n_x..(p + 1) * n_x
        })
        .collect();
    let q_rows = q_hat.rows(u_row, n_u);
    let grad = q_rows * stack_identity(&k_set) * sigma.select_columns(&obs_cols);
    Ok(grad * 2.0)
}

/// `K_i <- K_i - alpha * gradient`; other agents' blocks are untouched.
pub fn policy_gradient_update(
    policy: &StructuredPolicy,
    agent: usize,
    q_hat: &DMatrix<f64>,
    set: &AgentSet,
    batch: &TrajectoryBatch,
    alpha: f64,
) -> Result<StructuredPolicy> {
    let grad = policy_gradient(policy, agent, q_hat, set, batch)?;
    let mut next = policy.clone();
    next.set_observed_gain(agent, &(policy.observed_gain(agent) - grad * alpha));
    Ok(next)
}
