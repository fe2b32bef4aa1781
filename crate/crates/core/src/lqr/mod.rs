//! Linear-quadratic machinery shared by evaluation and improvement.

mod lyapunov;
mod rollout;
mod stability;
mod subsystem;
mod sym;
mod system;

pub use lyapunov::lyapunov_solve;
pub use rollout::{average_cost, rollout, CostEvaluation, InitialState, TrajectoryBatch};
pub use stability::{spectral_radius, stability_report, StabilityReport};
pub use subsystem::{
    average_cost_from_q, extract_subsystem, on_policy_value, true_q_matrix, value_matrix, Closure,
    Subsystem,
};
pub use sym::{block_diag, smat, spectral_norm, stack_identity, svec, svec_len, symmetrize, triangular_side};
pub use system::{control_indices, state_indices, AgentCost, MultiAgentSystem, StructuredPolicy};

pub(crate) use sym::svec_outer_into;
