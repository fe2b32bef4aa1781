//! Multi-agent least-squares policy iteration.

mod bounds;
mod plan;
mod run;
mod update;

pub use bounds::{
    sample_bound_direct, sample_bound_indirect, BoundInputs, BoundReport, IndirectBoundReport, SetBoundTerms,
};
pub use plan::{coordinate_map, embed_add, plan_agent, plan_all, AgentPlan, Architecture, EvalJob};
pub use run::{
    derive_seed, eval_seed, rollout_seed, run_malspi, run_malspi_with_sets, AgentRecord, Flag, IterationRecord,
    MalspiConfig,
};
pub use update::{policy_gradient, policy_gradient_update, state_second_moment};
