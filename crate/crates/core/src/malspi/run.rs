//! The policy-iteration loop.

use std::fmt;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::plan::{embed_add, plan_all, AgentPlan, Architecture};
use super::update::policy_gradient;
use crate::error::{Error, Result};
use crate::graph::DependencySets;
use crate::lqr::{
    average_cost, extract_subsystem, rollout, spectral_radius, true_q_matrix, Closure, CostEvaluation,
    InitialState, MultiAgentSystem, StructuredPolicy, TrajectoryBatch,
};
use crate::lstdq::{build_regression, lstdq_solve, DEFAULT_ZETA};

const STREAM_ROLLOUT: u64 = 1;
const STREAM_EVAL: u64 = 2;

/// Per-purpose seed derived from the run seed, so that the evaluation noise
/// of iteration `l` does not depend on the architecture being run.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream << 32) ^ index);
    rng.next_u64()
}

pub fn rollout_seed(seed: u64, iteration: usize) -> u64 {
    derive_seed(seed, STREAM_ROLLOUT, iteration as u64)
}

pub fn eval_seed(seed: u64, iteration: usize) -> u64 {
    derive_seed(seed, STREAM_EVAL, iteration as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MalspiConfig {
    /// Number of improvement steps `n`.
    pub iterations: usize,
    /// Samples per iteration `T`.
    pub horizon: usize,
    pub eval_horizon: usize,
    pub sigma_eta: f64,
    pub zeta: f64,
    pub alpha: f64,
    pub init: InitialState,
    pub seed: u64,
    /// `K_0`, also used as the play policy. Zero when `None`.
    pub initial_policy: Option<StructuredPolicy>,
    /// Compare each estimate with the exact Q of the current policy.
    pub q_oracle: bool,
}

impl MalspiConfig {
    pub fn new(state_dim: usize) -> Self {
        MalspiConfig {
            iterations: 15,
            horizon: 500,
            eval_horizon: 500,
            sigma_eta: 1.0,
            zeta: DEFAULT_ZETA,
            alpha: 1e-3,
            init: InitialState::standard(state_dim),
            seed: 0,
            initial_policy: None,
            q_oracle: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.eval_horizon == 0 {
            return Err(Error::Config("horizons must be positive".into()));
        }
        if !(self.zeta >= 0.0) || !self.alpha.is_finite() || !(self.sigma_eta >= 0.0) {
            return Err(Error::Config(
                "zeta and sigma_eta must be non-negative and alpha finite".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Fewer samples than regression features; update skipped.
    Underdetermined,
    /// Regression operator numerically singular; update skipped.
    Singular,
    /// The updated global policy is not stabilizing.
    Unstable,
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Flag::Underdetermined => "underdetermined",
            Flag::Singular => "singular",
            Flag::Unstable => "unstable",
        })
    }
}

impl std::str::FromStr for Flag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "underdetermined" => Ok(Flag::Underdetermined),
            "singular" => Ok(Flag::Singular),
            "unstable" => Ok(Flag::Unstable),
            other => Err(Error::Csv(format!("unknown flag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRecord {
    pub agent: usize,
    pub updated: bool,
    pub flags: Vec<Flag>,
    /// Smallest relative QR pivot over this agent's regressions.
    pub relative_pivot: Option<f64>,
    /// `||Q̂ - Q_true||_F` over the update set, when the oracle is enabled.
    pub q_error: Option<f64>,
    pub wall_ms_eval: f64,
    pub wall_ms_update: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Policy after this iteration's update (`K_0` for iteration 0).
    pub policy: StructuredPolicy,
    pub eval: CostEvaluation,
    pub agents: Vec<AgentRecord>,
    pub wall_ms_rollout: f64,
    /// Wall clock of the evaluate and update phase over all agents.
    pub wall_ms_learning: f64,
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

struct AgentOutcome {
    record: AgentRecord,
    gain: Option<DMatrix<f64>>,
}

fn exact_aggregate(
    system: &MultiAgentSystem,
    policy: &StructuredPolicy,
    plan: &AgentPlan,
) -> Option<DMatrix<f64>> {
    let (n_x, n_u) = (system.n_x(), system.n_u());
    let m = plan.update_set.len() * (n_x + n_u);
    let mut acc = DMatrix::zeros(m, m);
    for job in &plan.jobs {
        let sub = extract_subsystem(system, policy, &job.set, &job.owners, Closure::Skip).ok()?;
        let q = true_q_matrix(&sub).ok()?;
        embed_add(&mut acc, &q, &job.set, &plan.update_set, n_x, n_u).ok()?;
    }
    Some(acc)
}

fn agent_step(
    system: &MultiAgentSystem,
    policy: &StructuredPolicy,
    plan: &AgentPlan,
    batch: &TrajectoryBatch,
    config: &MalspiConfig,
) -> Result<AgentOutcome> {
    let (n_x, n_u) = (system.n_x(), system.n_u());
    let t_eval = Instant::now();
    let mut flags = Vec::new();
    let mut relative_pivot: Option<f64> = None;
    let m = plan.update_set.len() * (n_x + n_u);
    let mut aggregate = DMatrix::zeros(m, m);
    for job in &plan.jobs {
        let solved = build_regression(batch, system, policy, &job.set, &job.owners, Closure::Skip)
            .and_then(|bundle| lstdq_solve(&bundle));
        match solved {
            Ok(est) => {
                relative_pivot = Some(relative_pivot.map_or(est.relative_pivot, |p| p.min(est.relative_pivot)));
                embed_add(&mut aggregate, &est.matrix, &job.set, &plan.update_set, n_x, n_u)?;
            }
            Err(Error::Underdetermined { .. }) => {
                flags.push(Flag::Underdetermined);
                break;
            }
            Err(Error::Singular { relative_pivot: p, .. }) => {
                relative_pivot = Some(p);
                flags.push(Flag::Singular);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let q_hat = crate::lstdq::psd_project(&aggregate, config.zeta);
    let wall_ms_eval = millis(t_eval);
    let q_error = if config.q_oracle && flags.is_empty() {
        exact_aggregate(system, policy, plan).map(|q| (&q_hat - q).norm())
    } else {
        None
    };

    let t_update = Instant::now();
    let gain = if flags.is_empty() {
        let grad = policy_gradient(policy, plan.agent, &q_hat, &plan.update_set, batch)?;
        Some(policy.observed_gain(plan.agent) - grad * config.alpha)
    } else {
        None
    };
    let wall_ms_update = millis(t_update);
    Ok(AgentOutcome {
        record: AgentRecord {
            agent: plan.agent,
            updated: gain.is_some(),
            flags,
            relative_pivot,
            q_error,
            wall_ms_eval,
            wall_ms_update,
        },
        gain,
    })
}

/// Runs the loop with dependency sets computed from the system's graphs.
pub fn run_malspi(
    system: &MultiAgentSystem,
    arch: Architecture,
    config: &MalspiConfig,
) -> Result<Vec<IterationRecord>> {
    let deps = DependencySets::compute(system.graphs());
    run_malspi_with_sets(system, &deps, arch, config)
}

/// Runs `config.iterations` improvement steps. Record `l` holds the policy
/// after step `l` and its evaluated cost; record 0 is `K_0`.
///
/// Every iteration draws a fresh trajectory under the fixed play policy
/// `K_0`. Agents evaluate and update in parallel from the previous policy;
/// an agent whose regression fails keeps its gain for that iteration.
pub fn run_malspi_with_sets(
    system: &MultiAgentSystem,
    deps: &DependencySets,
    arch: Architecture,
    config: &MalspiConfig,
) -> Result<Vec<IterationRecord>> {
    config.validate()?;
    if deps.n_agents() != system.n_agents() {
        return Err(Error::Dimension("dependency sets do not match the system".into()));
    }
    let k0 = match &config.initial_policy {
        Some(p) => p.clone(),
        None => StructuredPolicy::zeros(system.graphs(), system.n_x(), system.n_u()),
    };
    let rho = spectral_radius(&(system.a() + system.b() * k0.matrix()));
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    let plans = plan_all(arch, deps);
    let play = k0.clone();

    let mut records = Vec::with_capacity(config.iterations + 1);
    let eval0 = average_cost(system, &k0, config.eval_horizon, &config.init, eval_seed(config.seed, 0))?;
    records.push(IterationRecord {
        iteration: 0,
        policy: k0.clone(),
        eval: eval0,
        agents: Vec::new(),
        wall_ms_rollout: 0.0,
        wall_ms_learning: 0.0,
    });

    let mut policy = k0;
    for l in 1..=config.iterations {
        let t_roll = Instant::now();
        let batch = rollout(
            system,
            &play,
            config.horizon,
            config.sigma_eta,
            &config.init,
            rollout_seed(config.seed, l),
        )?;
        let wall_ms_rollout = millis(t_roll);

        let t_learn = Instant::now();
        let outcomes: Vec<AgentOutcome> = plans
            .par_iter()
            .map(|plan| agent_step(system, &policy, plan, &batch, config))
            .collect::<Result<_>>()?;
        let wall_ms_learning = millis(t_learn);

        let mut next = policy.clone();
        for out in &outcomes {
            if let Some(gain) = &out.gain {
                next.set_observed_gain(out.record.agent, gain);
            }
        }
        let eval = average_cost(system, &next, config.eval_horizon, &config.init, eval_seed(config.seed, l))?;
        let mut agents: Vec<AgentRecord> = outcomes.into_iter().map(|o| o.record).collect();
        if !eval.stable {
            for a in &mut agents {
                a.flags.push(Flag::Unstable);
            }
        }
        policy = next;
        records.push(IterationRecord {
            iteration: l,
            policy: policy.clone(),
            eval,
            agents,
            wall_ms_rollout,
            wall_ms_learning,
        });
    }
    Ok(records)
}
