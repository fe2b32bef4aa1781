//! Which regressions each agent runs, and over which coordinates it updates.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AgentSet, DependencySets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Every agent estimates the sum of all local Q-functions on the full
    /// state-control space.
    Centralized,
    /// The aggregated `Q̂_i` on the full space.
    UndecomposedDirect,
    /// The aggregated `Q̂_i` on `I^i_Q̂`.
    Direct,
    /// Each `Q_j` on `I^j_Q` for `j` in `I^i_GD`, summed at gradient time.
    Indirect,
}

impl Architecture {
    pub const ALL: [Architecture; 4] = [
        Architecture::Centralized,
        Architecture::UndecomposedDirect,
        Architecture::Direct,
        Architecture::Indirect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Centralized => "centralized",
            Architecture::UndecomposedDirect => "undecomposed_direct",
            Architecture::Direct => "direct",
            Architecture::Indirect => "indirect",
        }
    }

    /// Whether the regressions run over the full agent set.
    pub fn is_full_dimensional(self) -> bool {
        matches!(self, Architecture::Centralized | Architecture::UndecomposedDirect)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

/// One regression: Q-function over `set` for the summed cost of `owners`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalJob {
    pub set: AgentSet,
    pub owners: AgentSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentPlan {
    pub agent: usize,
    /// Coordinates of the aggregated Q used in the gradient.
    pub update_set: AgentSet,
    pub jobs: Vec<EvalJob>,
}

/// Builds the per-agent plan. Jobs sharing a set are merged by pooling their
/// cost owners, which is exact because the target is linear in the cost.
pub fn plan_agent(arch: Architecture, deps: &DependencySets, agent: usize) -> AgentPlan {
    let n = deps.n_agents();
    let all = AgentSet::full(n);
    let gd = deps.gradient(agent).clone();
    let (update_set, raw): (AgentSet, Vec<EvalJob>) = match arch {
        Architecture::Direct => (
            deps.direct(agent).clone(),
            vec![EvalJob {
                set: deps.direct(agent).clone(),
                owners: gd,
            }],
        ),
        Architecture::UndecomposedDirect => (
            all.clone(),
            vec![EvalJob {
                set: all,
                owners: gd,
            }],
        ),
        Architecture::Indirect => (
            deps.direct(agent).clone(),
            gd.iter()
                .map(|j| EvalJob {
                    set: deps.value(j).clone(),
                    owners: AgentSet::singleton(j),
                })
                .collect(),
        ),
        Architecture::Centralized => (
            all.clone(),
            (0..n)
                .map(|j| EvalJob {
                    set: all.clone(),
                    owners: AgentSet::singleton(j),
                })
                .collect(),
        ),
    };
    let mut jobs: Vec<EvalJob> = Vec::with_capacity(raw.len());
    for job in raw {
        match jobs.iter_mut().find(|j| j.set == job.set) {
            Some(existing) => existing.owners = existing.owners.union(&job.owners),
            None => jobs.push(job),
        }
    }
    AgentPlan {
        agent,
        update_set,
        jobs,
    }
}

pub fn plan_all(arch: Architecture, deps: &DependencySets) -> Vec<AgentPlan> {
    (0..deps.n_agents()).map(|i| plan_agent(arch, deps, i)).collect()
}

/// Position of each coordinate of `from` inside `to`, both laid out as
/// `[x_set; u_set]`.
pub fn coordinate_map(from: &AgentSet, to: &AgentSet, n_x: usize, n_u: usize) -> Result<Vec<usize>> {
    let sx = to.len() * n_x;
    let mut states = Vec::with_capacity(from.len() * n_x);
    let mut controls = Vec::with_capacity(from.len() * n_u);
    for a in from.iter() {
        let p = to.position(a).ok_or_else(|| {
            Error::Dimension(format!("agent {} is not in the target set {to}", a + 1))
        })?;
        states.extend(p * n_x..(p + 1) * n_x);
        controls.extend(sx + p * n_u..sx + (p + 1) * n_u);
    }
    states.extend(controls);
    Ok(states)
}

/// Adds `q` (over `from`) into `acc` (over `to`).
pub fn embed_add(
    acc: &mut DMatrix<f64>,
    q: &DMatrix<f64>,
    from: &AgentSet,
    to: &AgentSet,
    n_x: usize,
    n_u: usize,
) -> Result<()> {
    let map = coordinate_map(from, to, n_x, n_u)?;
    for (c, &gc) in map.iter().enumerate() {
        for (r, &gr) in map.iter().enumerate() {
            acc[(gr, gc)] += q[(r, c)];
        }
    }
    Ok(())
}
