//! Coupling graphs and the dependency sets derived from them.
//!
//! Three directed graphs over the agents describe the problem structure: an
//! edge `(i, j)` in the state graph means agent `i` enters the dynamics of
//! agent `j`, and likewise for observations and costs. Everything else in the
//! crate (subsystem extraction, regression scopes, gradient aggregation) is
//! driven by the sets computed here.
//!
//! Agent indices are 0-based in this API. Edge lists written in the 1-based
//! convention of configuration files go through [`CouplingGraphs::from_one_based`].

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted, duplicate-free list of 0-based agent indices.
///
/// Every block-matrix layout in the crate follows this ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct AgentSet(Vec<usize>);

impl AgentSet {
    pub fn new(agents: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = agents.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        AgentSet(v)
    }

    pub fn empty() -> Self {
        AgentSet(Vec::new())
    }

    pub fn full(n_agents: usize) -> Self {
        AgentSet((0..n_agents).collect())
    }

    pub fn singleton(agent: usize) -> Self {
        AgentSet(vec![agent])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, agent: usize) -> bool {
        self.0.binary_search(&agent).is_ok()
    }

    /// Position of `agent` inside the set, which is also its block index in
    /// any matrix laid out over this set.
    pub fn position(&self, agent: usize) -> Option<usize> {
        self.0.binary_search(&agent).ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn union(&self, other: &AgentSet) -> AgentSet {
        AgentSet::new(self.iter().chain(other.iter()))
    }

    pub fn intersection(&self, other: &AgentSet) -> AgentSet {
        AgentSet(self.iter().filter(|a| other.contains(*a)).collect())
    }

    pub fn is_subset_of(&self, other: &AgentSet) -> bool {
        self.iter().all(|a| other.contains(a))
    }

    /// Strict subset.
    pub fn is_proper_subset_of(&self, other: &AgentSet) -> bool {
        self.len() < other.len() && self.is_subset_of(other)
    }

    pub fn to_one_based(&self) -> Vec<usize> {
        self.0.iter().map(|a| a + 1).collect()
    }
}

impl fmt::Display for AgentSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, a) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{}", a + 1)?;
        }
        write!(f, "}}")
    }
}

impl FromIterator<usize> for AgentSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        AgentSet::new(iter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    State,
    Observation,
    Cost,
}

impl GraphKind {
    fn name(self) -> &'static str {
        match self {
            GraphKind::State => "state",
            GraphKind::Observation => "observation",
            GraphKind::Cost => "cost",
        }
    }
}

/// The state, observation and cost graphs over `n_agents` agents.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingGraphs {
    n_agents: usize,
    edges: [Vec<(usize, usize)>; 3],
    /// `in_sets[kind][i]` = { j : (j, i) in E_kind }.
    in_sets: [Vec<AgentSet>; 3],
}

fn kind_slot(kind: GraphKind) -> usize {
    match kind {
        GraphKind::State => 0,
        GraphKind::Observation => 1,
        GraphKind::Cost => 2,
    }
}

impl CouplingGraphs {
    /// Builds validated graphs from 0-based edge lists. Duplicate edges are
    /// dropped; self-loops are kept only when listed.
    pub fn new(
        n_agents: usize,
        edges_s: &[(usize, usize)],
        edges_o: &[(usize, usize)],
        edges_c: &[(usize, usize)],
    ) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::NoAgents);
        }
        let mut edges: [Vec<(usize, usize)>; 3] = Default::default();
        let mut in_sets: [Vec<AgentSet>; 3] = Default::default();
        for (kind, list) in [
            (GraphKind::State, edges_s),
            (GraphKind::Observation, edges_o),
            (GraphKind::Cost, edges_c),
        ] {
            let mut clean = Vec::with_capacity(list.len());
            for &(from, to) in list {
                if from >= n_agents || to >= n_agents {
                    return Err(Error::EdgeOutOfRange {
                        graph: kind.name(),
                        from: from + 1,
                        to: to + 1,
                        n_agents,
                    });
                }
                clean.push((from, to));
            }
            clean.sort_unstable();
            clean.dedup();
            let mut incoming = vec![Vec::new(); n_agents];
            for &(from, to) in &clean {
                incoming[to].push(from);
            }
            let slot = kind_slot(kind);
            in_sets[slot] = incoming.into_iter().map(AgentSet::new).collect();
            edges[slot] = clean;
        }
        Ok(CouplingGraphs {
            n_agents,
            edges,
            in_sets,
        })
    }

    /// Same as [`CouplingGraphs::new`] but with 1-based endpoints.
    pub fn from_one_based(
        n_agents: usize,
        edges_s: &[(usize, usize)],
        edges_o: &[(usize, usize)],
        edges_c: &[(usize, usize)],
    ) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::NoAgents);
        }
        let shift = |kind: GraphKind, list: &[(usize, usize)]| -> Result<Vec<(usize, usize)>> {
            list.iter()
                .map(|&(from, to)| {
                    if from == 0 || to == 0 || from > n_agents || to > n_agents {
                        Err(Error::EdgeOutOfRange {
                            graph: kind.name(),
                            from,
                            to,
                            n_agents,
                        })
                    } else {
                        Ok((from - 1, to - 1))
                    }
                })
                .collect()
        };
        CouplingGraphs::new(
            n_agents,
            &shift(GraphKind::State, edges_s)?,
            &shift(GraphKind::Observation, edges_o)?,
            &shift(GraphKind::Cost, edges_c)?,
        )
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Deduplicated, sorted 0-based edges of one graph.
    pub fn edges(&self, kind: GraphKind) -> &[(usize, usize)] {
        &self.edges[kind_slot(kind)]
    }

    pub fn edges_one_based(&self, kind: GraphKind) -> Vec<(usize, usize)> {
        self.edges(kind).iter().map(|&(a, b)| (a + 1, b + 1)).collect()
    }

    /// `I^i_kind`, the agents with an edge into `agent` in the given graph.
    pub fn in_set(&self, kind: GraphKind, agent: usize) -> &AgentSet {
        &self.in_sets[kind_slot(kind)][agent]
    }

    pub fn state_set(&self, agent: usize) -> &AgentSet {
        self.in_set(GraphKind::State, agent)
    }

    pub fn observation_set(&self, agent: usize) -> &AgentSet {
        self.in_set(GraphKind::Observation, agent)
    }

    pub fn cost_set(&self, agent: usize) -> &AgentSet {
        self.in_set(GraphKind::Cost, agent)
    }

    pub fn check_agent(&self, agent: usize) -> Result<()> {
        if agent < self.n_agents {
            Ok(())
        } else {
            Err(Error::AgentOutOfRange {
                agent: agent + 1,
                n_agents: self.n_agents,
            })
        }
    }

    /// Copy of these graphs with one more edge (0-based).
    pub fn with_edge(&self, kind: GraphKind, from: usize, to: usize) -> Result<Self> {
        let mut lists = self.edges.clone();
        lists[kind_slot(kind)].push((from, to));
        CouplingGraphs::new(self.n_agents, &lists[0], &lists[1], &lists[2])
    }

    /// Agents whose cost depends on `agent`: `{ l : (agent, l) in E_C }`.
    pub fn cost_dependents(&self, agent: usize) -> AgentSet {
        AgentSet::new(
            self.edges(GraphKind::Cost)
                .iter()
                .filter(|(from, _)| *from == agent)
                .map(|&(_, to)| to),
        )
    }

    /// Union of state and observation in-neighbours of `agent`.
    fn so_in_neighbours(&self, agent: usize) -> impl Iterator<Item = usize> + '_ {
        self.state_set(agent)
            .iter()
            .chain(self.observation_set(agent).iter())
    }

    fn so_out_neighbours(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_agents];
        for kind in [GraphKind::State, GraphKind::Observation] {
            for &(from, to) in self.edges(kind) {
                out[from].push(to);
            }
        }
        out
    }

    /// Checks that `set` is closed under one step of state/observation
    /// in-neighbours, which is equivalent to closure under reachability.
    pub fn check_closed(&self, set: &AgentSet) -> Result<()> {
        for member in set.iter() {
            self.check_agent(member)?;
            if let Some(missing) = self.so_in_neighbours(member).find(|j| !set.contains(*j)) {
                return Err(Error::NotClosed {
                    missing: missing + 1,
                    member: member + 1,
                });
            }
        }
        Ok(())
    }
}

/// `R^i_SO`: agents with a directed path to `agent` in the union of the state
/// and observation graphs, plus `agent` itself.
pub fn reachability_set(graphs: &CouplingGraphs, agent: usize) -> Result<AgentSet> {
    graphs.check_agent(agent)?;
    let mut seen = vec![false; graphs.n_agents()];
    let mut queue = VecDeque::from([agent]);
    seen[agent] = true;
    while let Some(v) = queue.pop_front() {
        for u in graphs.so_in_neighbours(v) {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    Ok(mask_to_set(&seen))
}

/// Agents reachable from `agent` along state/observation edges, plus `agent`
/// (reachability in the transposed graph).
pub fn descendant_set(graphs: &CouplingGraphs, agent: usize) -> Result<AgentSet> {
    graphs.check_agent(agent)?;
    let out = graphs.so_out_neighbours();
    let mut seen = vec![false; graphs.n_agents()];
    let mut queue = VecDeque::from([agent]);
    seen[agent] = true;
    while let Some(v) = queue.pop_front() {
        for &u in &out[v] {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    Ok(mask_to_set(&seen))
}

fn mask_to_set(mask: &[bool]) -> AgentSet {
    AgentSet(
        mask.iter()
            .enumerate()
            .filter_map(|(k, &b)| b.then_some(k))
            .collect(),
    )
}

/// `I^i_Q`: union of the reachability sets of the agents in `agent`'s cost.
pub fn value_dependence_set(graphs: &CouplingGraphs, agent: usize) -> Result<AgentSet> {
    graphs.check_agent(agent)?;
    let mut acc = AgentSet::empty();
    for k in graphs.cost_set(agent).iter() {
        acc = acc.union(&reachability_set(graphs, k)?);
    }
    Ok(acc)
}

/// `I^i_GD = { j : i in I^j_Q }`.
pub fn gradient_dependence_set(graphs: &CouplingGraphs, agent: usize) -> Result<AgentSet> {
    graphs.check_agent(agent)?;
    let mut out = Vec::new();
    for j in 0..graphs.n_agents() {
        if value_dependence_set(graphs, j)?.contains(agent) {
            out.push(j);
        }
    }
    Ok(AgentSet(out))
}

/// `I^i_Q̂`: union of value sets over the gradient dependency set.
pub fn direct_dependence_set(graphs: &CouplingGraphs, agent: usize) -> Result<AgentSet> {
    let mut acc = AgentSet::empty();
    for j in gradient_dependence_set(graphs, agent)?.iter() {
        acc = acc.union(&value_dependence_set(graphs, j)?);
    }
    Ok(acc)
}

/// All dependency sets for every agent, computed once.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencySets {
    reach: Vec<AgentSet>,
    value: Vec<AgentSet>,
    gradient: Vec<AgentSet>,
    direct: Vec<AgentSet>,
}

impl DependencySets {
    pub fn compute(graphs: &CouplingGraphs) -> Self {
        let n = graphs.n_agents();
        let reach: Vec<AgentSet> = (0..n)
            .map(|i| reachability_set(graphs, i).expect("agent in range"))
            .collect();
        let value: Vec<AgentSet> = (0..n)
            .map(|i| {
                graphs
                    .cost_set(i)
                    .iter()
                    .fold(AgentSet::empty(), |acc, k| acc.union(&reach[k]))
            })
            .collect();
        let mut grad = vec![Vec::new(); n];
        for (j, set) in value.iter().enumerate() {
            for i in set.iter() {
                grad[i].push(j);
            }
        }
        let gradient: Vec<AgentSet> = grad.into_iter().map(AgentSet::new).collect();
        let direct = gradient
            .iter()
            .map(|g| g.iter().fold(AgentSet::empty(), |acc, j| acc.union(&value[j])))
            .collect();
        DependencySets {
            reach,
            value,
            gradient,
            direct,
        }
    }

    /// Every set replaced by the full agent set.
    pub fn full(n_agents: usize) -> Self {
        let all = vec![AgentSet::full(n_agents); n_agents];
        DependencySets {
            reach: all.clone(),
            value: all.clone(),
            gradient: all.clone(),
            direct: all,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.value.len()
    }

    pub fn reachability(&self, agent: usize) -> &AgentSet {
        &self.reach[agent]
    }

    pub fn value(&self, agent: usize) -> &AgentSet {
        &self.value[agent]
    }

    pub fn gradient(&self, agent: usize) -> &AgentSet {
        &self.gradient[agent]
    }

    pub fn direct(&self, agent: usize) -> &AgentSet {
        &self.direct[agent]
    }

    /// Edges `(j, i)` of the value dependency graph, one per `j in I^i_Q`.
    pub fn value_edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .value
            .iter()
            .enumerate()
            .flat_map(|(i, set)| set.iter().map(move |j| (j, i)))
            .collect();
        edges.sort_unstable();
        edges
    }

    /// `max_i (|I^i_Q̂| - |I^i_Q|)`.
    pub fn max_direct_gap(&self) -> usize {
        self.direct
            .iter()
            .zip(&self.value)
            .map(|(d, v)| d.len() - v.len())
            .max()
            .unwrap_or(0)
    }
}

/// Outcome of the graphical tests for strictly smaller regression scopes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    /// 1-based agent index `i`.
    pub agent: usize,
    /// Graph test for `I^i_Q̂` being a proper subset of all agents.
    pub cond_a: bool,
    /// Direct check of the same property: `|I^i_Q̂| < N`.
    pub direct_set_is_proper: bool,
    /// 1-based `j`, when part (b) was evaluated.
    pub other: Option<usize>,
    /// Graph test for `I^j_Q` being a proper subset of `I^i_Q̂`.
    pub cond_b: Option<bool>,
    /// Direct set comparison for part (b).
    pub value_set_is_proper_subset: Option<bool>,
}

/// Evaluates the reverse-reachability / cost-transpose characterisations.
///
/// With `D(i)` the agents reachable from `i` (including `i`) and `C'(m)` the
/// agents whose cost depends on `m`:
/// * part (a) holds when some agent `k` has `C'(m) ∩ C'(p) = ∅` for every
///   `m ∈ D(i)`, `p ∈ D(k)`;
/// * part (b), for `j ∈ I^i_GD`, holds when some `k ∉ I^j_Q` has
///   `m ∈ D(i)`, `p ∈ D(k)` with a non-empty `C'(m) ∩ C'(p)` (such an
///   intersection always lies inside `I^i_GD`).
pub fn check_graphical_conditions(
    graphs: &CouplingGraphs,
    deps: &DependencySets,
    agent: usize,
    other: Option<usize>,
) -> Result<ConditionReport> {
    graphs.check_agent(agent)?;
    let n = graphs.n_agents();
    let descendants: Vec<AgentSet> = (0..n)
        .map(|k| descendant_set(graphs, k))
        .collect::<Result<_>>()?;
    let dependents: Vec<AgentSet> = (0..n).map(|m| graphs.cost_dependents(m)).collect();

    let shares_cost_successor = |a: usize, b: usize| -> bool {
        descendants[a].iter().any(|m| {
            descendants[b]
                .iter()
                .any(|p| !dependents[m].intersection(&dependents[p]).is_empty())
        })
    };

    let cond_a = (0..n).any(|k| !shares_cost_successor(agent, k));
    let direct_set_is_proper = deps.direct(agent).len() < n;

    let (cond_b, value_set_is_proper_subset) = match other {
        None => (None, None),
        Some(j) => {
            graphs.check_agent(j)?;
            if !deps.gradient(agent).contains(j) {
                return Err(Error::NotInGradientSet {
                    i: agent + 1,
                    j: j + 1,
                });
            }
            let value_j = deps.value(j);
            let cond = (0..n)
                .filter(|k| !value_j.contains(*k))
                .any(|k| shares_cost_successor(agent, k));
            (
                Some(cond),
                Some(value_j.is_proper_subset_of(deps.direct(agent))),
            )
        }
    };

    Ok(ConditionReport {
        agent: agent + 1,
        cond_a,
        direct_set_is_proper,
        other: other.map(|j| j + 1),
        cond_b,
        value_set_is_proper_subset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decoupled(n: usize) -> CouplingGraphs {
        let selfs: Vec<_> = (0..n).map(|i| (i, i)).collect();
        CouplingGraphs::new(n, &selfs, &selfs, &selfs).unwrap()
    }

    #[test]
    fn decoupled_agents_depend_only_on_themselves() {
        let g = decoupled(2);
        assert_eq!(g.state_set(0), &AgentSet::singleton(0));
        let deps = DependencySets::compute(&g);
        for i in 0..2 {
            assert_eq!(deps.value(i), &AgentSet::singleton(i));
            assert_eq!(deps.gradient(i), &AgentSet::singleton(i));
            assert_eq!(deps.direct(i), &AgentSet::singleton(i));
            let report = check_graphical_conditions(&g, &deps, i, None).unwrap();
            assert!(report.cond_a);
            assert!(report.direct_set_is_proper);
        }
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        let err = CouplingGraphs::from_one_based(8, &[(9, 1)], &[], &[]).unwrap_err();
        assert_eq!(
            err,
            Error::EdgeOutOfRange {
                graph: "state",
                from: 9,
                to: 1,
                n_agents: 8
            }
        );
        assert_eq!(
            CouplingGraphs::new(0, &[], &[], &[]).unwrap_err(),
            Error::NoAgents
        );
    }

    #[test]
    fn duplicate_edges_are_dropped() {
        let g = CouplingGraphs::new(2, &[(0, 1), (0, 1)], &[], &[]).unwrap();
        assert_eq!(g.edges(GraphKind::State), &[(0, 1)]);
    }

    #[test]
    fn chain_reachability() {
        let g = CouplingGraphs::new(3, &[(0, 1)], &[(1, 2)], &[]).unwrap();
        assert_eq!(reachability_set(&g, 2).unwrap(), AgentSet::new([0, 1, 2]));
        assert_eq!(descendant_set(&g, 0).unwrap(), AgentSet::new([0, 1, 2]));
    }

    #[test]
    fn isolated_agent_reaches_only_itself() {
        let g = CouplingGraphs::new(6, &[], &[], &[]).unwrap();
        assert_eq!(reachability_set(&g, 4).unwrap(), AgentSet::singleton(4));
        assert!(reachability_set(&g, 6).is_err());
    }

    #[test]
    fn complete_cost_graph_fails_condition_a() {
        let n = 4;
        let selfs: Vec<_> = (0..n).map(|i| (i, i)).collect();
        let all: Vec<_> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        let g = CouplingGraphs::new(n, &selfs, &selfs, &all).unwrap();
        let deps = DependencySets::compute(&g);
        for i in 0..n {
            let r = check_graphical_conditions(&g, &deps, i, None).unwrap();
            assert!(!r.cond_a);
            assert!(!r.direct_set_is_proper);
        }
    }

    #[test]
    fn condition_b_requires_gradient_member() {
        let g = decoupled(3);
        let deps = DependencySets::compute(&g);
        let err = check_graphical_conditions(&g, &deps, 0, Some(1)).unwrap_err();
        assert_eq!(err, Error::NotInGradientSet { i: 1, j: 2 });
    }

    #[test]
    fn free_functions_match_bulk_computation() {
        let g = CouplingGraphs::new(
            4,
            &[(0, 1), (1, 1), (2, 3)],
            &[(3, 0), (0, 0)],
            &[(1, 0), (2, 2), (3, 3), (0, 1)],
        )
        .unwrap();
        let deps = DependencySets::compute(&g);
        for i in 0..4 {
            assert_eq!(&value_dependence_set(&g, i).unwrap(), deps.value(i));
            assert_eq!(&gradient_dependence_set(&g, i).unwrap(), deps.gradient(i));
            assert_eq!(&direct_dependence_set(&g, i).unwrap(), deps.direct(i));
        }
    }

    #[test]
    fn closure_check_names_missing_agent() {
        let g = CouplingGraphs::new(3, &[(0, 1)], &[], &[]).unwrap();
        let err = g.check_closed(&AgentSet::new([1, 2])).unwrap_err();
        assert_eq!(
            err,
            Error::NotClosed {
                missing: 1,
                member: 2
            }
        );
        g.check_closed(&AgentSet::new([0, 1])).unwrap();
    }
}
