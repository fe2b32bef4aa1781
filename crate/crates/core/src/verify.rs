//! Self-checks behind the `verify` command and the acceptance test target.
//!
//! Each check builds its own inputs from a fixed seed, compares the library
//! against an independent computation and returns a [`CheckOutcome`].

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::Result;
use crate::experiments::{
    generate_example1, generate_example2, run_experiment, timing_benchmark, BenchSettings, DynamicsParams,
    ExperimentConfig, GraphSpec, TimingRow,
};
use crate::graph::{
    check_graphical_conditions, AgentSet, CouplingGraphs, DependencySets, GraphKind,
};
use crate::lqr::{
    control_indices, extract_subsystem, lyapunov_solve, on_policy_value, rollout, spectral_radius, stack_identity,
    state_indices, svec, true_q_matrix, value_matrix, AgentCost, Closure, InitialState, MultiAgentSystem,
    StructuredPolicy, Subsystem,
};
use crate::lstdq::{build_regression, lstdq_solve};
use crate::malspi::{run_malspi_with_sets, Architecture, MalspiConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} {}: {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn outcome(id: u8, name: &'static str, start: Instant, result: Result<(bool, String)>) -> CheckOutcome {
    let (passed, detail) = match result {
        Ok(pair) => pair,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        id,
        name,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random graphs with every self-loop present and each other edge drawn
/// independently with probability `p`.
pub fn random_graphs<R: Rng>(rng: &mut R, n: usize, p: f64) -> Result<CouplingGraphs> {
    let mut lists: [Vec<(usize, usize)>; 3] = Default::default();
    for list in &mut lists {
        for from in 0..n {
            for to in 0..n {
                if from == to || rng.random_bool(p) {
                    list.push((from, to));
                }
            }
        }
    }
    CouplingGraphs::new(n, &lists[0], &lists[1], &lists[2])
}

/// Random system on `graphs` with a random structured gain, with `A` and
/// `B` rescaled so that `rho(A + B K) = target_rho`.
pub fn random_system(
    rng: &mut ChaCha8Rng,
    graphs: CouplingGraphs,
    n_x: usize,
    n_u: usize,
    target_rho: f64,
    sigma_w: f64,
) -> Result<(MultiAgentSystem, StructuredPolicy)> {
    let n = graphs.n_agents();
    loop {
        let mut a = DMatrix::zeros(n * n_x, n * n_x);
        let mut b = DMatrix::zeros(n * n_x, n * n_u);
        let mut k = DMatrix::zeros(n * n_u, n * n_x);
        for i in 0..n {
            for j in graphs.state_set(i).iter() {
                a.view_mut((i * n_x, j * n_x), (n_x, n_x)).copy_from(&gaussian_matrix(rng, n_x, n_x));
                b.view_mut((i * n_x, j * n_u), (n_x, n_u)).copy_from(&gaussian_matrix(rng, n_x, n_u));
            }
            for j in graphs.observation_set(i).iter() {
                k.view_mut((i * n_u, j * n_x), (n_u, n_x))
                    .copy_from(&(gaussian_matrix(rng, n_u, n_x) * 0.5));
            }
        }
        let rho = spectral_radius(&(&a + &b * &k));
        if rho < 1e-3 {
            continue;
        }
        let scale = target_rho / rho;
        a *= scale;
        b *= scale;
        let costs = (0..n)
            .map(|i| {
                let c = graphs.cost_set(i).len();
                let ms = gaussian_matrix(rng, c * n_x, c * n_x);
                let mr = gaussian_matrix(rng, c * n_u, c * n_u);
                AgentCost {
                    s: (&ms * ms.transpose()) / (c * n_x) as f64,
                    r: (&mr * mr.transpose()) / (c * n_u) as f64 + DMatrix::identity(c * n_u, c * n_u) * 0.5,
                }
            })
            .collect();
        let system = MultiAgentSystem::new(graphs.clone(), n_x, n_u, a, b, costs, sigma_w)?;
        let policy = StructuredPolicy::for_system(&system, k)?;
        return Ok((system, policy));
    }
}

fn random_instance(rng: &mut ChaCha8Rng, max_agents: usize, max_dim: usize) -> Result<(MultiAgentSystem, StructuredPolicy)> {
    let n = rng.random_range(2..=max_agents);
    let dim = rng.random_range(1..=max_dim);
    let p = rng.random_range(0.1..0.4);
    let graphs = random_graphs(rng, n, p)?;
    random_system(rng, graphs, dim, dim, 0.8, 1.0)
}

/// Subsystem carrying the averaged global cost over all agents.
fn averaged_global(system: &MultiAgentSystem, policy: &StructuredPolicy) -> Subsystem {
    Subsystem {
        index_set: AgentSet::full(system.n_agents()),
        a: system.a().clone(),
        b: system.b().clone(),
        s: system.global_s().clone(),
        r: system.global_r().clone(),
        k: policy.matrix().clone(),
    }
}

fn set_coordinates(set: &AgentSet, n_x: usize, n_u: usize, state_dim: usize) -> Vec<usize> {
    let mut idx = state_indices(set, n_x);
    idx.extend(control_indices(set, n_u).into_iter().map(|c| c + state_dim));
    idx
}

/// Criterion 1: per-agent Q-matrices vanish outside their value set, match
/// the restricted computation, and average to the global Q.
pub fn check_value_decomposition(systems: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut off_block, mut restricted, mut global) = (0.0f64, 0.0f64, 0.0f64);
        for _ in 0..systems {
            let (system, policy) = random_instance(&mut rng, 6, 2)?;
            let n = system.n_agents();
            let (n_x, n_u) = (system.n_x(), system.n_u());
            let deps = DependencySets::compute(system.graphs());
            let all = AgentSet::full(n);
            let mut sum = DMatrix::zeros(system.state_dim() + system.control_dim(), system.state_dim() + system.control_dim());
            for i in 0..n {
                let owner = AgentSet::singleton(i);
                let q_full = true_q_matrix(&extract_subsystem(&system, &policy, &all, &owner, Closure::Require)?)?;
                let keep = set_coordinates(deps.value(i), n_x, n_u, system.state_dim());
                for r in 0..q_full.nrows() {
                    for c in 0..q_full.ncols() {
                        if !(keep.contains(&r) && keep.contains(&c)) {
                            off_block = off_block.max(q_full[(r, c)].abs());
                        }
                    }
                }
                let q_local =
                    true_q_matrix(&extract_subsystem(&system, &policy, deps.value(i), &owner, Closure::Require)?)?;
                let block = q_full.select_rows(&keep).select_columns(&keep);
                restricted = restricted.max((block - q_local).amax());
                sum += q_full;
            }
            let q_avg = true_q_matrix(&averaged_global(&system, &policy))?;
            global = global.max((sum / n as f64 - q_avg).amax());
        }
        let passed = off_block <= 1e-9 && restricted <= 1e-9 && global <= 1e-9;
        Ok((
            passed,
            format!(
                "{systems} systems, max off-block {off_block:.1e}, restricted mismatch {restricted:.1e}, \
                 global mismatch {global:.1e} (tol 1e-9)"
            ),
        ))
    };
    outcome(1, "value decomposition", start, run())
}

/// Stationary average of the averaged global cost, `sigma_w^2 tr P`.
fn analytic_objective(system: &MultiAgentSystem, policy: &StructuredPolicy) -> Result<f64> {
    let p = value_matrix(&averaged_global(system, policy))?;
    Ok(system.sigma_w().powi(2) * p.trace())
}

/// Sum over `j` in the gradient set of the exact per-agent gradients of agent
/// `i`'s observed gain, each computed on `j`'s own value set.
pub fn decomposed_gradient(
    system: &MultiAgentSystem,
    policy: &StructuredPolicy,
    deps: &DependencySets,
    agent: usize,
) -> Result<DMatrix<f64>> {
    let (n_x, n_u) = (system.n_x(), system.n_u());
    let obs = policy.observation_set(agent);
    let mut grad = DMatrix::zeros(n_u, obs.len() * n_x);
    for j in deps.gradient(agent).iter() {
        let set = deps.value(j);
        let sub = extract_subsystem(system, policy, set, &AgentSet::singleton(j), Closure::Require)?;
        let q = true_q_matrix(&sub)?;
        let cov = lyapunov_solve(
            &sub.closed_loop(),
            &(DMatrix::identity(sub.state_dim(), sub.state_dim()) * system.sigma_w().powi(2)),
        )?;
        let u_row = set.len() * n_x + set.position(agent).expect("agent is in its dependents' sets") * n_u;
        let cols: Vec<usize> = obs
            .iter()
            .flat_map(|o| {
                let p = set.position(o).expect("value sets are closed under observation");
                p * n_x..(p + 1) * n_x
            })
            .collect();
        grad += q.rows(u_row, n_u) * stack_identity(&sub.k) * cov.select_columns(&cols) * 2.0;
    }
    Ok(grad / system.n_agents() as f64)
}

/// Central finite differences of the averaged objective over agent `i`'s
/// observed gain.
pub fn finite_difference_gradient(system: &MultiAgentSystem, policy: &StructuredPolicy, agent: usize, h: f64) -> Result<DMatrix<f64>> {
    let base = policy.observed_gain(agent);
    let mut grad = DMatrix::zeros(base.nrows(), base.ncols());
    for r in 0..base.nrows() {
        for c in 0..base.ncols() {
            let mut plus = policy.clone();
            let mut g = base.clone();
            g[(r, c)] += h;
            plus.set_observed_gain(agent, &g);
            let mut minus = policy.clone();
            g[(r, c)] -= 2.0 * h;
            minus.set_observed_gain(agent, &g);
            grad[(r, c)] = (analytic_objective(system, &plus)? - analytic_objective(system, &minus)?) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// Criterion 2: decomposed gradient against finite differences.
pub fn check_gradient_decomposition(systems: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..systems {
            let (system, policy) = random_instance(&mut rng, 4, 2)?;
            let deps = DependencySets::compute(system.graphs());
            for i in 0..system.n_agents() {
                let analytic = decomposed_gradient(&system, &policy, &deps, i)?;
                let fd = finite_difference_gradient(&system, &policy, i, 1e-5)?;
                let rel = (&fd - &analytic).norm() / analytic.norm().max(1e-12);
                worst = worst.max(rel);
            }
        }
        Ok((worst <= 1e-4, format!("{systems} systems, max relative error {worst:.2e} (tol 1e-4)")))
    };
    outcome(2, "gradient decomposition", start, run())
}

/// `lambda + z^T Q z - c(z) - E[Q(z')]` for the exact Q of `sub`.
pub fn bellman_residual(sub: &Subsystem, q: &DMatrix<f64>, sigma_w: f64, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let m = on_policy_value(q, &sub.k);
    let lambda = sigma_w * sigma_w * m.trace();
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    let stage = x.dot(&(&sub.s * x)) + u.dot(&(&sub.r * u));
    let next = &sub.a * x + &sub.b * u;
    let expected_next = next.dot(&(&m * &next)) + sigma_w * sigma_w * m.trace();
    lambda + z.dot(&(q * &z)) - stage - expected_next
}

/// Criterion 3: the exact Q and average cost satisfy the average-cost
/// Bellman equation for every agent and for the global problem.
pub fn check_bellman(systems: usize, points: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..systems {
            let (system, policy) = random_instance(&mut rng, 6, 2)?;
            let deps = DependencySets::compute(system.graphs());
            let mut subs = Vec::new();
            for i in 0..system.n_agents() {
                subs.push(extract_subsystem(&system, &policy, deps.value(i), &AgentSet::singleton(i), Closure::Require)?);
            }
            subs.push(averaged_global(&system, &policy));
            for sub in &subs {
                let q = true_q_matrix(sub)?;
                for _ in 0..points {
                    let x = gaussian_vector(&mut rng, sub.state_dim());
                    let u = gaussian_vector(&mut rng, sub.control_dim());
                    worst = worst.max(bellman_residual(sub, &q, system.sigma_w(), &x, &u).abs());
                }
            }
        }
        Ok((
            worst <= 1e-9,
            format!("{systems} systems x {points} points, max residual {worst:.1e} (tol 1e-9)"),
        ))
    };
    outcome(3, "Bellman residual", start, run())
}

/// Largest `||q_hat - q_true|| / max(1, ||q_true||)` over agents' value sets
/// from a rollout without process noise.
pub fn noise_free_lstdq_error(system: &MultiAgentSystem, play: &StructuredPolicy, eval: &StructuredPolicy, seed: u64) -> Result<f64> {
    let deps = DependencySets::compute(system.graphs());
    let largest = (0..system.n_agents()).map(|i| deps.value(i).len()).max().unwrap_or(0);
    let d = crate::lqr::svec_len(largest * (system.n_x() + system.n_u()));
    let batch = rollout(system, play, 2 * d + 50, 1.0, &InitialState::standard(system.state_dim()), seed)?;
    let mut worst = 0.0f64;
    for i in 0..system.n_agents() {
        let owner = AgentSet::singleton(i);
        let bundle = build_regression(&batch, system, eval, deps.value(i), &owner, Closure::Require)?;
        let est = lstdq_solve(&bundle)?;
        let truth = svec(&true_q_matrix(&extract_subsystem(system, eval, deps.value(i), &owner, Closure::Require)?)?)?;
        worst = worst.max((&est.q - &truth).norm() / truth.norm().max(1.0));
    }
    Ok(worst)
}

/// Two scalar agents, agent 1 driving agent 2, for the sample-rate check.
pub fn rate_system(sigma_w: f64) -> Result<(MultiAgentSystem, StructuredPolicy, StructuredPolicy)> {
    let graphs = CouplingGraphs::new(2, &[(0, 0), (1, 1), (0, 1)], &[(0, 0), (1, 1), (0, 1)], &[(0, 0), (1, 1)])?;
    let a = DMatrix::from_row_slice(2, 2, &[0.6, 0.0, 0.3, 0.5]);
    let b = DMatrix::identity(2, 2);
    let costs = vec![
        AgentCost {
            s: DMatrix::from_element(1, 1, 2.0),
            r: DMatrix::from_element(1, 1, 1.0),
        },
        AgentCost {
            s: DMatrix::from_element(1, 1, 1.0),
            r: DMatrix::from_element(1, 1, 1.0),
        },
    ];
    let system = MultiAgentSystem::new(graphs, 1, 1, a, b, costs, sigma_w)?;
    let play = StructuredPolicy::zeros(system.graphs(), 1, 1);
    let eval = StructuredPolicy::for_system(&system, DMatrix::from_row_slice(2, 2, &[-0.3, 0.0, -0.1, -0.2]))?;
    Ok((system, play, eval))
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median estimation error of both agents' Q over `seeds` rollouts of each
/// horizon.
pub fn lstdq_error_curve(horizons: &[usize], seeds: u64) -> Result<Vec<f64>> {
    let (system, play, eval) = rate_system(1.0)?;
    let deps = DependencySets::compute(system.graphs());
    let truths: Vec<DVector<f64>> = (0..2)
        .map(|i| {
            let sub = extract_subsystem(&system, &eval, deps.value(i), &AgentSet::singleton(i), Closure::Require)?;
            svec(&true_q_matrix(&sub)?)
        })
        .collect::<Result<_>>()?;
    horizons
        .iter()
        .map(|&t| {
            let mut errs = (0..seeds)
                .map(|s| {
                    let batch = rollout(&system, &play, t, 1.0, &InitialState::standard(2), s * 7919 + t as u64)?;
                    let mut sq = 0.0;
                    for (i, truth) in truths.iter().enumerate() {
                        let owner = AgentSet::singleton(i);
                        let bundle = build_regression(&batch, &system, &eval, deps.value(i), &owner, Closure::Require)?;
                        sq += (lstdq_solve(&bundle)?.q - truth).norm_squared();
                    }
                    Ok(sq.sqrt())
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(median(&mut errs))
        })
        .collect()
}

/// Criterion 4: exact recovery without process noise and the `1/sqrt(T)`
/// error rate with unit noise.
pub fn check_lstdq(seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut exact = 0.0f64;
        for k in 0..10 {
            let (system, policy) = random_instance(&mut rng, 4, 2)?;
            let quiet = system.with_sigma_w(0.0)?;
            let mut shifted = policy.matrix().clone();
            for v in shifted.iter_mut() {
                if *v != 0.0 {
                    *v += 0.05 * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let eval = StructuredPolicy::for_system(&quiet, shifted)?;
            if spectral_radius(&(quiet.a() + quiet.b() * eval.matrix())) >= 1.0 {
                continue;
            }
            exact = exact.max(noise_free_lstdq_error(&quiet, &policy, &eval, seed + k)?);
        }
        let horizons = [500usize, 2000, 8000, 32000];
        let curve = lstdq_error_curve(&horizons, 20)?;
        let slope = log_log_slope(&horizons.map(|t| t as f64), &curve);
        let passed = exact <= 1e-6 && (slope + 0.5).abs() <= 0.15;
        Ok((
            passed,
            format!(
                "noise-free max relative error {exact:.1e} (tol 1e-6), median error {} -> slope {slope:.3} \
                 (target -0.5 +/- 0.15)",
                curve.iter().map(|e| format!("{e:.3}")).collect::<Vec<_>>().join(", ")
            ),
        ))
    };
    outcome(4, "LSTDQ exactness and rate", start, run())
}

/// Reachability by repeated boolean matrix products: `reach[a][b]` when a
/// path of length `1..=n` leads from `a` to `b`.
pub fn transitive_closure_oracle(graphs: &CouplingGraphs) -> Vec<Vec<bool>> {
    let n = graphs.n_agents();
    let mut adj = vec![vec![false; n]; n];
    for kind in [GraphKind::State, GraphKind::Observation] {
        for &(from, to) in graphs.edges(kind) {
            adj[from][to] = true;
        }
    }
    let mut reach = adj.clone();
    let mut power = adj.clone();
    for _ in 1..n {
        let mut next = vec![vec![false; n]; n];
        for a in 0..n {
            for m in 0..n {
                if power[a][m] {
                    for b in 0..n {
                        next[a][b] |= adj[m][b];
                    }
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                reach[a][b] |= next[a][b];
            }
        }
        power = next;
    }
    reach
}

/// Compares every dependency set and graphical condition against the oracle;
/// returns a description of the first mismatch.
pub fn graph_mismatch(graphs: &CouplingGraphs) -> Result<Option<String>> {
    let n = graphs.n_agents();
    let deps = DependencySets::compute(graphs);
    let reach = transitive_closure_oracle(graphs);
    let r_oracle: Vec<AgentSet> = (0..n).map(|i| (0..n).filter(|&j| j == i || reach[j][i]).collect()).collect();
    for i in 0..n {
        if deps.reachability(i) != &r_oracle[i] {
            return Ok(Some(format!("R_SO of agent {} is {} (oracle {})", i + 1, deps.reachability(i), r_oracle[i])));
        }
        let value: AgentSet = graphs
            .cost_set(i)
            .iter()
            .fold(AgentSet::empty(), |acc, k| acc.union(&r_oracle[k]));
        if deps.value(i) != &value {
            return Ok(Some(format!("value set of agent {} is {} (oracle {value})", i + 1, deps.value(i))));
        }
        for j in deps.value(i).iter() {
            if !r_oracle[j].is_subset_of(deps.value(i)) {
                return Ok(Some(format!("value set of agent {} is not closed at {}", i + 1, j + 1)));
            }
        }
        for j in 0..n {
            if deps.gradient(i).contains(j) != deps.value(j).contains(i) {
                return Ok(Some(format!("duality fails for ({}, {})", i + 1, j + 1)));
            }
        }
        let report = check_graphical_conditions(graphs, &deps, i, None)?;
        if report.cond_a != report.direct_set_is_proper {
            return Ok(Some(format!("part (a) disagrees for agent {}", i + 1)));
        }
        for j in deps.gradient(i).iter() {
            let r = check_graphical_conditions(graphs, &deps, i, Some(j))?;
            if r.cond_b != r.value_set_is_proper_subset {
                return Ok(Some(format!("part (b) disagrees for ({}, {})", i + 1, j + 1)));
            }
        }
    }
    Ok(None)
}

/// Criterion 5: dependency sets and graphical conditions on random graphs,
/// plus the structural facts of the two benchmark networks.
pub fn check_graphs(count: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let run = || -> Result<(bool, String)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..count {
            let n = rng.random_range(1..=8);
            let p = rng.random_range(0.05..0.5);
            let graphs = random_graphs(&mut rng, n, p)?;
            if let Some(m) = graph_mismatch(&graphs)? {
                return Ok((false, format!("random graph {k}: {m}")));
            }
        }
        for n in [8, 20, 40] {
            let g1 = generate_example1(n)?;
            let d1 = DependencySets::compute(&g1);
            let mut eq: Vec<(usize, usize)> = d1.value_edges();
            eq.sort_unstable();
            if eq != g1.edges(GraphKind::Observation) {
                return Ok((false, format!("example 1, N = {n}: value graph differs from observation graph")));
            }
            if d1.max_direct_gap() != 4 {
                return Ok((false, format!("example 1, N = {n}: max gap {}", d1.max_direct_gap())));
            }
            let d2 = DependencySets::compute(&generate_example2(n)?);
            if d2.direct(0) != &AgentSet::full(n) {
                return Ok((false, format!("example 2, N = {n}: leader's direct set is {}", d2.direct(0))));
            }
        }
        Ok((
            true,
            format!("{count} random graphs match oracles; example facts hold for N = 8, 20, 40"),
        ))
    };
    outcome(5, "graph suite", start, run())
}

/// Settings of the two-example learning comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationSettings {
    pub seeds: u64,
    /// Per-agent state and control dimension.
    pub agent_dim: usize,
    pub alpha: f64,
    pub dynamics: DynamicsParams,
    /// Iteration at which the direct-vs-indirect gap is measured.
    pub gap_iteration: usize,
}

impl Default for ReplicationSettings {
    fn default() -> Self {
        ReplicationSettings {
            seeds: 20,
            agent_dim: 2,
            alpha: 1e-4,
            dynamics: DynamicsParams {
                a_diag: 0.5,
                ..DynamicsParams::default()
            },
            gap_iteration: 5,
        }
    }
}

impl ReplicationSettings {
    pub fn config(&self, graph: GraphSpec) -> ExperimentConfig {
        ExperimentConfig {
            graph,
            n_x: self.agent_dim,
            n_u: self.agent_dim,
            alpha: self.alpha,
            dynamics: self.dynamics.clone(),
            seeds: (0..self.seeds).collect(),
            ..ExperimentConfig::default()
        }
    }
}

/// Mean final cost per architecture and the mean direct-minus-indirect cost
/// at the gap iteration, for one example.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub centralized: f64,
    pub undecomposed_direct: f64,
    pub direct: f64,
    pub indirect: f64,
    pub early_gap: f64,
}

impl ReplicationSummary {
    pub fn ordered(&self) -> bool {
        self.indirect <= self.direct && self.direct <= self.centralized.min(self.undecomposed_direct)
    }
}

pub fn replicate(settings: &ReplicationSettings, graph: GraphSpec) -> Result<ReplicationSummary> {
    let cfg = settings.config(graph);
    let out = run_experiment(&cfg, None)?;
    let last = cfg.iterations;
    let mean = |arch| out.table.mean_cost(arch, last).unwrap_or(f64::NAN);
    let at = settings.gap_iteration.min(last);
    let gap = out.table.mean_cost(Architecture::Direct, at).unwrap_or(f64::NAN)
        - out.table.mean_cost(Architecture::Indirect, at).unwrap_or(f64::NAN);
    Ok(ReplicationSummary {
        centralized: mean(Architecture::Centralized),
        undecomposed_direct: mean(Architecture::UndecomposedDirect),
        direct: mean(Architecture::Direct),
        indirect: mean(Architecture::Indirect),
        early_gap: gap,
    })
}

/// Criterion 6: architecture ordering on both examples and a larger early
/// gap on the leader-follower network.
pub fn check_replication(settings: &ReplicationSettings) -> CheckOutcome {
    let start = Instant::now();
    let run = || -> Result<(bool, String)> {
        let e1 = replicate(settings, GraphSpec::Example1)?;
        let e2 = replicate(settings, GraphSpec::Example2)?;
        let describe = |s: &ReplicationSummary| {
            format!(
                "I {:.1} D {:.1} U {:.1} C {:.1} gap {:.2}",
                s.indirect, s.direct, s.undecomposed_direct, s.centralized, s.early_gap
            )
        };
        let passed = e1.ordered() && e2.ordered() && e2.early_gap > e1.early_gap;
        Ok((
            passed,
            format!(
                "{} seeds, n_x = n_u = {}, alpha {:e}; example 1: {}; example 2: {}",
                settings.seeds,
                settings.agent_dim,
                settings.alpha,
                describe(&e1),
                describe(&e2)
            ),
        ))
    };
    outcome(6, "learning-curve replication", start, run())
}

/// Benchmark configuration: scalar agents on the ring network, with a
/// horizon long enough for the centralized regression at `N = 20`.
pub fn timing_config() -> ExperimentConfig {
    ExperimentConfig {
        n_x: 1,
        n_u: 1,
        horizon: 1000,
        eval_horizon: 100,
        ..ExperimentConfig::default()
    }
}

fn median_ms(rows: &[TimingRow], arch: Architecture, n: usize) -> Option<f64> {
    rows.iter()
        .find(|r| r.architecture == arch && r.n_agents == n)
        .and_then(|r| r.median_ms)
}

/// Per-unit exponential growth rate `ln(t_b / t_a) / (n_b - n_a)` over
/// consecutive sizes.
pub fn growth_rates(sizes: &[usize], times: &[f64]) -> Vec<f64> {
    sizes
        .windows(2)
        .zip(times.windows(2))
        .map(|(n, t)| (t[1] / t[0]).ln() / (n[1] - n[0]) as f64)
        .collect()
}

/// Criterion 7: per-iteration learning time of the full-dimensional
/// baseline against the indirect architecture, and sub-exponential growth of
/// the decomposed ones.
pub fn check_timing() -> CheckOutcome {
    let start = Instant::now();
    let run = || -> Result<(bool, String)> {
        let sizes = [8usize, 20, 40];
        let settings = BenchSettings {
            n_agents: sizes.to_vec(),
            architectures: vec![Architecture::Centralized, Architecture::Direct, Architecture::Indirect],
            max_full_n: 20,
            timed_iterations: 2,
        };
        let rows = timing_benchmark(&timing_config(), &settings)?;
        let t = |arch, n| median_ms(&rows, arch, n).unwrap_or(f64::NAN);
        let ratio8 = t(Architecture::Centralized, 8) / t(Architecture::Indirect, 8);
        let ratio20 = t(Architecture::Centralized, 20) / t(Architecture::Indirect, 20);
        let sizes_f = sizes.map(|n| n as f64);
        let mut passed = ratio8 >= 5.0 && ratio20 > ratio8;
        let mut detail = format!("centralized/indirect {ratio8:.1} at N = 8, {ratio20:.1} at N = 20");
        for arch in [Architecture::Direct, Architecture::Indirect] {
            let times: Vec<f64> = sizes.iter().map(|&n| t(arch, n)).collect();
            let rates = growth_rates(&sizes, &times);
            let sub = rates[1] < rates[0];
            passed &= sub;
            detail.push_str(&format!(
                "; {arch} ms {} growth rates {:.3} then {:.3}, log-log slope {:.2}",
                times.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>().join("/"),
                rates[0],
                rates[1],
                log_log_slope(&sizes_f, &times)
            ));
        }
        Ok((passed, detail))
    };
    outcome(7, "timing trend", start, run())
}

/// Criterion 8: with every dependency set forced to all agents the four
/// architectures produce identical iterates.
pub fn check_collapse(seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let run = || -> Result<(bool, String)> {
        let cfg = ExperimentConfig {
            n_agents: 4,
            n_x: 1,
            n_u: 1,
            horizon: 200,
            eval_horizon: 200,
            iterations: 3,
            dynamics: DynamicsParams {
                a_diag: 0.5,
                ..DynamicsParams::default()
            },
            ..ExperimentConfig::default()
        };
        let system = cfg.system()?;
        let deps = DependencySets::full(cfg.n_agents);
        let mut config: MalspiConfig = cfg.malspi_config(seed)?;
        config.alpha = 1e-4;
        let reference = run_malspi_with_sets(&system, &deps, Architecture::Centralized, &config)?;
        let moved = reference.last().map(|r| r.policy.matrix().amax()).unwrap_or(0.0);
        for arch in Architecture::ALL {
            let records = run_malspi_with_sets(&system, &deps, arch, &config)?;
            for (a, b) in records.iter().zip(&reference) {
                let same_policy = a
                    .policy
                    .matrix()
                    .iter()
                    .zip(b.policy.matrix().iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits());
                if !same_policy || a.eval.cost.to_bits() != b.eval.cost.to_bits() {
                    return Ok((false, format!("{arch} differs at iteration {}", a.iteration)));
                }
            }
        }
        Ok((
            moved > 0.0,
            format!("4 architectures bitwise identical over {} iterations (max |K| {moved:.2e})", config.iterations),
        ))
    };
    outcome(8, "architecture collapse", start, run())
}

/// Which criteria to run and with what settings.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub seed: u64,
    pub replication: ReplicationSettings,
    pub include_replication: bool,
    pub include_timing: bool,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            seed: 2024,
            replication: ReplicationSettings::default(),
            include_replication: true,
            include_timing: true,
        }
    }
}

/// Runs the checks in order.
pub fn run_all(settings: &VerifySettings, mut report: impl FnMut(&CheckOutcome)) -> Vec<CheckOutcome> {
    let mut results = Vec::new();
    let mut push = |o: CheckOutcome| {
        report(&o);
        results.push(o);
    };
    push(check_value_decomposition(50, settings.seed));
    push(check_gradient_decomposition(20, settings.seed + 1));
    push(check_bellman(20, 100, settings.seed + 2));
    push(check_lstdq(settings.seed + 3));
    push(check_graphs(200, settings.seed + 4));
    if settings.include_replication {
        push(check_replication(&settings.replication));
    }
    if settings.include_timing {
        push(check_timing());
    }
    push(check_collapse(settings.seed + 5));
    results
}
