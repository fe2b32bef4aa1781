use malspi::experiments::generate_example1;
use malspi::graph::{AgentSet, CouplingGraphs, DependencySets};
use malspi::lqr::{
    average_cost, extract_subsystem, lyapunov_solve, rollout, smat, spectral_radius, stability_report, svec,
    svec_len, true_q_matrix, AgentCost, Closure, InitialState, MultiAgentSystem, StructuredPolicy,
};
use malspi::verify::{check_bellman, check_value_decomposition, random_graphs, random_system};
use malspi::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn symmetric(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = DMatrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, -3.0..3.0));
    (&m + m.transpose()) * 0.5
}

fn random_instance(seed: u64, n: usize, dim: usize) -> (MultiAgentSystem, StructuredPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = random_graphs(&mut rng, n, 0.3).unwrap();
    random_system(&mut rng, g, dim, dim, 0.8, 1.0).unwrap()
}

fn scalar_system(a: f64, s: f64, sigma_w: f64) -> MultiAgentSystem {
    let g = CouplingGraphs::new(1, &[(0, 0)], &[(0, 0)], &[(0, 0)]).unwrap();
    let cost = AgentCost {
        s: DMatrix::from_element(1, 1, s),
        r: DMatrix::from_element(1, 1, 1.0),
    };
    MultiAgentSystem::new(
        g,
        1,
        1,
        DMatrix::from_element(1, 1, a),
        DMatrix::from_element(1, 1, 1.0),
        vec![cost],
        sigma_w,
    )
    .unwrap()
}

#[test]
fn svec_examples() {
    let v = svec(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 3.0])).unwrap();
    assert!((v[1] - 2.0 * 2f64.sqrt()).abs() < 1e-15);
    assert!((v.norm_squared() - 18.0).abs() < 1e-12);
    let m = symmetric(5, 1);
    assert!((svec(&m).unwrap().norm_squared() - m.norm_squared()).abs() < 1e-12);
    assert!(matches!(smat(&DVector::zeros(4)), Err(Error::NotTriangular(4))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svec_is_an_isometry(n in 1usize..=20, seed in any::<u64>(), other in any::<u64>()) {
        let a = symmetric(n, seed);
        let b = symmetric(n, other);
        let (va, vb) = (svec(&a).unwrap(), svec(&b).unwrap());
        prop_assert_eq!(va.len(), svec_len(n));
        let scale = 1.0 + a.norm() * b.norm();
        prop_assert!((va.dot(&vb) - (&a * &b).trace()).abs() <= 1e-12 * scale);
        prop_assert!((smat(&va).unwrap() - &a).amax() <= 1e-12 * (1.0 + a.amax()));
    }

    #[test]
    fn lyapunov_matches_fixed_point_iteration(n in 1usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, n, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let rho = spectral_radius(&x);
        let x = if rho > 0.0 { x * (0.9 / rho) } else { x };
        let y = symmetric(n, seed ^ 0xabc);
        let y = &y * &y;
        let p = lyapunov_solve(&x, &y).unwrap();
        let mut it = y.clone();
        for _ in 0..5000 {
            let next = &x * &it * x.transpose() + &y;
            let done = (&next - &it).amax() <= 1e-13 * (1.0 + next.amax());
            it = next;
            if done {
                break;
            }
        }
        prop_assert!((&p - &it).amax() <= 1e-9 * (1.0 + it.amax()));
        let residual = (&p - &x * &p * x.transpose() - &y).norm();
        prop_assert!(residual <= 1e-9 * (1.0 + y.norm()));
    }
}

#[test]
fn lyapunov_examples() {
    let y = symmetric(3, 4);
    assert_eq!(lyapunov_solve(&DMatrix::zeros(3, 3), &y).unwrap(), y);
    let p = lyapunov_solve(&DMatrix::from_element(1, 1, 0.5), &DMatrix::from_element(1, 1, 1.0)).unwrap();
    assert!((p[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    let err = lyapunov_solve(&DMatrix::from_element(1, 1, 1.5), &DMatrix::from_element(1, 1, 1.0)).unwrap_err();
    assert!(matches!(err, Error::Unstable { rho } if (rho - 1.5).abs() < 1e-12));
}

#[test]
fn scalar_q_matrices() {
    let zero = StructuredPolicy::zeros(scalar_system(0.0, 1.0, 1.0).graphs(), 1, 1);
    let sys = scalar_system(0.0, 1.0, 1.0);
    let sub = extract_subsystem(&sys, &zero, &AgentSet::full(1), &AgentSet::full(1), Closure::Require).unwrap();
    let q = true_q_matrix(&sub).unwrap();
    assert!((q - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0])).amax() < 1e-14);
    let sys = scalar_system(0.5, 1.0, 1.0);
    let sub = extract_subsystem(&sys, &zero, &AgentSet::full(1), &AgentSet::full(1), Closure::Require).unwrap();
    let q = true_q_matrix(&sub).unwrap();
    let expected = DMatrix::from_row_slice(2, 2, &[4.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 7.0 / 3.0]);
    assert!((q - expected).amax() < 1e-14);
}

#[test]
fn full_set_extraction_is_the_global_system() {
    let (sys, k) = random_instance(3, 4, 2);
    let all = AgentSet::full(4);
    let sub = extract_subsystem(&sys, &k, &all, &all, Closure::Require).unwrap();
    assert_eq!(&sub.a, sys.a());
    assert_eq!(&sub.b, sys.b());
    assert_eq!(&sub.k, k.matrix());
    assert!((&sub.s / 4.0 - sys.global_s()).amax() < 1e-12);
    assert!((&sub.r / 4.0 - sys.global_r()).amax() < 1e-12);
}

#[test]
fn decoupled_extraction_picks_the_agent_block() {
    let selfs = [(0, 0), (1, 1)];
    let g = CouplingGraphs::new(2, &selfs, &selfs, &selfs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (sys, k) = random_system(&mut rng, g, 2, 2, 0.7, 1.0).unwrap();
    let one = AgentSet::singleton(0);
    let sub = extract_subsystem(&sys, &k, &one, &one, Closure::Require).unwrap();
    assert_eq!(sub.a, sys.a_block(0, 0));
    assert_eq!(sub.b, sys.b_block(0, 0));
    assert_eq!(sub.s, sys.cost(0).s);
}

#[test]
fn restricted_rollout_matches_global_rollout() {
    let g = generate_example1(8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (sys, k) = random_system(&mut rng, g, 3, 3, 0.9, 1.0).unwrap();
    let deps = DependencySets::compute(sys.graphs());
    let set = deps.direct(2);
    assert_eq!(set.to_one_based(), vec![1, 2, 3, 4, 5]);
    let sub = extract_subsystem(&sys, &k, set, &AgentSet::empty(), Closure::Require).unwrap();
    let batch = rollout(&sys, &k, 50, 0.5, &InitialState::standard(24), 11).unwrap();
    let xi: Vec<usize> = (0..15).collect();
    let ui: Vec<usize> = (0..15).collect();
    let mut x = batch.states.row(0).transpose().select_rows(&xi);
    for t in 0..50 {
        let eta = batch.exploration_noise.row(t).transpose().select_rows(&ui);
        let w = batch.process_noise.row(t).transpose().select_rows(&xi);
        let u = &sub.k * &x + eta;
        x = &sub.a * &x + &sub.b * u + w;
        let global = batch.states.row(t + 1).transpose().select_rows(&xi);
        assert!((&x - global).amax() <= 1e-10 * (1.0 + x.amax()), "step {t}");
    }
}

#[test]
fn closure_violation_names_the_missing_agent() {
    let g = generate_example1(8).unwrap();
    let sys = malspi::experiments::build_system(
        &g,
        1,
        1,
        &Default::default(),
        &Default::default(),
        1.0,
    )
    .unwrap();
    let k = StructuredPolicy::zeros(sys.graphs(), 1, 1);
    let err = extract_subsystem(&sys, &k, &AgentSet::singleton(1), &AgentSet::empty(), Closure::Require).unwrap_err();
    assert!(matches!(err, Error::NotClosed { missing: 1, member: 2 }));
}

#[test]
fn rollout_covariance_matches_stationary_oracle() {
    let (sys, k) = random_instance(21, 3, 2);
    let sigma_eta = 0.7;
    let batch = rollout(&sys, &k, 10_000, sigma_eta, &InitialState::zero(6), 3).unwrap();
    let closed = sys.a() + sys.b() * k.matrix();
    let noise = DMatrix::identity(6, 6) * sys.sigma_w().powi(2) + sys.b() * sys.b().transpose() * sigma_eta.powi(2);
    let oracle = lyapunov_solve(&closed, &noise).unwrap();
    let xs = batch.states.rows(1, 10_000);
    let emp = xs.transpose() * xs / 10_000.0;
    let rel = (&emp - &oracle).norm() / oracle.norm();
    assert!(rel < 0.1, "relative covariance error {rel}");
}

#[test]
fn scalar_average_cost() {
    let sys = scalar_system(0.0, 1.0, 1.0);
    let k = StructuredPolicy::zeros(sys.graphs(), 1, 1);
    let c = average_cost(&sys, &k, 100_000, &InitialState::zero(1), 1).unwrap();
    assert!(c.stable);
    assert!((c.cost - 1.0).abs() < 0.05, "{}", c.cost);
}

#[test]
fn average_cost_matches_lyapunov_trace() {
    for seed in [31, 32, 33] {
        let (sys, k) = random_instance(seed, 3, 2);
        let closed = sys.a() + sys.b() * k.matrix();
        let cov = lyapunov_solve(&closed, &(DMatrix::identity(6, 6) * sys.sigma_w().powi(2))).unwrap();
        let stage = sys.global_s() + k.matrix().transpose() * sys.global_r() * k.matrix();
        let oracle = (cov * stage).trace();
        let c = average_cost(&sys, &k, 100_000, &InitialState::zero(6), seed).unwrap();
        assert!((c.cost - oracle).abs() < 0.03 * oracle, "seed {seed}: {} vs {oracle}", c.cost);
    }
}

#[test]
fn q_matches_monte_carlo_cost_differences() {
    let (sys, k) = random_instance(41, 2, 1);
    let all = AgentSet::full(2);
    let sub = extract_subsystem(&sys, &k, &all, &all, Closure::Require).unwrap();
    let q = true_q_matrix(&sub).unwrap();
    let z = DVector::from_column_slice(&[2.0, -1.5, 1.0, 2.5]);
    let analytic = z.dot(&(&q * &z));
    // Common noise from z and from the origin: the expected difference of
    // accumulated costs equals Q(z) - Q(0).
    let (runs, steps) = (20_000, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let closed = sub.closed_loop();
    let cost = |x: &DVector<f64>, u: &DVector<f64>| x.dot(&(&sub.s * x)) + u.dot(&(&sub.r * u));
    let mut total = 0.0;
    for _ in 0..runs {
        let x0 = z.rows(0, 2).into_owned();
        let u0 = z.rows(2, 2).into_owned();
        let w: DVector<f64> =
            DVector::from_fn(2, |_, _| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal));
        let mut xa = &sub.a * &x0 + &sub.b * &u0 + &w;
        let mut xb = w.clone();
        let mut diff = cost(&x0, &u0);
        for _ in 1..steps {
            let (ua, ub) = (&sub.k * &xa, &sub.k * &xb);
            diff += cost(&xa, &ua) - cost(&xb, &ub);
            let w: DVector<f64> =
                DVector::from_fn(2, |_, _| rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal));
            xa = &closed * &xa + &w;
            xb = &closed * &xb + &w;
        }
        total += diff;
    }
    let mc = total / runs as f64;
    assert!((mc - analytic).abs() < 0.02 * analytic, "MC {mc} vs {analytic}");
}

fn power_norm(m: &DMatrix<f64>) -> f64 {
    let g = m.transpose() * m;
    let mut v = DVector::from_element(m.ncols(), 1.0);
    let mut lambda = 0.0;
    for _ in 0..500 {
        let next = &g * &v;
        let n = next.norm();
        if n == 0.0 {
            return 0.0;
        }
        lambda = n;
        v = next / n;
    }
    lambda.sqrt()
}

#[test]
fn stability_report_examples() {
    let r = stability_report(&DMatrix::zeros(3, 3));
    assert_eq!(r.rho, 0.0);
    let r = stability_report(&DMatrix::from_diagonal(&DVector::from_column_slice(&[0.9, 0.5])));
    assert!((r.rho - 0.9).abs() < 1e-12 && (r.tau - 1.0).abs() < 1e-9);

    let mut j = DMatrix::identity(4, 4) * 0.6;
    for i in 0..3 {
        j[(i, i + 1)] = 1.0;
    }
    let r = stability_report(&j);
    let mut oracle: f64 = 1.0;
    let mut p = DMatrix::identity(4, 4);
    for k in 1..=200 {
        p = &p * &j;
        oracle = oracle.max(power_norm(&p) / 0.6f64.powi(k));
    }
    assert!((r.rho - 0.6).abs() < 1e-4);
    assert!((r.tau - oracle).abs() < 1e-3 * oracle, "{} vs {oracle}", r.tau);
}

#[test]
fn decomposition_and_bellman_hold_on_random_systems() {
    let v = check_value_decomposition(20, 7);
    assert!(v.passed, "{v}");
    let b = check_bellman(10, 50, 8);
    assert!(b.passed, "{b}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sum_of_agent_q_is_global_q(seed in any::<u64>(), n in 2usize..=5) {
        let (sys, k) = random_instance(seed, n, 1);
        let all = AgentSet::full(n);
        let mut sum = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            let sub = extract_subsystem(&sys, &k, &all, &AgentSet::singleton(i), Closure::Require).unwrap();
            sum += true_q_matrix(&sub).unwrap();
        }
        let joint = extract_subsystem(&sys, &k, &all, &all, Closure::Require).unwrap();
        let q = true_q_matrix(&joint).unwrap();
        prop_assert!((&sum - &q).amax() <= 1e-9 * (1.0 + q.amax()));
    }

    #[test]
    fn true_q_is_psd(seed in any::<u64>(), n in 1usize..=4) {
        let (sys, k) = random_instance(seed, n.max(2), 2);
        let all = AgentSet::full(sys.n_agents());
        let sub = extract_subsystem(&sys, &k, &all, &all, Closure::Require).unwrap();
        let q = true_q_matrix(&sub).unwrap();
        prop_assert!((&q - q.transpose()).amax() == 0.0);
        prop_assert!(q.symmetric_eigenvalues().min() >= -1e-9 * (1.0 + q.amax()));
    }
}
