//! Simulation: exploratory rollouts and closed-loop cost evaluation.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::stability::spectral_radius;
use super::sym::psd_sqrt;
use super::system::{MultiAgentSystem, StructuredPolicy};
use crate::error::{Error, Result};

/// Distribution of `x(0)`: Gaussian with the given mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl InitialState {
    /// Zero mean, identity covariance.
    pub fn standard(dim: usize) -> Self {
        InitialState {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    /// `x(0) = 0` almost surely.
    pub fn zero(dim: usize) -> Self {
        InitialState {
            mean: DVector::zeros(dim),
            cov: DMatrix::zeros(dim, dim),
        }
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.mean.len() != dim || self.cov.shape() != (dim, dim) {
            return Err(Error::Dimension(format!(
                "initial state must have dimension {dim}"
            )));
        }
        Ok(())
    }
}

/// One trajectory. Row `t` of every matrix is time `t`; `states` has one
/// extra row holding `x(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub states: DMatrix<f64>,
    pub controls: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub exploration_noise: DMatrix<f64>,
    pub play_gain: DMatrix<f64>,
    pub seed: u64,
}

impl TrajectoryBatch {
    pub fn len(&self) -> usize {
        self.controls.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes columns `t, x_1.., u_1..` (1-based coordinate names), one row
    /// per `t < T`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let nx = self.states.ncols();
        let nu = self.controls.ncols();
        let mut header = vec!["t".to_string()];
        header.extend((1..=nx).map(|k| format!("x_{k}")));
        header.extend((1..=nu).map(|k| format!("u_{k}")));
        w.write_record(&header)?;
        for t in 0..self.len() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.states.row(t).iter().map(|v| v.to_string()));
            rec.extend(self.controls.row(t).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

fn initial_draw(rng: &mut ChaCha8Rng, init: &InitialState) -> DVector<f64> {
    let z = gaussian(rng, init.mean.len(), 1.0);
    &init.mean + psd_sqrt(&init.cov) * z
}

/// Simulates `u = K_play x + eta`, `x(t+1) = A x + B u + w` for `t < T`.
///
/// Draw order per seed: `x(0)`, then for each step `eta(t)` followed by
/// `w(t)`.
pub fn rollout(
    system: &MultiAgentSystem,
    play_policy: &StructuredPolicy,
    horizon: usize,
    sigma_eta: f64,
    init: &InitialState,
    seed: u64,
) -> Result<TrajectoryBatch> {
    let nx = system.state_dim();
    let nu = system.control_dim();
    init.check(nx)?;
    if play_policy.matrix().shape() != (nu, nx) {
        return Err(Error::Dimension("play policy does not match the system".into()));
    }
    if !(sigma_eta >= 0.0) {
        return Err(Error::InvalidModel(format!(
            "sigma_eta must be non-negative, got {sigma_eta}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = play_policy.matrix();
    let mut states = DMatrix::zeros(horizon + 1, nx);
    let mut controls = DMatrix::zeros(horizon, nu);
    let mut process_noise = DMatrix::zeros(horizon, nx);
    let mut exploration_noise = DMatrix::zeros(horizon, nu);

    let mut x = initial_draw(&mut rng, init);
    states.row_mut(0).copy_from(&x.transpose());
    for t in 0..horizon {
        let eta = gaussian(&mut rng, nu, sigma_eta);
        let w = gaussian(&mut rng, nx, system.sigma_w());
        let u = k * &x + &eta;
        let next = system.a() * &x + system.b() * &u + &w;
        controls.row_mut(t).copy_from(&u.transpose());
        exploration_noise.row_mut(t).copy_from(&eta.transpose());
        process_noise.row_mut(t).copy_from(&w.transpose());
        states.row_mut(t + 1).copy_from(&next.transpose());
        x = next;
    }
    Ok(TrajectoryBatch {
        states,
        controls,
        process_noise,
        exploration_noise,
        play_gain: k.clone(),
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostEvaluation {
    /// Time-averaged global cost; `inf` when the closed loop is unstable.
    pub cost: f64,
    pub stable: bool,
    pub rho: f64,
}

/// `(1/T) sum_{t<T} x^T S x + u^T R u` under `u = K x` with process noise
/// only, using the averaged global cost. Unstable policies are flagged
/// without simulating.
pub fn average_cost(
    system: &MultiAgentSystem,
    policy: &StructuredPolicy,
    horizon: usize,
    init: &InitialState,
    seed: u64,
) -> Result<CostEvaluation> {
    let nx = system.state_dim();
    init.check(nx)?;
    let closed = system.a() + system.b() * policy.matrix();
    let rho = spectral_radius(&closed);
    if rho >= 1.0 {
        return Ok(CostEvaluation {
            cost: f64::INFINITY,
            stable: false,
            rho,
        });
    }
    if horizon == 0 {
        return Err(Error::InvalidModel("evaluation horizon must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = policy.matrix();
    let s = system.global_s();
    let r = system.global_r();
    let mut x = initial_draw(&mut rng, init);
    let mut total = 0.0;
    for _ in 0..horizon {
        let u = k * &x;
        total += x.dot(&(s * &x)) + u.dot(&(r * &u));
        let w = gaussian(&mut rng, nx, system.sigma_w());
        x = &closed * &x + w;
    }
    Ok(CostEvaluation {
        cost: total / horizon as f64,
        stable: true,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CouplingGraphs;
    use crate::lqr::system::AgentCost;

    fn scalar(a: f64, sigma_w: f64) -> (MultiAgentSystem, StructuredPolicy) {
        let g = CouplingGraphs::new(1, &[(0, 0)], &[(0, 0)], &[(0, 0)]).unwrap();
        let sys = MultiAgentSystem::new(
            g.clone(),
            1,
            1,
            DMatrix::from_element(1, 1, a),
            DMatrix::identity(1, 1),
            vec![AgentCost {
                s: DMatrix::identity(1, 1),
                r: DMatrix::identity(1, 1),
            }],
            sigma_w,
        )
        .unwrap();
        (sys, StructuredPolicy::zeros(&g, 1, 1))
    }

    #[test]
    fn noiseless_rollout_is_zero() {
        let (sys, pol) = scalar(0.7, 0.0);
        let b = rollout(&sys, &pol, 20, 0.0, &InitialState::zero(1), 3).unwrap();
        assert!(b.states.iter().all(|v| *v == 0.0));
        assert!(b.controls.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pure_exploration_propagates() {
        let (sys, pol) = scalar(0.0, 0.0);
        let b = rollout(&sys, &pol, 50, 1.0, &InitialState::zero(1), 9).unwrap();
        for t in 0..50 {
            assert_eq!(b.states[(t + 1, 0)], b.exploration_noise[(t, 0)]);
        }
    }

    #[test]
    fn same_seed_same_batch() {
        let (sys, pol) = scalar(0.5, 1.0);
        let init = InitialState::standard(1);
        let a = rollout(&sys, &pol, 30, 1.0, &init, 11).unwrap();
        let b = rollout(&sys, &pol, 30, 1.0, &init, 11).unwrap();
        assert_eq!(a, b);
        let c = rollout(&sys, &pol, 30, 1.0, &init, 12).unwrap();
        assert_ne!(a.states, c.states);
    }

    #[test]
    fn unstable_policy_is_flagged() {
        let (sys, pol) = scalar(1.2, 1.0);
        let ev = average_cost(&sys, &pol, 100, &InitialState::zero(1), 0).unwrap();
        assert!(!ev.stable);
        assert!(ev.cost.is_infinite());
        assert!((ev.rho - 1.2).abs() < 1e-12);
    }

    #[test]
    fn noiseless_cost_is_zero() {
        let (sys, pol) = scalar(0.5, 0.0);
        let ev = average_cost(&sys, &pol, 100, &InitialState::zero(1), 0).unwrap();
        assert_eq!(ev.cost, 0.0);
    }

    #[test]
    fn csv_has_expected_header() {
        let (sys, pol) = scalar(0.5, 1.0);
        let b = rollout(&sys, &pol, 2, 1.0, &InitialState::zero(1), 0).unwrap();
        let mut buf = Vec::new();
        b.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x_1,u_1\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
