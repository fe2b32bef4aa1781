//! Exact Q-function decomposition for cooperative multi-agent LQR and
//! multi-agent least-squares policy iteration (MALSPI).
//!
//! * [`graph`]: coupling graphs and the dependency sets they induce.
//! * [`lqr`]: block systems, Lyapunov solves, exact Q-matrices, simulation.
//! * [`lstdq`]: Q-function estimation from one trajectory.
//! * [`malspi`]: the policy-iteration loop in four architectures and the
//!   sample-complexity calculators.
//! * [`experiments`]: example networks, configs, sweeps and artifacts.
//! * [`verify`]: the acceptance checks, shared by tests and the CLI.

pub mod error;
pub mod experiments;
pub mod graph;
pub mod lqr;
pub mod lstdq;
pub mod malspi;
pub mod verify;

pub use error::{Error, Result};
