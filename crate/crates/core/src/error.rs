use thiserror::Error;

/// Errors raised across the library.
///
/// Agent indices in messages are 1-based to match the edge-list notation used
/// in configuration files.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("a coupling graph needs at least one agent")]
    NoAgents,

    #[error("edge ({from}, {to}) in {graph} graph is outside agents 1..={n_agents}")]
    EdgeOutOfRange {
        graph: &'static str,
        from: usize,
        to: usize,
        n_agents: usize,
    },

    #[error("agent {agent} is outside 1..={n_agents}")]
    AgentOutOfRange { agent: usize, n_agents: usize },

    #[error("agent set is not closed under state/observation reachability: agent {missing} reaches agent {member} but is not in the set")]
    NotClosed { missing: usize, member: usize },

    #[error("agent {agent} cost depends on agent {missing}, which is not in the index set")]
    CostOutsideSet { agent: usize, missing: usize },

    #[error("agent {j} is not in the gradient dependency set of agent {i}")]
    NotInGradientSet { i: usize, j: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("vector length {0} is not a triangular number n(n+1)/2")]
    NotTriangular(usize),

    #[error("matrix is unstable: spectral radius {rho:.6} >= 1")]
    Unstable { rho: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{field} is nonzero outside the sparsity pattern at block ({row}, {col})")]
    SparsityViolation {
        field: &'static str,
        row: usize,
        col: usize,
    },

    #[error("regression is underdetermined: {samples} samples for {features} features; need a trajectory of at least {features} steps")]
    Underdetermined { samples: usize, features: usize },

    #[error("regression operator is singular (relative pivot {relative_pivot:.3e} below {threshold:.0e}); increase the trajectory length or the exploration noise")]
    Singular { relative_pivot: f64, threshold: f64 },

    #[error("index set must contain agent {agent} and its observation set; missing agent {missing}")]
    UpdateSetIncomplete { agent: usize, missing: usize },

    #[error("bound precondition violated: {0}")]
    BoundPrecondition(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("csv error: {0}")]
    Csv(String),

    #[error("json error: {0}")]
    Json(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
