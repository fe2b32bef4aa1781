//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::examples::{
    build_system, generate_example1, generate_example2, matrix_from_rows, CostParams, DynamicsParams,
};
use crate::error::{Error, Result};
use crate::graph::CouplingGraphs;
use crate::lqr::{InitialState, MultiAgentSystem};
use crate::lstdq::DEFAULT_ZETA;
use crate::malspi::{Architecture, MalspiConfig};

/// Edge lists as `[from, to]` pairs, 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeLists {
    pub state: Vec<[usize; 2]>,
    pub observation: Vec<[usize; 2]>,
    pub cost: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Example1,
    Example2,
    Explicit { edges: EdgeLists },
}

fn pairs(list: &[[usize; 2]]) -> Vec<(usize, usize)> {
    list.iter().map(|e| (e[0], e[1])).collect()
}

impl GraphSpec {
    pub fn build(&self, n_agents: usize) -> Result<CouplingGraphs> {
        match self {
            GraphSpec::Example1 => generate_example1(n_agents),
            GraphSpec::Example2 => generate_example2(n_agents),
            GraphSpec::Explicit { edges } => CouplingGraphs::from_one_based(
                n_agents,
                &pairs(&edges.state),
                &pairs(&edges.observation),
                &pairs(&edges.cost),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_agents: usize,
    pub graph: GraphSpec,
    pub n_x: usize,
    pub n_u: usize,
    pub dynamics: DynamicsParams,
    pub cost: CostParams,
    pub sigma_w: f64,
    pub sigma_eta: f64,
    pub horizon: usize,
    pub eval_horizon: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub zeta: f64,
    /// Mean of `x(0)`; zero when absent.
    pub x0: Option<Vec<f64>>,
    /// Covariance of `x(0)` (row-major); identity when absent.
    pub sigma0: Option<Vec<Vec<f64>>>,
    pub architectures: Vec<Architecture>,
    pub seeds: Vec<u64>,
    pub q_oracle: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            n_agents: 8,
            graph: GraphSpec::Example1,
            n_x: 3,
            n_u: 3,
            dynamics: DynamicsParams::default(),
            cost: CostParams::default(),
            sigma_w: 1.0,
            sigma_eta: 1.0,
            horizon: 500,
            eval_horizon: 500,
            iterations: 15,
            alpha: 1e-3,
            zeta: DEFAULT_ZETA,
            x0: None,
            sigma0: None,
            architectures: Architecture::ALL.to_vec(),
            seeds: vec![0],
            q_oracle: false,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_agents == 0 {
            return bad("n_agents must be positive".into());
        }
        if self.n_x == 0 || self.n_u == 0 {
            return bad("n_x and n_u must be positive".into());
        }
        if self.architectures.is_empty() {
            return bad("at least one architecture is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.horizon == 0 || self.eval_horizon == 0 {
            return bad("horizon and eval_horizon must be positive".into());
        }
        if !(self.sigma_w >= 0.0) || !(self.sigma_eta >= 0.0) || !(self.zeta >= 0.0) || !self.alpha.is_finite() {
            return bad("noise levels and zeta must be non-negative, alpha finite".into());
        }
        self.graph.build(self.n_agents)?;
        self.initial_state()?;
        Ok(())
    }

    pub fn graphs(&self) -> Result<CouplingGraphs> {
        self.graph.build(self.n_agents)
    }

    pub fn system(&self) -> Result<MultiAgentSystem> {
        build_system(&self.graphs()?, self.n_x, self.n_u, &self.dynamics, &self.cost, self.sigma_w)
    }

    pub fn initial_state(&self) -> Result<InitialState> {
        let dim = self.n_agents * self.n_x;
        let mean = match &self.x0 {
            Some(v) if v.len() != dim => return Err(Error::Config(format!("x0 must have length {dim}"))),
            Some(v) => DVector::from_column_slice(v),
            None => DVector::zeros(dim),
        };
        let cov = match &self.sigma0 {
            Some(rows) => matrix_from_rows(rows, dim, dim, "sigma0")?,
            None => DMatrix::identity(dim, dim),
        };
        Ok(InitialState { mean, cov })
    }

    pub fn malspi_config(&self, seed: u64) -> Result<MalspiConfig> {
        let dim = self.n_agents * self.n_x;
        let mut c = MalspiConfig::new(dim);
        c.iterations = self.iterations;
        c.horizon = self.horizon;
        c.eval_horizon = self.eval_horizon;
        c.sigma_eta = self.sigma_eta;
        c.zeta = self.zeta;
        c.alpha = self.alpha;
        c.init = self.initial_state()?;
        c.seed = seed;
        c.q_oracle = self.q_oracle;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_document_uses_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"n_agents": 4, "graph": {"kind": "example2"}}"#).unwrap();
        assert_eq!(cfg.n_agents, 4);
        assert_eq!(cfg.graph, GraphSpec::Example2);
        assert_eq!(cfg.horizon, 500);
        assert_eq!(cfg.architectures.len(), 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_json(r#"{"n_agent": 4}"#).unwrap_err();
        assert!(matches!(err, Error::Config(m) if m.contains("n_agent")));
        let err = ExperimentConfig::from_json(r#"{"cost": {"diagonal": 1.0}}"#).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn explicit_graph_is_validated() {
        let doc = r#"{"n_agents": 2, "graph": {"kind": "explicit", "edges":
            {"state": [[1,1],[2,2]], "observation": [[1,1],[2,2]], "cost": [[1,1],[3,2]]}}}"#;
        let err = ExperimentConfig::from_json(doc).unwrap_err();
        assert!(matches!(err, Error::EdgeOutOfRange { graph: "cost", from: 3, .. }));
    }

    #[test]
    fn empty_architecture_list_is_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"architectures": []}"#).is_err());
    }
}
