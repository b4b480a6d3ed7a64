//! Experiment configuration: a strict JSON schema (unknown keys rejected),
//! validation against module preconditions, and a content hash embedded in
//! every output for reproducibility.

use crate::core::{CostMatrix, DiscreteDistribution};
use crate::eot::{gibbs_kernel, IdealDesign};
use crate::error::{HfpdError, Result};
use crate::hyperprior::KnowledgeConstraints;
use crate::sampler::HmcConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CostSpec {
    /// Nodes at 0, 1, ..., d-1 on the line; C_ij = (i - j)^2.
    EuclideanSquaredGrid,
    /// Explicit matrix loaded from a CSV file (row per line).
    File { path: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MarginalSpec {
    Uniform,
    Weights { values: Vec<f64> },
}

impl MarginalSpec {
    pub fn build(&self, len: usize) -> Result<DiscreteDistribution> {
        match self {
            MarginalSpec::Uniform => Ok(DiscreteDistribution::uniform(len)),
            MarginalSpec::Weights { values } => {
                if values.len() != len {
                    return Err(HfpdError::Config(format!(
                        "marginal has {} weights, problem needs {len}",
                        values.len()
                    )));
                }
                DiscreteDistribution::from_unnormalized(values)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub m: usize,
    pub n: usize,
    pub cost: CostSpec,
    pub epsilon: f64,
    pub mu0: MarginalSpec,
    pub nu0: MarginalSpec,
    pub eta: f64,
    pub zeta: f64,
    pub lambda_ideal: (f64, f64),
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Potentials used by commands that do not solve for them.
    #[serde(default)]
    pub potentials: Option<(f64, f64)>,
    /// 1D feature supports for the repair experiments; default is the
    /// regular grid 0..d-1.
    #[serde(default)]
    pub x_support: Option<Vec<f64>>,
    #[serde(default)]
    pub y_support: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerBlock {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub burn_in: usize,
    pub adaptation_steps: usize,
    pub target_accept: f64,
    pub chains: usize,
}

impl Default for SamplerBlock {
    fn default() -> Self {
        let d = HmcConfig::default();
        Self {
            step_size: d.step_size,
            leapfrog_steps: d.leapfrog_steps,
            burn_in: d.burn_in,
            adaptation_steps: d.adaptation_steps,
            target_accept: d.target_accept,
            chains: d.chains,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub tol: f64,
    pub n_samp: usize,
    pub max_outer: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            tol: 1e-3,
            n_samp: 1000,
            max_outer: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub directory: String,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            formats: default_formats(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemBlock,
    #[serde(default)]
    pub sampler: SamplerBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| HfpdError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if p.m < 2 || p.n < 2 {
            return Err(HfpdError::Config("m and n must both be >= 2".into()));
        }
        if !(p.epsilon > 0.0) || !p.epsilon.is_finite() {
            return Err(HfpdError::Config("epsilon must be positive".into()));
        }
        if !(p.eta >= 0.0) || !(p.zeta >= 0.0) {
            return Err(HfpdError::Config("eta and zeta must be >= 0".into()));
        }
        if !(p.lambda_ideal.0 >= 0.0) || !(p.lambda_ideal.1 >= 0.0) {
            return Err(HfpdError::Config("lambda_ideal must be >= 0".into()));
        }
        if let Some((l1, l2)) = p.potentials {
            if !(l1 >= 0.0) || !(l2 >= 0.0) {
                return Err(HfpdError::Config("potentials must be >= 0".into()));
            }
        }
        if let Some(xs) = &p.x_support {
            if xs.len() != p.m {
                return Err(HfpdError::Config("x_support length must equal m".into()));
            }
        }
        if let Some(ys) = &p.y_support {
            if ys.len() != p.n {
                return Err(HfpdError::Config("y_support length must equal n".into()));
            }
        }
        if !(self.solver.tol > 0.0) {
            return Err(HfpdError::Config("solver.tol must be positive".into()));
        }
        self.hmc_config().validate()?;
        Ok(())
    }

    pub fn hmc_config(&self) -> HmcConfig {
        HmcConfig {
            step_size: self.sampler.step_size,
            leapfrog_steps: self.sampler.leapfrog_steps,
            burn_in: self.sampler.burn_in,
            adaptation_steps: self.sampler.adaptation_steps,
            target_accept: self.sampler.target_accept,
            seed: self.seed,
            chains: self.sampler.chains,
        }
    }

    pub fn x_support(&self) -> Vec<f64> {
        self.problem
            .x_support
            .clone()
            .unwrap_or_else(|| (0..self.problem.m).map(|i| i as f64).collect())
    }

    pub fn y_support(&self) -> Vec<f64> {
        self.problem
            .y_support
            .clone()
            .unwrap_or_else(|| (0..self.problem.n).map(|j| j as f64).collect())
    }

    pub fn cost_matrix(&self) -> Result<CostMatrix> {
        match &self.problem.cost {
            CostSpec::EuclideanSquaredGrid => Ok(CostMatrix::euclidean_squared_grid(
                self.problem.m,
                self.problem.n,
            )),
            CostSpec::File { path } => {
                let text = std::fs::read_to_string(path)?;
                let cost = crate::io::parse_cost_matrix_csv(&text)?;
                if cost.rows() != self.problem.m || cost.cols() != self.problem.n {
                    return Err(HfpdError::Config(format!(
                        "cost file is {} x {}, problem is {} x {}",
                        cost.rows(),
                        cost.cols(),
                        self.problem.m,
                        self.problem.n
                    )));
                }
                Ok(cost)
            }
        }
    }

    pub fn ideal_design(&self) -> Result<IdealDesign> {
        gibbs_kernel(&self.cost_matrix()?, self.problem.epsilon, None)
    }

    pub fn constraints(&self) -> Result<KnowledgeConstraints> {
        KnowledgeConstraints::new(
            self.problem.mu0.build(self.problem.m)?,
            self.problem.nu0.build(self.problem.n)?,
            self.problem.eta,
            self.problem.zeta,
            self.problem.lambda_ideal,
            self.ideal_design()?,
            self.problem.alpha,
        )
    }
}

/// SHA-256 of the configuration's canonical JSON form, as lowercase hex.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let canonical = serde_json::to_string(cfg).expect("config serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "problem": {
                "m": 2, "n": 2,
                "cost": {"kind": "euclidean-squared-grid"},
                "epsilon": 1.0,
                "mu0": {"kind": "weights", "values": [0.2, 0.8]},
                "nu0": {"kind": "weights", "values": [0.9, 0.1]},
                "eta": 2.0, "zeta": 2.0,
                "lambda_ideal": [0.5, 0.5]
            },
            "seed": 7
        }"#
        .to_string()
    }

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(cfg.problem.m, 2);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.sampler.burn_in, 8000);
        let c = cfg.constraints().unwrap();
        assert_eq!(c.rows(), 2);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = minimal_json().replace("\"seed\": 7", "\"seed\": 7, \"extra\": 1");
        assert!(matches!(
            ExperimentConfig::from_json(&bad),
            Err(HfpdError::Config(_))
        ));
    }

    #[test]
    fn rejects_invalid_epsilon() {
        let bad = minimal_json().replace("\"epsilon\": 1.0", "\"epsilon\": -1.0");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_json(&minimal_json()).unwrap();
        let b = ExperimentConfig::from_json(&minimal_json()).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = ExperimentConfig::from_json(&minimal_json().replace("\"seed\": 7", "\"seed\": 8"))
            .unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
