//! Run configuration: one JSON document describing plant, networks,
//! objective, training and verification.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ModelSpec, SystemModel};
use crate::error::{Error, Result};
use crate::neural::{Activation, InitScheme, Initializer, LyapunovNet, PolicyNet, DEFAULT_EPSILON, SMOOTH_BETA};
use crate::objective::{ProblemConfig, ProblemSpec};
use crate::trainer::{Distribution, TrainConfig};
use crate::verifier::{IndicatorCriteria, VerifyConfig, DEFAULT_EQUILIBRIUM_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub hidden: Vec<usize>,
    #[serde(default = "relu")]
    pub activation: Activation,
}

fn relu() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    pub hidden: Vec<usize>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Softplus sharpness of the hidden activations.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_beta() -> f64 {
    SMOOTH_BETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerificationSection {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub margin: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub terminal_check: bool,
    /// `null` disables the equilibrium exemption.
    #[serde(default = "default_tol")]
    pub equilibrium_tol: Option<f64>,
    #[serde(default = "default_verify_seed")]
    pub seed: u64,
    #[serde(default)]
    pub distribution: Option<Distribution>,
}

fn default_samples() -> usize {
    VerifyConfig::default().samples
}
fn default_delta() -> f64 {
    VerifyConfig::default().delta
}
fn default_steps() -> usize {
    VerifyConfig::default().steps
}
fn default_tol() -> Option<f64> {
    Some(DEFAULT_EQUILIBRIUM_TOL)
}
fn default_verify_seed() -> u64 {
    VerifyConfig::default().seed
}

impl Default for VerificationSection {
    fn default() -> Self {
        VerificationSection {
            samples: default_samples(),
            delta: default_delta(),
            margin: 0.0,
            steps: default_steps(),
            terminal_check: false,
            equilibrium_tol: default_tol(),
            seed: default_verify_seed(),
            distribution: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds network initialization.
    #[serde(default)]
    pub seed: u64,
    pub system: ModelSpec,
    pub policy: PolicySection,
    pub lyapunov: LyapunovSection,
    pub problem: ProblemConfig,
    pub training: TrainConfig,
    #[serde(default)]
    pub verification: VerificationSection,
}

/// Plant and problem resolved from a [`RunConfig`].
pub struct Resolved {
    pub model: Box<dyn SystemModel>,
    pub spec: ProblemSpec,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Cross-section checks; runs before anything is built or trained.
    pub fn validate(&self) -> Result<()> {
        let r = self.resolve()?;
        self.training.validate()?;
        let v = &self.verification;
        if v.samples == 0 || v.steps == 0 {
            return Err(Error::Config("verification needs samples >= 1 and steps >= 1".into()));
        }
        if !(v.delta > 0.0 && v.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", v.delta)));
        }
        if v.terminal_check && r.spec.terminal_box.is_none() {
            return Err(Error::Config("terminal_check requires problem.terminal_box".into()));
        }
        self.criteria(&r.spec).validate(r.model.n_x(), r.model.n_u())?;
        if self.lyapunov.hidden.is_empty() || self.lyapunov.hidden.contains(&0) || self.policy.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive; the Lyapunov net needs at least one".into()));
        }
        if !(self.lyapunov.epsilon > 0.0 && self.lyapunov.beta > 0.0) {
            return Err(Error::Config("lyapunov epsilon and beta must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let model = self.system.build().map_err(as_config)?;
        let spec = self.problem.resolve(model.as_ref()).map_err(as_config)?;
        Ok(Resolved { model, spec })
    }

    pub fn build_networks(&self, model: &dyn SystemModel) -> Result<(PolicyNet, LyapunovNet)> {
        let mut init = Initializer::new(self.seed, InitScheme::UniformFanIn);
        let policy = PolicyNet::new(
            model.n_x(),
            &self.policy.hidden,
            self.problem.horizon,
            model.n_u(),
            self.policy.activation,
            &mut init,
        )?;
        let lyap = LyapunovNet::new(
            model.n_x(),
            &self.lyapunov.hidden,
            self.lyapunov.beta,
            self.lyapunov.epsilon,
            &mut init,
        )?;
        Ok((policy, lyap))
    }

    pub fn criteria(&self, spec: &ProblemSpec) -> IndicatorCriteria {
        let v = &self.verification;
        IndicatorCriteria::from_problem(spec, v.margin, v.terminal_check, v.equilibrium_tol)
    }

    pub fn verify_config(&self) -> VerifyConfig {
        let v = &self.verification;
        VerifyConfig {
            samples: v.samples,
            delta: v.delta,
            seed: v.seed,
            steps: v.steps,
            distribution: v.distribution.unwrap_or(self.training.distribution),
        }
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
