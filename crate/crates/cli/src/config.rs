//! Experiment configuration: a JSON file, then command-line overrides.

use crate::error::{CliError, CliResult};
use rto_core::rto::SvdMethod;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Toy2d,
    Toy1d,
    Elliptic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    RtoStandard,
    RtoScalable,
    Pcn,
    Implicit,
    Rml,
    /// Scalable RTO proposals with self-normalized importance weights.
    Importance,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::RtoStandard => "rto-standard",
            SamplerKind::RtoScalable => "rto-scalable",
            SamplerKind::Pcn => "pcn",
            SamplerKind::Implicit => "implicit",
            SamplerKind::Rml => "rml",
            SamplerKind::Importance => "importance",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| CliError::Config(format!("unknown sampler '{s}'")))
    }
}

impl ModelKind {
    pub fn parse(s: &str) -> CliResult<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| CliError::Config(format!("unknown model '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Parameter dimension (linear and elliptic models).
    pub n: usize,
    /// Observation count of the linear model.
    pub m: usize,
    /// Observation noise standard deviation.
    pub sigma: f64,
    /// Seed for synthetic data (and the linear model's matrix).
    pub data_seed: u64,
    /// Observations for the 2D toy.
    pub toy_data: [f64; 2],
    /// Cubic coefficient and observation of the 1D toy.
    pub cubic: f64,
    pub toy1d_data: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Elliptic,
            n: 41,
            m: 10,
            sigma: 1e-2,
            data_seed: 1,
            toy_data: [1.2, 0.8],
            cubic: 0.3,
            toy1d_data: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Proposals (or pCN steps) per run.
    pub chain_length: usize,
    /// SVD truncation threshold.
    pub tau: f64,
    pub svd: SvdMethod,
    /// pCN step size; tuned over `study.betas` when absent.
    pub beta: Option<f64>,
    /// RML perturbation weight.
    pub rho: f64,
    /// RML augmented-target weight.
    pub gamma: f64,
    pub ftol: f64,
    pub initial_damping: f64,
    /// Leading coordinates written to chain.csv; all when absent.
    pub record_coordinates: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            kind: SamplerKind::RtoScalable,
            chain_length: 2000,
            tau: 1e-2,
            svd: SvdMethod::Auto,
            beta: None,
            rho: 0.95,
            gamma: 0.05,
            ftol: 1e-6,
            initial_damping: 1e-3,
            record_coordinates: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub dims: Vec<usize>,
    pub sigmas: Vec<f64>,
    pub thresholds: Vec<f64>,
    /// pCN step sizes tried by the tuner.
    pub betas: Vec<f64>,
    /// Length of pCN production chains; pilot chains are a fifth of this.
    pub pcn_steps: usize,
    /// Also run standard RTO in the dimension study.
    pub include_standard: bool,
    /// Grid for density evaluations in the truncation study.
    pub grid_points: usize,
    pub grid_half_width: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            dims: vec![41, 81, 161, 321],
            sigmas: vec![1e-4, 1e-2, 1e0],
            thresholds: vec![10.0, 1.0, 1e-1, 1e-2, 0.0],
            betas: vec![0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5],
            pcn_steps: 50_000,
            include_standard: false,
            grid_points: 241,
            grid_half_width: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub sampler: SamplerConfig,
    pub study: StudyConfig,
    pub seed: u64,
    /// Worker threads for proposal generation. Results do not depend on it.
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            sampler: SamplerConfig::default(),
            study: StudyConfig::default(),
            seed: 0,
            workers: 1,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks the options used by a single run.
    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        let m = &self.model;
        let s = &self.sampler;
        if !(m.sigma > 0.0 && m.sigma.is_finite()) {
            return bad(format!("sigma must be positive, got {}", m.sigma));
        }
        match m.kind {
            ModelKind::Linear if m.n == 0 || m.m == 0 => return bad("linear model needs n, m > 0".into()),
            ModelKind::Elliptic if m.n < 3 => return bad(format!("elliptic grid needs n >= 3, got {}", m.n)),
            ModelKind::Elliptic if m.n == rto_core::models::DATA_MESH_SIZE => {
                return bad(format!("n = {} is reserved for data generation", m.n))
            }
            _ => {}
        }
        if s.chain_length < 10 {
            return bad(format!("chain_length must be at least 10, got {}", s.chain_length));
        }
        if self.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        if !(s.ftol > 0.0) {
            return bad(format!("ftol must be positive, got {}", s.ftol));
        }
        if !(s.initial_damping >= 0.0) {
            return bad(format!("initial_damping must be non-negative, got {}", s.initial_damping));
        }
        match s.kind {
            SamplerKind::RtoScalable | SamplerKind::Importance if !(s.tau >= 0.0) => {
                return bad(format!("tau must be non-negative, got {}", s.tau))
            }
            SamplerKind::Pcn => {
                if let Some(b) = s.beta {
                    if !(b > 0.0 && b <= 1.0) {
                        return bad(format!("beta must lie in (0, 1], got {b}"));
                    }
                } else if self.study.betas.is_empty() {
                    return bad("pcn needs beta or a non-empty study.betas".into());
                }
            }
            SamplerKind::Rml => {
                if !(s.rho > 0.0 && s.rho < 1.0) {
                    return bad(format!("rho must lie in (0, 1), got {}", s.rho));
                }
                if !(s.gamma > 0.0 && s.gamma < 1.0) {
                    return bad(format!("gamma must lie in (0, 1), got {}", s.gamma));
                }
            }
            _ => {}
        }
        if let Some(b) = self.study.betas.iter().find(|b| !(**b > 0.0 && **b <= 1.0)) {
            return bad(format!("study beta must lie in (0, 1], got {b}"));
        }
        Ok(())
    }

    pub fn validate_dims(&self) -> CliResult<()> {
        let d = &self.study.dims;
        if d.is_empty() || d.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config(format!("dims must be non-empty and ascending, got {d:?}")));
        }
        for &n in d {
            let mut c = self.clone();
            c.model.n = n;
            c.validate()?;
        }
        Ok(())
    }

    pub fn validate_sigmas(&self) -> CliResult<()> {
        let s = &self.study.sigmas;
        if s.is_empty() || s.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
            return Err(CliError::Config(format!("sigmas must be non-empty and positive, got {s:?}")));
        }
        Ok(())
    }

    pub fn validate_thresholds(&self) -> CliResult<()> {
        let t = &self.study.thresholds;
        if t.is_empty() || t.iter().any(|x| !(*x >= 0.0)) || t.windows(2).any(|w| w[0] <= w[1]) {
            return Err(CliError::Config(format!(
                "thresholds must be non-negative and strictly descending, got {t:?}"
            )));
        }
        if self.study.grid_points < 2 || !(self.study.grid_half_width > 0.0) {
            return Err(CliError::Config("density grid needs >= 2 points and a positive width".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"model": {"kind": "toy2d", "sigma": 0.3}, "sampler": {"kind": "rml"}}"#).unwrap();
        assert_eq!(c.model.kind, ModelKind::Toy2d);
        assert_eq!(c.model.sigma, 0.3);
        assert_eq!(c.sampler.kind, SamplerKind::Rml);
        assert_eq!(c.sampler.tau, 1e-2);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"modle": {}}"#).is_err());
    }

    #[test]
    fn names_round_trip() {
        for k in [
            SamplerKind::RtoStandard,
            SamplerKind::RtoScalable,
            SamplerKind::Pcn,
            SamplerKind::Implicit,
            SamplerKind::Rml,
            SamplerKind::Importance,
        ] {
            assert_eq!(SamplerKind::parse(k.name()).unwrap(), k);
        }
        assert!(SamplerKind::parse("gibbs").is_err());
        assert_eq!(ModelKind::parse("elliptic").unwrap(), ModelKind::Elliptic);
    }

    #[test]
    fn invalid_options_are_config_errors() {
        let mut c = ExperimentConfig::default();
        c.model.sigma = -1.0;
        assert_eq!(c.validate().unwrap_err().exit_code(), 1);
        let mut c = ExperimentConfig::default();
        c.model.n = 151;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.sampler.kind = SamplerKind::Rml;
        c.sampler.rho = 1.0;
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.study.dims = vec![81, 41];
        assert!(c.validate_dims().is_err());
        let mut c = ExperimentConfig::default();
        c.study.thresholds = vec![0.0, 1.0];
        assert!(c.validate_thresholds().is_err());
    }
}
