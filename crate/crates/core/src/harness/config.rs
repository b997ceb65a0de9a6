use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::loglaplace::{SolverOptions, Splitting};
use crate::particles::Caps;
use crate::transform::WeightFunction;

use super::scenario::{GridConfig, ScenarioConfig, TestFunction};

/// A complete run description. Every section rejects unknown keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub scenario: ScenarioConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<WeightFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub splitting: Splitting,
    #[serde(default = "default_refinements")]
    pub max_refinements: usize,
}

fn default_tol() -> f64 {
    1e-4
}

fn default_refinements() -> usize {
    14
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: default_tol(), splitting: Splitting::default(), max_refinements: default_refinements() }
    }
}

impl SolverConfig {
    pub fn options(&self, singular_points: Vec<f64>) -> SolverOptions<f64> {
        SolverOptions {
            tol: self.tol,
            splitting: self.splitting,
            max_refinements: self.max_refinements,
            singular_points,
        }
    }
}

/// Run parameters. Fields only used by some experiments are optional and
/// fall back to per-experiment defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub r: f64,
    #[serde(default = "default_t")]
    pub t: f64,
    /// Base motion step of the particle simulator.
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_times: Option<Vec<f64>>,
    #[serde(default)]
    pub caps: Caps,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_function: Option<TestFunction>,
    /// Starting point of the extinction check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    /// Terminal times of the extinction check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lags: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    /// Window widths of the admissibility probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<f64>>,
    /// Starting points of the admissibility probe.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

fn default_reps() -> usize {
    10_000
}

fn default_t() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    0.01
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            reps: default_reps(),
            seed: 0,
            r: 0.0,
            t: default_t(),
            dt: default_dt(),
            beta: None,
            betas: None,
            output_times: None,
            caps: Caps::default(),
            test_function: None,
            x0: None,
            times: None,
            lags: None,
            levels: None,
            widths: None,
            x_grid: None,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HMethodKind {
    ClosedForm,
    Grid,
    Mc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformConfig {
    #[serde(default = "default_method")]
    pub method: HMethodKind,
    /// Replicas per node for the Monte Carlo `h`.
    #[serde(default = "default_h_reps")]
    pub reps: usize,
}

fn default_method() -> HMethodKind {
    HMethodKind::ClosedForm
}

fn default_h_reps() -> usize {
    4000
}

impl Config {
    pub fn new(scenario: ScenarioConfig) -> Self {
        Self { scenario, grid: None, solver: SolverConfig::default(), run: RunConfig::default(), weight: None, transform: None }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json_str(&text),
            _ => Self::from_toml_str(&text),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn canonical_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.canonical_json()?.as_bytes())))
    }
}
