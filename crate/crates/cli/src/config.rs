//! Experiment configuration: strict JSON with one block per subcommand.

use std::path::Path;

use roughbridge::bridge::BridgeModel;
use roughbridge::ldp::{BetaSpec, ImportanceMode, OptimizerSettings};
use roughbridge::path_spaces::NormMode;
use roughbridge::solvers::FieldSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lift: Option<LiftConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bridge: Option<BridgeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<RateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub varadhan: Option<VaradhanConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_tail: Option<TailConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub hurst: Vec<f64>,
    #[serde(default = "one")]
    pub horizon: f64,
    pub level: u32,
    pub n_paths: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathSource {
    /// Ensemble written by `sample`, located by its metadata file.
    Ensemble { metadata: String },
    /// Built-in polygon with four segments, sampled on a finer grid.
    Polygon {
        dim: usize,
        level: u32,
        #[serde(default = "one")]
        horizon: f64,
    },
}

fn default_tol() -> f64 {
    1e-3
}

fn default_q() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftConfig {
    pub source: PathSource,
    pub mode: NormMode,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_q")]
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub fields: FieldSpec,
    pub a: Vec<f64>,
    #[serde(default = "one")]
    pub beta: f64,
    pub hurst: Vec<f64>,
    #[serde(default = "one")]
    pub horizon: f64,
    pub level: u32,
    pub n_paths: usize,
    /// Lift regularity when some Hurst index is at most ½.
    #[serde(default)]
    pub alpha: Option<f64>,
}

fn default_times() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}

fn default_boot() -> usize {
    200
}

fn default_exact() -> usize {
    20_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeConfig {
    pub model: BridgeModel,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default = "one")]
    pub horizon: f64,
    pub level: u32,
    pub n_paths: usize,
    pub sigma: f64,
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default = "default_boot")]
    pub n_boot: usize,
    #[serde(default = "default_exact")]
    pub n_exact: usize,
}

fn default_control_level() -> u32 {
    5
}

fn default_solve_level() -> u32 {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateConfig {
    pub fields: FieldSpec,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default)]
    pub beta0: f64,
    pub hurst: Vec<f64>,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_control_level")]
    pub control_level: u32,
    #[serde(default = "default_solve_level")]
    pub solve_level: u32,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
}

fn default_bandwidth() -> f64 {
    0.01
}

fn default_importance() -> ImportanceMode {
    ImportanceMode::Auto
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VaradhanConfig {
    pub problem: RateConfig,
    pub epsilons: Vec<f64>,
    pub n_paths: usize,
    pub level: u32,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_factor: f64,
    #[serde(default = "default_importance")]
    pub importance: ImportanceMode,
    #[serde(default)]
    pub beta: BetaSpec,
    #[serde(default)]
    pub alpha: Option<f64>,
}

fn default_exceedances() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailConfig {
    pub hurst: Vec<f64>,
    #[serde(default = "one")]
    pub horizon: f64,
    pub mode: NormMode,
    pub radii: Vec<f64>,
    pub level: u32,
    pub n_paths: usize,
    #[serde(default = "default_exceedances")]
    pub min_exceedances: usize,
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{field}: {msg}"))
}

fn check_hurst(field: &str, h: &[f64]) -> Result<(), CliError> {
    if h.is_empty() {
        return Err(field_err(field, "needs at least one component"));
    }
    for (i, v) in h.iter().enumerate() {
        if !(*v > 0.0 && *v < 1.0) {
            return Err(field_err(&format!("{field}[{i}]"), format!("must lie in (0, 1), got {v}")));
        }
    }
    Ok(())
}

fn check_positive(field: &str, v: f64) -> Result<(), CliError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(field_err(field, format!("must be positive, got {v}")));
    }
    Ok(())
}

fn check_count(field: &str, n: usize) -> Result<(), CliError> {
    if n == 0 {
        return Err(field_err(field, "must be at least 1"));
    }
    Ok(())
}

fn check_level(field: &str, l: u32, max: u32) -> Result<(), CliError> {
    if l > max {
        return Err(field_err(field, format!("must be at most {max}, got {l}")));
    }
    Ok(())
}

impl SampleConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_hurst("sample.hurst", &self.hurst)?;
        check_positive("sample.horizon", self.horizon)?;
        check_level("sample.level", self.level, roughbridge::gaussian::MAX_SAMPLING_LEVEL)?;
        check_count("sample.n_paths", self.n_paths)
    }
}

impl LiftConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.mode
            .degree()
            .map_err(|e| field_err("lift.mode.alpha", e))?;
        check_positive("lift.tol", self.tol)?;
        if self.q < 1.0 {
            return Err(field_err("lift.q", format!("must be at least 1, got {}", self.q)));
        }
        if let PathSource::Polygon { dim, level, horizon } = &self.source {
            check_count("lift.source.dim", *dim)?;
            check_positive("lift.source.horizon", *horizon)?;
            if !(3..=roughbridge::path_spaces::MAX_LEVEL).contains(level) {
                return Err(field_err("lift.source.level", format!("must lie in 3..=24, got {level}")));
            }
        }
        Ok(())
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_hurst("solve.hurst", &self.hurst)?;
        check_positive("solve.horizon", self.horizon)?;
        check_level("solve.level", self.level, roughbridge::gaussian::MAX_SAMPLING_LEVEL)?;
        check_count("solve.n_paths", self.n_paths)
    }
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_positive("bridge.horizon", self.horizon)?;
        check_positive("bridge.sigma", self.sigma)?;
        check_level("bridge.level", self.level, 16)?;
        check_count("bridge.n_paths", self.n_paths)?;
        check_count("bridge.n_boot", self.n_boot)?;
        check_count("bridge.n_exact", self.n_exact)?;
        if self.a.len() != self.b.len() {
            return Err(field_err("bridge.b", "must have the same length as bridge.a"));
        }
        for (i, t) in self.times.iter().enumerate() {
            if !(*t > 0.0 && *t < self.horizon) {
                return Err(field_err(&format!("bridge.times[{i}]"), format!("must lie in (0, horizon), got {t}")));
            }
        }
        Ok(())
    }
}

impl RateConfig {
    pub fn validate(&self, prefix: &str) -> Result<(), CliError> {
        check_hurst(&format!("{prefix}.hurst"), &self.hurst)?;
        check_positive(&format!("{prefix}.horizon"), self.horizon)?;
        if self.a.len() != self.b.len() {
            return Err(field_err(&format!("{prefix}.b"), "must have the same length as a"));
        }
        Ok(())
    }
}

impl VaradhanConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.problem.validate("varadhan.problem")?;
        if self.epsilons.is_empty() {
            return Err(field_err("varadhan.epsilons", "must not be empty"));
        }
        for (i, e) in self.epsilons.iter().enumerate() {
            check_positive(&format!("varadhan.epsilons[{i}]"), *e)?;
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(field_err("varadhan.epsilons", "must be strictly decreasing"));
        }
        check_count("varadhan.n_paths", self.n_paths)?;
        check_level("varadhan.level", self.level, roughbridge::gaussian::MAX_SAMPLING_LEVEL)?;
        check_positive("varadhan.bandwidth_factor", self.bandwidth_factor)
    }
}

impl TailConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        check_hurst("probe_tail.hurst", &self.hurst)?;
        check_positive("probe_tail.horizon", self.horizon)?;
        self.mode
            .degree()
            .map_err(|e| field_err("probe_tail.mode.alpha", e))?;
        if self.radii.is_empty() || self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(field_err("probe_tail.radii", "must be non-empty and strictly increasing"));
        }
        check_level("probe_tail.level", self.level, roughbridge::gaussian::MAX_SAMPLING_LEVEL)?;
        check_count("probe_tail.n_paths", self.n_paths)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}
