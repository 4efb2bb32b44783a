//! JSON run configurations. Every file carries `schema_version` and unknown
//! keys are rejected.

use std::path::{Path, PathBuf};

use gamma_abc::{
    AbcConfig, BenchmarkConfig, Budget, ContaminationSpec, DiscrepancySpec, ModelId, Theta,
    Tolerance,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Parses a config file, returning it with the SHA-256 of its bytes.
pub fn load<T: DeserializeOwned + Versioned>(path: &Path) -> Result<(T, String), CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: T = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if config.schema_version() != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "{}: unsupported schema_version {} (expected {SCHEMA_VERSION})",
            path.display(),
            config.schema_version()
        )));
    }
    Ok((config, hex::encode(Sha256::digest(&bytes))))
}

pub trait Versioned {
    fn schema_version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {
        $(impl Versioned for $t {
            fn schema_version(&self) -> u32 {
                self.schema_version
            }
        })*
    };
}

versioned!(SimulateConfig, CalibrateConfig, AbcRunConfig, BenchmarkRunConfig, ScConfig);

fn one() -> usize {
    1
}

fn default_draws() -> usize {
    1000
}

fn default_quantile() -> f64 {
    0.005
}

fn default_outlier_mean() -> f64 {
    10.0
}

fn default_outlier_var() -> f64 {
    1.0
}

fn default_dim() -> usize {
    2
}

/// A fixed number or the string `"calibrate"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSetting {
    Fixed(f64),
    Keyword(EpsilonKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsilonKeyword {
    Calibrate,
}

impl Default for EpsilonSetting {
    fn default() -> Self {
        Self::Keyword(EpsilonKeyword::Calibrate)
    }
}

/// Calibration draw count and quantile, used when `epsilon` is `"calibrate"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSettings {
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            draws: default_draws(),
            quantile: default_quantile(),
        }
    }
}

fn tolerance(epsilon: EpsilonSetting, calibration: CalibrationSettings) -> Tolerance {
    match epsilon {
        EpsilonSetting::Fixed(epsilon) => Tolerance::Fixed { epsilon },
        EpsilonSetting::Keyword(EpsilonKeyword::Calibrate) => Tolerance::Calibrate {
            draws: calibration.draws,
            quantile: calibration.quantile,
        },
    }
}

/// Stopping rule: `accepted` draws (capped at `max_proposals`, default
/// 200 × accepted) or exactly `proposals` proposals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSettings {
    #[serde(default)]
    pub accepted: Option<usize>,
    #[serde(default)]
    pub max_proposals: Option<usize>,
    #[serde(default)]
    pub proposals: Option<usize>,
}

impl BudgetSettings {
    pub fn to_budget(self) -> Result<Budget, CliError> {
        match (self.accepted, self.proposals) {
            (Some(target), None) => Ok(match self.max_proposals {
                Some(max_proposals) => Budget::Accepted {
                    target,
                    max_proposals,
                },
                None => Budget::accepted(target),
            }),
            (None, Some(count)) if self.max_proposals.is_none() => Ok(Budget::proposals(count)),
            _ => Err(CliError::Config(
                "budget needs exactly one of 'accepted' (with optional 'max_proposals') or 'proposals'"
                    .into(),
            )),
        }
    }
}

/// Where the observed data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum ObservedSource {
    /// A CSV file; relative paths resolve against the config's directory.
    File {
        path: PathBuf,
        #[serde(default)]
        header: bool,
    },
    /// Simulated at the model's true parameter, then contaminated.
    Simulate {
        #[serde(default)]
        n: Option<usize>,
        #[serde(default)]
        eta: f64,
        #[serde(default = "default_outlier_mean")]
        outlier_mean: f64,
        #[serde(default = "default_outlier_var")]
        outlier_var: f64,
    },
}

impl Default for ObservedSource {
    fn default() -> Self {
        Self::Simulate {
            n: None,
            eta: 0.0,
            outlier_mean: default_outlier_mean(),
            outlier_var: default_outlier_var(),
        }
    }
}

impl ObservedSource {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Self::Simulate {
            n,
            eta,
            outlier_mean,
            outlier_var,
        } = *self
        {
            if n == Some(0) {
                return Err(CliError::Config("observed n must be positive".into()));
            }
            ContaminationSpec {
                eta,
                outlier_mean,
                outlier_var,
            }
            .validate()
            .map_err(CliError::invalid)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub schema_version: u32,
    pub model: ModelId,
    #[serde(default)]
    pub n: Option<usize>,
    /// Defaults to the model's true parameter.
    #[serde(default)]
    pub theta: Option<Theta>,
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "default_outlier_mean")]
    pub outlier_mean: f64,
    #[serde(default = "default_outlier_var")]
    pub outlier_var: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SimulateConfig {
    pub fn contamination(&self) -> Result<ContaminationSpec, CliError> {
        let spec = ContaminationSpec {
            eta: self.eta,
            outlier_mean: self.outlier_mean,
            outlier_var: self.outlier_var,
        };
        spec.validate().map_err(CliError::invalid)?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub schema_version: u32,
    pub model: ModelId,
    #[serde(default)]
    pub observed: ObservedSource,
    pub discrepancy: DiscrepancySpec,
    /// Synthetic sample size; the observed size when absent.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub seed: u64,
}

impl CalibrateConfig {
    pub fn abc_config(&self, m: usize, workers: usize) -> Result<AbcConfig, CliError> {
        let cfg = AbcConfig::new(self.discrepancy, m, Budget::accepted(1))
            .with_tolerance(tolerance(EpsilonSetting::default(), self.calibration))
            .with_workers(workers);
        cfg.validate().map_err(CliError::invalid)?;
        self.observed.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbcRunConfig {
    pub schema_version: u32,
    pub model: ModelId,
    #[serde(default)]
    pub observed: ObservedSource,
    pub discrepancy: DiscrepancySpec,
    pub budget: BudgetSettings,
    #[serde(default)]
    pub epsilon: EpsilonSetting,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub m: Option<usize>,
    /// When present, one calibrated γ-run per value replaces the single run.
    #[serde(default)]
    pub gamma_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

impl AbcRunConfig {
    pub fn abc_config(&self, m: usize, workers: usize) -> Result<AbcConfig, CliError> {
        let cfg = AbcConfig::new(self.discrepancy, m, self.budget.to_budget()?)
            .with_tolerance(tolerance(self.epsilon, self.calibration))
            .with_workers(workers);
        cfg.validate().map_err(CliError::invalid)?;
        self.observed.validate()?;
        if let Some(grid) = &self.gamma_grid {
            if grid.is_empty() {
                return Err(CliError::Config("gamma_grid is empty".into()));
            }
            let k = self.discrepancy.k_value().unwrap_or(1);
            for &gamma in grid {
                DiscrepancySpec::gamma(gamma, k)
                    .validate()
                    .map_err(CliError::invalid)?;
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkRunConfig {
    pub schema_version: u32,
    pub model: ModelId,
    pub etas: Vec<f64>,
    #[serde(default)]
    pub methods: Vec<DiscrepancySpec>,
    /// Adds one γ method per value, with neighbour order `grid_k`.
    #[serde(default)]
    pub gamma_grid: Vec<f64>,
    #[serde(default = "one")]
    pub grid_k: usize,
    #[serde(default = "one")]
    pub trials: usize,
    pub budget: BudgetSettings,
    #[serde(default)]
    pub epsilon: EpsilonSetting,
    #[serde(default)]
    pub calibration: CalibrationSettings,
    #[serde(default)]
    pub observed_size: Option<usize>,
    #[serde(default)]
    pub synthetic_size: Option<usize>,
    #[serde(default = "default_outlier_mean")]
    pub outlier_mean: f64,
    #[serde(default = "default_outlier_var")]
    pub outlier_var: f64,
    /// Off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_runtime: bool,
    /// Report CSV path; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

impl BenchmarkRunConfig {
    pub fn methods(&self) -> Vec<DiscrepancySpec> {
        let mut all = self.methods.clone();
        all.extend(
            self.gamma_grid
                .iter()
                .map(|&g| DiscrepancySpec::gamma(g, self.grid_k)),
        );
        all
    }

    /// Checks everything that can be checked without running a cell.
    pub fn benchmark_config(&self, workers: usize) -> Result<BenchmarkConfig, CliError> {
        let methods = self.methods();
        if methods.is_empty() {
            return Err(CliError::Config("no methods configured".into()));
        }
        if self.etas.is_empty() {
            return Err(CliError::Config("etas is empty".into()));
        }
        if self.trials < 1 {
            return Err(CliError::Config("trials must be at least 1".into()));
        }
        if matches!(self.observed_size, Some(0)) {
            return Err(CliError::Config("observed_size must be positive".into()));
        }
        let cfg = BenchmarkConfig {
            budget: self.budget.to_budget()?,
            tolerance: tolerance(self.epsilon, self.calibration),
            observed_size: self.observed_size,
            synthetic_size: self.synthetic_size,
            outlier_mean: self.outlier_mean,
            outlier_var: self.outlier_var,
            workers,
            batch_size: 256,
            record_runtime: self.record_runtime,
        };
        for &eta in &self.etas {
            ContaminationSpec {
                eta,
                outlier_mean: self.outlier_mean,
                outlier_var: self.outlier_var,
            }
            .validate()
            .map_err(CliError::invalid)?;
        }
        let m = self
            .synthetic_size
            .or(self.observed_size)
            .unwrap_or_else(|| self.model.spec().default_n);
        for method in methods {
            AbcConfig::new(method, m, cfg.budget)
                .with_tolerance(cfg.tolerance)
            .validate()
            .map_err(CliError::invalid)?;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScConfig {
    pub schema_version: u32,
    pub n: usize,
    #[serde(default)]
    pub m: Option<usize>,
    pub gamma: f64,
    #[serde(default = "one")]
    pub k: usize,
    /// Dimension of the standard-normal base samples.
    #[serde(default = "default_dim")]
    pub dim: usize,
    /// Outlier norms ‖x0‖; the outlier sits on the diagonal.
    pub magnitudes: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl ScConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        gamma_abc::DivergenceParams::new(self.gamma, self.k).map_err(CliError::invalid)?;
        if self.magnitudes.is_empty() {
            return Err(CliError::Config("magnitudes is empty".into()));
        }
        if self.magnitudes.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config("magnitudes must be finite".into()));
        }
        let m = self.m.unwrap_or(self.n);
        if self.n <= self.k || m <= self.k {
            return Err(CliError::Config(format!(
                "n and m must exceed k = {}",
                self.k
            )));
        }
        if self.dim == 0 {
            return Err(CliError::Config("dim must be positive".into()));
        }
        Ok(())
    }
}
