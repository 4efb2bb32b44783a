//! Scoring ABC runs against a known truth, and the benchmark loop that
//! produces one report row per (trial, η, method).

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::abc::{rejection_abc, AbcConfig, Budget, DiscrepancySpec, Tolerance};
use crate::error::{Error, Result};
use crate::neighbors::{sq_dist, PointSet};
use crate::simulators::{contaminate, ContaminationSpec, ModelSpec, Theta};
use crate::stream::RngStream;

/// Scott's factor `T^(−1/(dθ+4))`.
pub fn scott_bandwidth(samples: usize, param_dim: usize) -> f64 {
    (samples as f64).powf(-1.0 / (param_dim as f64 + 4.0))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    #[default]
    Scott,
}

/// Gaussian-kernel KDE settings. Each dimension's bandwidth is its sample
/// standard deviation times the rule's factor.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KdeConfig {
    pub rule: BandwidthRule,
}

impl KdeConfig {
    pub fn bandwidths(&self, samples: &[Theta]) -> Vec<f64> {
        let t = samples.len();
        let dim = samples[0].len();
        let factor = match self.rule {
            BandwidthRule::Scott => scott_bandwidth(t, dim),
        };
        (0..dim)
            .map(|j| {
                let mean = samples.iter().map(|s| s.0[j]).sum::<f64>() / t as f64;
                let var = if t > 1 {
                    samples.iter().map(|s| (s.0[j] - mean).powi(2)).sum::<f64>() / (t - 1) as f64
                } else {
                    0.0
                };
                let sd = var.sqrt();
                // A constant coordinate gets unit scale so the kernel stays defined.
                factor * if sd > 0.0 { sd } else { 1.0 }
            })
            .collect()
    }
}

/// The sample point with the highest KDE value (first one on ties).
pub fn kde_map(samples: &[Theta], cfg: KdeConfig) -> Result<Theta> {
    let first = samples.first().ok_or(Error::EmptySample)?;
    let dim = first.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != dim) {
        return Err(Error::LengthMismatch {
            left: dim,
            right: bad.len(),
        });
    }
    if samples.len() == 1 {
        return Ok(first.clone());
    }
    let inv_h: Vec<f64> = cfg.bandwidths(samples).iter().map(|h| 1.0 / h).collect();
    let scaled: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| s.0.iter().zip(&inv_h).map(|(v, w)| v * w).collect())
        .collect();
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, a) in scaled.iter().enumerate() {
        let density: f64 = scaled.iter().map(|b| (-0.5 * sq_dist(a, b)).exp()).sum();
        if density > best.0 {
            best = (density, i);
        }
    }
    Ok(samples[best.1].clone())
}

/// The V-statistic `2·E‖X−Y‖ − E‖X−X′‖ − E‖Y−Y′‖`.
pub fn energy_distance(x: &PointSet, y: &PointSet) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    let mean_dist = |a: &PointSet, b: &PointSet| -> f64 {
        let mut acc = 0.0;
        for p in a.rows() {
            for q in b.rows() {
                acc += sq_dist(p, q).sqrt();
            }
        }
        acc / (a.len() as f64 * b.len() as f64)
    };
    Ok(2.0 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub per_param: Vec<f64>,
    pub mean: f64,
}

/// Squared error per coordinate and its mean.
pub fn mse(theta_hat: &Theta, theta_star: &Theta) -> Result<MseReport> {
    if theta_hat.len() != theta_star.len() {
        return Err(Error::LengthMismatch {
            left: theta_hat.len(),
            right: theta_star.len(),
        });
    }
    if theta_hat.is_empty() {
        return Err(Error::EmptySample);
    }
    let per_param: Vec<f64> = theta_hat
        .0
        .iter()
        .zip(&theta_star.0)
        .map(|(a, b)| (a - b).powi(2))
        .collect();
    let mean = per_param.iter().sum::<f64>() / per_param.len() as f64;
    Ok(MseReport { per_param, mean })
}

fn default_outlier_mean() -> f64 {
    10.0
}

fn default_outlier_var() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_workers() -> usize {
    1
}

fn default_batch() -> usize {
    256
}

/// Settings shared by every cell of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub budget: Budget,
    pub tolerance: Tolerance,
    /// Observed sample size; the model's default when absent.
    #[serde(default)]
    pub observed_size: Option<usize>,
    /// Synthetic sample size; equal to the observed size when absent.
    #[serde(default)]
    pub synthetic_size: Option<usize>,
    #[serde(default = "default_outlier_mean")]
    pub outlier_mean: f64,
    #[serde(default = "default_outlier_var")]
    pub outlier_var: f64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// When false, `runtime_seconds` is written as 0 so reports are
    /// byte-for-byte reproducible.
    #[serde(default = "default_true")]
    pub record_runtime: bool,
}

impl BenchmarkConfig {
    pub fn new(budget: Budget) -> Self {
        Self {
            budget,
            tolerance: Tolerance::calibrated(),
            observed_size: None,
            synthetic_size: None,
            outlier_mean: default_outlier_mean(),
            outlier_var: default_outlier_var(),
            workers: default_workers(),
            batch_size: default_batch(),
            record_runtime: true,
        }
    }

    fn abc_config(&self, method: DiscrepancySpec, synthetic_size: usize) -> AbcConfig {
        AbcConfig {
            budget: self.budget,
            tolerance: self.tolerance,
            synthetic_size,
            discrepancy: method,
            workers: self.workers,
            batch_size: self.batch_size,
        }
    }

    fn contamination(&self, eta: f64) -> ContaminationSpec {
        ContaminationSpec {
            eta,
            outlier_mean: self.outlier_mean,
            outlier_var: self.outlier_var,
        }
    }
}

/// One (trial, η, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub model: String,
    pub trial: usize,
    pub eta: f64,
    pub method: String,
    pub gamma: Option<f64>,
    pub k: Option<usize>,
    pub epsilon: Option<f64>,
    pub map_theta: Vec<f64>,
    pub mse_mean: Option<f64>,
    pub mse_per_param: Vec<f64>,
    pub energy_distance: Option<f64>,
    pub proposals_used: usize,
    pub accepted: usize,
    pub runtime_seconds: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Mean and sample standard deviation over the successful trials of a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub model: String,
    pub eta: f64,
    pub method: String,
    pub gamma: Option<f64>,
    pub k: Option<usize>,
    pub trials: usize,
    pub failed: usize,
    pub mse_mean: MeanStd,
    pub energy_distance: MeanStd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and unbiased standard deviation (0 for one value, NaN
    /// for none).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else if values.len() == 1 {
            0.0
        } else {
            f64::NAN
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<CellSummary>,
}

pub const REPORT_COLUMNS: [&str; 14] = [
    "model",
    "trial",
    "eta",
    "method",
    "gamma",
    "k",
    "epsilon",
    "map_theta",
    "mse_mean",
    "mse_per_param",
    "energy_distance",
    "proposals_used",
    "runtime_seconds",
    "seed",
];

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn joined(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

impl ExperimentReport {
    fn from_records(records: Vec<TrialRecord>) -> Self {
        let mut summaries: Vec<CellSummary> = Vec::new();
        for r in &records {
            let key = |s: &CellSummary| s.eta == r.eta && s.method == r.method && s.gamma == r.gamma && s.k == r.k;
            if summaries.iter().any(key) {
                continue;
            }
            let cell: Vec<&TrialRecord> = records
                .iter()
                .filter(|o| o.eta == r.eta && o.method == r.method && o.gamma == r.gamma && o.k == r.k)
                .collect();
            let ok: Vec<&&TrialRecord> = cell.iter().filter(|o| o.error.is_none()).collect();
            let mse: Vec<f64> = ok.iter().filter_map(|o| o.mse_mean).collect();
            let energy: Vec<f64> = ok.iter().filter_map(|o| o.energy_distance).collect();
            summaries.push(CellSummary {
                model: r.model.clone(),
                eta: r.eta,
                method: r.method.clone(),
                gamma: r.gamma,
                k: r.k,
                trials: ok.len(),
                failed: cell.len() - ok.len(),
                mse_mean: MeanStd::of(&mse),
                energy_distance: MeanStd::of(&energy),
            });
        }
        Self { records, summaries }
    }

    /// Summary for the cell with this η and method, if present.
    pub fn summary(&self, eta: f64, method: &DiscrepancySpec) -> Option<&CellSummary> {
        self.summaries.iter().find(|s| {
            s.eta == eta
                && s.method == method.label()
                && s.gamma == method.gamma_value()
                && s.k == method.k_value()
        })
    }

    /// Per-trial rows in the fixed column order, with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = REPORT_COLUMNS.join(",");
        out.push('\n');
        for r in &self.records {
            let fields = [
                r.model.clone(),
                r.trial.to_string(),
                r.eta.to_string(),
                r.method.clone(),
                opt(r.gamma),
                opt(r.k),
                opt(r.epsilon),
                joined(&r.map_theta),
                opt(r.mse_mean),
                joined(&r.mse_per_param),
                opt(r.energy_distance),
                r.proposals_used.to_string(),
                r.runtime_seconds.to_string(),
                r.seed.to_string(),
            ];
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serialisable")
    }
}

/// Runs every (trial, η, method) cell.
///
/// Per trial `t` the clean observed data come from `stream.child(t).child(0)`,
/// the η-th contamination from `.child(1).child(e)`. All methods in a cell
/// share the ABC stream `.child(2).child(e)` and the re-simulation stream
/// `.child(3).child(e)`, so they face identical proposals. Energy distance is
/// measured against the clean observed data; MSE against θ*.
pub fn run_benchmark(
    model: &ModelSpec,
    etas: &[f64],
    methods: &[DiscrepancySpec],
    trials: usize,
    cfg: &BenchmarkConfig,
    stream: RngStream,
) -> Result<ExperimentReport> {
    if trials < 1 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if etas.is_empty() || methods.is_empty() {
        return Err(Error::InvalidConfig("need at least one eta and one method".into()));
    }
    for &eta in etas {
        cfg.contamination(eta).validate()?;
    }
    let n = cfg.observed_size.unwrap_or(model.default_n);
    let m = cfg.synthetic_size.unwrap_or(n);
    for &method in methods {
        cfg.abc_config(method, m).validate()?;
    }

    let mut records = Vec::new();
    for trial in 0..trials {
        let trial_stream = stream.child(trial as u64);
        let clean = model.simulate(&model.theta_star, n, &mut trial_stream.child(0).rng())?;
        for (e, &eta) in etas.iter().enumerate() {
            let e = e as u64;
            let observed = contaminate(
                &clean,
                &cfg.contamination(eta),
                &mut trial_stream.child(1).child(e).rng(),
            )?;
            for &method in methods {
                let started = Instant::now();
                let abc_cfg = cfg.abc_config(method, m);
                let mut record = TrialRecord {
                    model: model.id.to_string(),
                    trial,
                    eta,
                    method: method.label().to_string(),
                    gamma: method.gamma_value(),
                    k: method.k_value(),
                    epsilon: None,
                    map_theta: Vec::new(),
                    mse_mean: None,
                    mse_per_param: Vec::new(),
                    energy_distance: None,
                    proposals_used: 0,
                    accepted: 0,
                    runtime_seconds: 0.0,
                    seed: stream.seed,
                    error: None,
                };
                let outcome = score_cell(
                    model,
                    &observed,
                    &clean,
                    &abc_cfg,
                    trial_stream.child(2).child(e),
                    trial_stream.child(3).child(e),
                    &mut record,
                );
                if let Err(err) = outcome {
                    log::warn!(
                        "{} trial {trial} eta {eta} {}: {err}",
                        model.id,
                        method.label()
                    );
                    record.error = Some(err.to_string());
                }
                if cfg.record_runtime {
                    record.runtime_seconds = started.elapsed().as_secs_f64();
                }
                log::info!(
                    "{} trial {trial} eta {eta} {}: mse {:?} energy {:?}",
                    model.id,
                    method.label(),
                    record.mse_mean,
                    record.energy_distance
                );
                records.push(record);
            }
        }
    }
    Ok(ExperimentReport::from_records(records))
}

fn score_cell(
    model: &ModelSpec,
    observed: &PointSet,
    clean: &PointSet,
    cfg: &AbcConfig,
    abc_stream: RngStream,
    fresh_stream: RngStream,
    record: &mut TrialRecord,
) -> Result<()> {
    let post = rejection_abc(model, observed, cfg, abc_stream)?;
    record.epsilon = Some(post.epsilon_used);
    record.proposals_used = post.proposals_used;
    record.accepted = post.accepted.len();
    let map = kde_map(&post.accepted, KdeConfig::default())?;
    let err = mse(&map, &model.theta_star)?;
    record.map_theta = map.0.clone();
    record.mse_mean = Some(err.mean);
    record.mse_per_param = err.per_param;
    let fresh = model.simulate(&map, model.default_n, &mut fresh_stream.rng())?;
    record.energy_distance = Some(energy_distance(clean, &fresh)?);
    Ok(())
}
