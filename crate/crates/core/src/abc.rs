//! Rejection ABC: propose θ from the prior, simulate `m` points, accept when
//! the discrepancy to the observed data is strictly below ε.
//!
//! Proposal `i` draws everything from its own stream, `proposals.child(i)`,
//! and acceptances are decided in index order, so a run is a pure function of
//! its configuration and seed whatever the worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::divergence::{
    gamma_divergence_from_terms, gamma_log_term, median_heuristic_bandwidth, mmd_u_squared,
    DivergenceParams, NeighborStats,
};
use crate::error::{Error, Result};
use crate::neighbors::{PointSet, SpatialIndex};
use crate::simulators::{Simulator, Theta};
use crate::stream::RngStream;

/// Which discrepancy measure drives acceptance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DiscrepancySpec {
    Gamma {
        gamma: f64,
        #[serde(default = "default_k")]
        k: usize,
    },
    Kl {
        #[serde(default = "default_k")]
        k: usize,
    },
    /// `bandwidth: None` uses the median heuristic on the observed data.
    Mmd {
        #[serde(default)]
        bandwidth: Option<f64>,
    },
}

fn default_k() -> usize {
    1
}

impl DiscrepancySpec {
    pub fn gamma(gamma: f64, k: usize) -> Self {
        Self::Gamma { gamma, k }
    }

    pub fn kl(k: usize) -> Self {
        Self::Kl { k }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Gamma { gamma, k } => DivergenceParams::new(gamma, k).map(|_| ()),
            Self::Kl { k } if k == 0 => Err(Error::InvalidK(k)),
            Self::Mmd { bandwidth: Some(h) } if !(h.is_finite() && h > 0.0) => {
                Err(Error::InvalidBandwidth(h))
            }
            _ => Ok(()),
        }
    }

    /// Short method name: `gamma`, `kl` or `mmd`.
    pub fn label(&self) -> &'static str {
        match self {
            Self::Gamma { .. } => "gamma",
            Self::Kl { .. } => "kl",
            Self::Mmd { .. } => "mmd",
        }
    }

    pub fn gamma_value(&self) -> Option<f64> {
        match *self {
            Self::Gamma { gamma, .. } => Some(gamma),
            _ => None,
        }
    }

    pub fn k_value(&self) -> Option<usize> {
        match *self {
            Self::Gamma { k, .. } | Self::Kl { k } => Some(k),
            Self::Mmd { .. } => None,
        }
    }

    /// Binds the measure to the observed data, caching whatever depends on
    /// it alone.
    pub fn prepare<'a>(&self, observed: &'a PointSet) -> Result<Box<dyn Discrepancy + 'a>> {
        self.validate()?;
        Ok(match *self {
            Self::Gamma { gamma, k } => {
                let rho = observed_rho(observed, k)?;
                let n = observed.len() as f64;
                let observed_term = gamma_log_term(&rho, n - 1.0, observed.dim(), gamma);
                Box::new(GammaDiscrepancy {
                    observed,
                    rho,
                    observed_term,
                    gamma,
                    k,
                })
            }
            Self::Kl { k } => Box::new(KlDiscrepancy {
                observed,
                rho: observed_rho(observed, k)?,
                k,
            }),
            Self::Mmd { bandwidth } => Box::new(MmdDiscrepancy {
                observed,
                bandwidth: match bandwidth {
                    Some(h) => h,
                    None => median_heuristic_bandwidth(observed)?,
                },
            }),
        })
    }
}

fn observed_rho(observed: &PointSet, k: usize) -> Result<Vec<f64>> {
    let rho = SpatialIndex::new(observed).within(k)?.distances;
    if let Some(index) = rho.iter().position(|&d| d == 0.0) {
        return Err(Error::DuplicatePoints { index });
    }
    Ok(rho)
}

/// A discrepancy `D(X, ·)` with the observed set `X` already bound.
pub trait Discrepancy: Sync {
    fn evaluate(&self, synthetic: &PointSet) -> Result<f64>;
}

struct GammaDiscrepancy<'a> {
    observed: &'a PointSet,
    rho: Vec<f64>,
    observed_term: f64,
    gamma: f64,
    k: usize,
}

impl Discrepancy for GammaDiscrepancy<'_> {
    fn evaluate(&self, synthetic: &PointSet) -> Result<f64> {
        let stats = NeighborStats::with_observed(self.observed, self.rho.clone(), synthetic, self.k)?;
        Ok(gamma_divergence_from_terms(self.observed_term, &stats, self.gamma))
    }
}

struct KlDiscrepancy<'a> {
    observed: &'a PointSet,
    rho: Vec<f64>,
    k: usize,
}

impl Discrepancy for KlDiscrepancy<'_> {
    fn evaluate(&self, synthetic: &PointSet) -> Result<f64> {
        let stats = NeighborStats::with_observed(self.observed, self.rho.clone(), synthetic, self.k)?;
        Ok(stats.kl_divergence())
    }
}

struct MmdDiscrepancy<'a> {
    observed: &'a PointSet,
    bandwidth: f64,
}

impl Discrepancy for MmdDiscrepancy<'_> {
    fn evaluate(&self, synthetic: &PointSet) -> Result<f64> {
        mmd_u_squared(self.observed, synthetic, self.bandwidth)
    }
}

/// When the sampler stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Budget {
    /// Run until `target` acceptances or `max_proposals` proposals.
    Accepted { target: usize, max_proposals: usize },
    /// Evaluate exactly this many proposals.
    Proposals { count: usize },
}

impl Budget {
    /// `target` acceptances with the default cap of 200 × target proposals.
    pub fn accepted(target: usize) -> Self {
        Self::Accepted {
            target,
            max_proposals: target.saturating_mul(200),
        }
    }

    pub fn proposals(count: usize) -> Self {
        Self::Proposals { count }
    }

    fn max_proposals(&self) -> usize {
        match *self {
            Self::Accepted { max_proposals, .. } => max_proposals,
            Self::Proposals { count } => count,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Accepted { target, max_proposals } => {
                if target < 1 {
                    return Err(Error::InvalidConfig("accepted target must be at least 1".into()));
                }
                if max_proposals < target {
                    return Err(Error::InvalidConfig(format!(
                        "max_proposals {max_proposals} is below the target {target}"
                    )));
                }
                Ok(())
            }
            Self::Proposals { count } if count < 1 => {
                Err(Error::InvalidConfig("proposal count must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Acceptance threshold: fixed, or the lower `quantile` of `draws`
/// prior-predictive discrepancies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Tolerance {
    Fixed { epsilon: f64 },
    Calibrate { draws: usize, quantile: f64 },
}

impl Tolerance {
    pub fn fixed(epsilon: f64) -> Self {
        Self::Fixed { epsilon }
    }

    /// 10³ draws, 0.5% quantile.
    pub fn calibrated() -> Self {
        Self::Calibrate {
            draws: 1000,
            quantile: 0.005,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Self::Fixed { epsilon } if epsilon.is_nan() || epsilon <= 0.0 => Err(
                Error::InvalidConfig(format!("epsilon must be positive, got {epsilon}")),
            ),
            Self::Calibrate { draws, .. } if draws < 1 => {
                Err(Error::InvalidConfig("calibration needs at least one draw".into()))
            }
            Self::Calibrate { quantile, .. } if !(quantile > 0.0 && quantile <= 1.0) => Err(
                Error::InvalidConfig(format!("quantile must lie in (0, 1], got {quantile}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcConfig {
    pub budget: Budget,
    pub tolerance: Tolerance,
    /// Synthetic sample size `m`.
    pub synthetic_size: usize,
    pub discrepancy: DiscrepancySpec,
    /// Worker threads; 0 picks the machine's parallelism.
    pub workers: usize,
    /// Proposals evaluated per parallel batch.
    pub batch_size: usize,
}

impl AbcConfig {
    pub fn new(discrepancy: DiscrepancySpec, synthetic_size: usize, budget: Budget) -> Self {
        Self {
            budget,
            tolerance: Tolerance::calibrated(),
            synthetic_size,
            discrepancy,
            workers: 1,
            batch_size: 256,
        }
    }

    pub fn with_tolerance(mut self, tolerance: Tolerance) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.budget.validate()?;
        self.tolerance.validate()?;
        self.discrepancy.validate()?;
        if self.synthetic_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "synthetic sample size must be at least 2, got {}",
                self.synthetic_size
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
    }
}

/// Accepted draws of one rejection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbcPosterior {
    pub accepted: Vec<Theta>,
    /// Discrepancy of each accepted draw, aligned with `accepted`.
    pub discrepancies: Vec<f64>,
    /// Proposal index of each accepted draw.
    pub proposal_indices: Vec<usize>,
    pub proposals_used: usize,
    /// Proposals whose simulation or discrepancy failed.
    pub failed_proposals: usize,
    pub epsilon_used: f64,
    /// The acceptance target was not met within the proposal cap.
    pub truncated: bool,
}

impl AbcPosterior {
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted.len() as f64 / self.proposals_used as f64
    }

    /// Accepted draws, one row per draw.
    pub fn sample_matrix(&self) -> Vec<Vec<f64>> {
        self.accepted.iter().map(|t| t.0.clone()).collect()
    }
}

/// One evaluated proposal.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub theta: Theta,
    pub discrepancy: Result<f64>,
}

/// Draws θ from the prior, simulates `m` points and scores them, all from
/// `stream`.
pub fn evaluate_proposal(
    simulator: &dyn Simulator,
    discrepancy: &dyn Discrepancy,
    m: usize,
    stream: RngStream,
) -> Proposal {
    let mut rng = stream.rng();
    let theta = simulator.sample_prior(&mut rng);
    let discrepancy = simulator
        .simulate(&theta, m, &mut rng)
        .and_then(|y| discrepancy.evaluate(&y))
        .and_then(|d| {
            if d.is_nan() {
                Err(Error::DegenerateSample)
            } else {
                Ok(d)
            }
        });
    Proposal { theta, discrepancy }
}

fn evaluate_batch(
    pool: &rayon::ThreadPool,
    simulator: &dyn Simulator,
    discrepancy: &dyn Discrepancy,
    m: usize,
    streams: &RngStream,
    range: std::ops::Range<usize>,
) -> Vec<Proposal> {
    pool.install(|| {
        range
            .into_par_iter()
            .map(|i| evaluate_proposal(simulator, discrepancy, m, streams.child(i as u64)))
            .collect()
    })
}

/// Lower empirical quantile: the `⌈q·N⌉`-th smallest value (1-based).
pub fn lower_quantile(values: &[f64], quantile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (quantile * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Prior-predictive discrepancies for `draws` proposals on `stream`'s children.
/// Failed draws are skipped.
pub fn calibration_discrepancies(
    simulator: &dyn Simulator,
    discrepancy: &dyn Discrepancy,
    cfg: &AbcConfig,
    draws: usize,
    stream: RngStream,
) -> Result<Vec<f64>> {
    let pool = cfg.pool()?;
    let proposals = evaluate_batch(&pool, simulator, discrepancy, cfg.synthetic_size, &stream, 0..draws);
    let values: Vec<f64> = proposals
        .into_iter()
        .filter_map(|p| p.discrepancy.ok())
        .collect();
    if values.len() < draws {
        log::warn!("{} of {draws} calibration draws failed", draws - values.len());
    }
    if values.is_empty() {
        return Err(Error::CalibrationFailed(draws));
    }
    Ok(values)
}

/// ε as the lower `quantile` of `draws` prior-predictive discrepancies
/// (10³ draws at 0.5% when `cfg` holds a fixed tolerance).
pub fn calibrate_epsilon(
    simulator: &dyn Simulator,
    observed: &PointSet,
    cfg: &AbcConfig,
    stream: RngStream,
) -> Result<f64> {
    let (draws, quantile) = match cfg.tolerance {
        Tolerance::Calibrate { draws, quantile } => (draws, quantile),
        Tolerance::Fixed { .. } => (1000, 0.005),
    };
    cfg.validate()?;
    check_observed(simulator, observed)?;
    let discrepancy = cfg.discrepancy.prepare(observed)?;
    let values = calibration_discrepancies(simulator, discrepancy.as_ref(), cfg, draws, stream)?;
    lower_quantile(&values, quantile)
}

fn check_observed(simulator: &dyn Simulator, observed: &PointSet) -> Result<()> {
    if observed.dim() != simulator.data_dim() {
        return Err(Error::DimensionMismatch {
            left: observed.dim(),
            right: simulator.data_dim(),
        });
    }
    Ok(())
}

/// Runs rejection ABC. Calibration (if requested) uses `stream.child(0)`;
/// proposal `i` uses `stream.child(1).child(i)`.
pub fn rejection_abc(
    simulator: &dyn Simulator,
    observed: &PointSet,
    cfg: &AbcConfig,
    stream: RngStream,
) -> Result<AbcPosterior> {
    cfg.validate()?;
    check_observed(simulator, observed)?;
    let discrepancy = cfg.discrepancy.prepare(observed)?;
    let epsilon = match cfg.tolerance {
        Tolerance::Fixed { epsilon } => epsilon,
        Tolerance::Calibrate { draws, quantile } => {
            let values = calibration_discrepancies(
                simulator,
                discrepancy.as_ref(),
                cfg,
                draws,
                stream.child(0),
            )?;
            lower_quantile(&values, quantile)?
        }
    };
    run_with_epsilon(simulator, discrepancy.as_ref(), cfg, epsilon, stream.child(1))
}

/// The rejection loop proper, with ε known and the discrepancy prepared.
pub fn run_with_epsilon(
    simulator: &dyn Simulator,
    discrepancy: &dyn Discrepancy,
    cfg: &AbcConfig,
    epsilon: f64,
    proposals: RngStream,
) -> Result<AbcPosterior> {
    let pool = cfg.pool()?;
    let cap = cfg.budget.max_proposals();
    let target = match cfg.budget {
        Budget::Accepted { target, .. } => Some(target),
        Budget::Proposals { .. } => None,
    };
    let mut post = AbcPosterior {
        accepted: Vec::new(),
        discrepancies: Vec::new(),
        proposal_indices: Vec::new(),
        proposals_used: 0,
        failed_proposals: 0,
        epsilon_used: epsilon,
        truncated: false,
    };
    let batch = cfg.batch_size.max(pool.current_num_threads());
    let mut start = 0;
    'outer: while start < cap {
        let end = (start + batch).min(cap);
        let results = evaluate_batch(&pool, simulator, discrepancy, cfg.synthetic_size, &proposals, start..end);
        for (offset, p) in results.into_iter().enumerate() {
            let index = start + offset;
            post.proposals_used = index + 1;
            match p.discrepancy {
                Ok(d) if d < epsilon => {
                    post.accepted.push(p.theta);
                    post.discrepancies.push(d);
                    post.proposal_indices.push(index);
                    if target == Some(post.accepted.len()) {
                        break 'outer;
                    }
                }
                Ok(_) => {}
                Err(e) => {
                    log::debug!("proposal {index} failed: {e}");
                    post.failed_proposals += 1;
                }
            }
        }
        start = end;
    }
    if post.failed_proposals > 0 {
        log::info!(
            "{} of {} proposals failed and were rejected",
            post.failed_proposals,
            post.proposals_used
        );
    }
    if post.accepted.is_empty() {
        return Err(Error::EpsilonTooTight {
            proposals: post.proposals_used,
            epsilon,
        });
    }
    post.truncated = target.is_some_and(|t| post.accepted.len() < t);
    Ok(post)
}

/// One calibrated γ-run per grid value; run `i` uses `stream.child(i)`.
/// `k` is taken from `cfg.discrepancy` when it is a γ or KL spec, else 1.
pub fn run_grid(
    simulator: &dyn Simulator,
    observed: &PointSet,
    cfg: &AbcConfig,
    gamma_grid: &[f64],
    stream: RngStream,
) -> Result<Vec<(f64, AbcPosterior)>> {
    if gamma_grid.is_empty() {
        return Err(Error::InvalidConfig("empty gamma grid".into()));
    }
    let k = cfg.discrepancy.k_value().unwrap_or(1);
    gamma_grid
        .iter()
        .enumerate()
        .map(|(i, &gamma)| {
            let run_cfg = AbcConfig {
                discrepancy: DiscrepancySpec::gamma(gamma, k),
                ..cfg.clone()
            };
            rejection_abc(simulator, observed, &run_cfg, stream.child(i as u64))
                .map(|post| (gamma, post))
                .map_err(|e| Error::GridRun {
                    gamma,
                    source: Box::new(e),
                })
        })
        .collect()
}
