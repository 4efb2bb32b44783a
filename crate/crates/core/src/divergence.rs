//! Sample-based discrepancy measures between an observed set `X` (n points)
//! and a synthetic set `Y` (m points) in ℝ^d.
//!
//! * [`gamma_divergence_knn`]: k-NN plug-in estimate of the γ-divergence,
//!   evaluated from neighbour distances only. With ρ_k(i) the k-NN distance
//!   of `X_i` within `X`, ρ̄_k(j) that of `Y_j` within `Y`, and ν_k(i) the
//!   k-NN distance from `X_i` into `Y`,
//!
//!   ```text
//!   D = 1/(γ(1+γ)) · [ log (1/n)Σᵢ ((n−1)ρ_k(i)^d)^(−γ)
//!                      + γ log (1/m)Σⱼ ((m−1)ρ̄_k(j)^d)^(−γ)
//!                      − (1+γ) log (1/n)Σᵢ (m ν_k(i)^d)^(−γ) ]
//!   ```
//!
//!   The unit-ball volume and the factor k cancel between the three terms.
//!   Each sum is accumulated with log-sum-exp on `−γ(log c + d log r)`.
//! * [`gamma_divergence_density_path`]: the same quantity computed through
//!   explicit k-NN density estimates, unit-ball volume included.
//! * [`kl_divergence_knn`]: the k-NN Kullback-Leibler estimator
//!   `(d/n)Σᵢ log(ν_k(i)/ρ_k(i)) + log(m/(n−1))`.
//! * [`mmd_u_squared`]: unbiased squared MMD with a Gaussian kernel.
//!
//! [`mc_true_divergence`] gives Monte-Carlo ground truth for analytic
//! densities, and [`outlier_shift`] probes how a single far-away point moves
//! the γ estimate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::{sq_dist, NeighborDistances, PointSet, SpatialIndex};

/// `(γ, k)` for the k-NN γ-divergence estimator; requires `0 < γ < k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceParams {
    gamma: f64,
    k: usize,
}

impl DivergenceParams {
    pub fn new(gamma: f64, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidK(k));
        }
        if !(gamma.is_finite() && gamma > 0.0 && gamma < k as f64) {
            return Err(Error::InvalidGamma { gamma, k });
        }
        Ok(Self { gamma, k })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// `log((1/N) Σ exp(v))` without overflow.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (s / values.len() as f64).ln()
}

/// Volume of the d-dimensional unit ball, via V_d = V_{d−2}·2π/d.
pub fn unit_ball_volume(d: usize) -> f64 {
    let mut v = if d % 2 == 0 { 1.0 } else { 2.0 };
    let mut j = if d % 2 == 0 { 2 } else { 3 };
    while j <= d {
        v *= 2.0 * std::f64::consts::PI / j as f64;
        j += 2;
    }
    v
}

/// The three neighbour-distance vectors shared by the k-NN estimators.
#[derive(Debug, Clone)]
pub struct NeighborStats {
    pub dim: usize,
    /// ρ_k(i): within `X`.
    pub rho: Vec<f64>,
    /// ρ̄_k(j): within `Y`.
    pub rho_bar: Vec<f64>,
    /// ν_k(i): from `X` into `Y`.
    pub nu: Vec<f64>,
}

impl NeighborStats {
    pub fn compute(x: &PointSet, y: &PointSet, k: usize) -> Result<Self> {
        check_dims(x, y)?;
        let rho = SpatialIndex::new(x).within(k)?.distances;
        Self::with_observed(x, rho, y, k)
    }

    /// Like [`compute`](Self::compute) with ρ_k of `x` already known.
    pub fn with_observed(x: &PointSet, rho: Vec<f64>, y: &PointSet, k: usize) -> Result<Self> {
        check_dims(x, y)?;
        let index = SpatialIndex::new(y);
        let rho_bar = index.within(k)?.distances;
        let nu = positive(index.cross(x, k)?)?.distances;
        Ok(Self {
            dim: x.dim(),
            rho,
            rho_bar,
            nu,
        })
    }

    pub fn n(&self) -> usize {
        self.rho.len()
    }

    pub fn m(&self) -> usize {
        self.rho_bar.len()
    }

    /// γ-divergence estimate from the cached distances.
    pub fn gamma_divergence(&self, gamma: f64) -> f64 {
        let n = self.n() as f64;
        let observed = gamma_log_term(&self.rho, n - 1.0, self.dim, gamma);
        gamma_divergence_from_terms(observed, self, gamma)
    }

    /// k-NN KL estimate from the cached distances.
    pub fn kl_divergence(&self) -> f64 {
        let (n, m) = (self.n() as f64, self.m() as f64);
        let s: f64 = self
            .nu
            .iter()
            .zip(&self.rho)
            .map(|(nu, rho)| (nu / rho).ln())
            .sum();
        self.dim as f64 * s / n + (m / (n - 1.0)).ln()
    }
}

/// `log (1/N) Σ (scale · r^d)^(−γ)` in log space.
pub(crate) fn gamma_log_term(dist: &[f64], scale: f64, dim: usize, gamma: f64) -> f64 {
    let ln_scale = scale.ln();
    let d = dim as f64;
    let logs: Vec<f64> = dist
        .iter()
        .map(|r| -gamma * (ln_scale + d * r.ln()))
        .collect();
    log_mean_exp(&logs)
}

/// Combines a precomputed observed-set term with the synthetic and cross terms.
pub(crate) fn gamma_divergence_from_terms(observed: f64, stats: &NeighborStats, gamma: f64) -> f64 {
    let m = stats.m() as f64;
    let synthetic = gamma_log_term(&stats.rho_bar, m - 1.0, stats.dim, gamma);
    let cross = gamma_log_term(&stats.nu, m, stats.dim, gamma);
    (observed + gamma * synthetic - (1.0 + gamma) * cross) / (gamma * (1.0 + gamma))
}

fn check_dims(x: &PointSet, y: &PointSet) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    Ok(())
}

fn positive(nd: NeighborDistances) -> Result<NeighborDistances> {
    if let Some(index) = nd.distances.iter().position(|&d| d == 0.0) {
        return Err(Error::DuplicatePoints { index });
    }
    Ok(nd)
}

/// k-NN γ-divergence estimate `D̂_γ(X ‖ Y)` (distance-only form).
pub fn gamma_divergence_knn(x: &PointSet, y: &PointSet, params: DivergenceParams) -> Result<f64> {
    let stats = NeighborStats::compute(x, y, params.k)?;
    Ok(stats.gamma_divergence(params.gamma))
}

/// The γ estimate computed through the k-NN density estimates
/// `p̂_k(x) = k / ((n−1) c̄ ρ_k^d)` etc., raised to γ after scaling by `c̄/k`.
/// Agrees with [`gamma_divergence_knn`] up to rounding.
pub fn gamma_divergence_density_path(
    x: &PointSet,
    y: &PointSet,
    params: DivergenceParams,
) -> Result<f64> {
    let stats = NeighborStats::compute(x, y, params.k)?;
    let (n, m) = (stats.n() as f64, stats.m() as f64);
    let (k, g, d) = (params.k as f64, params.gamma, stats.dim as i32);
    let c_bar = unit_ball_volume(stats.dim);
    let mean_pow = |dist: &[f64], count: f64| -> f64 {
        dist.iter()
            .map(|r| {
                let density = k / (count * c_bar * r.powi(d));
                (c_bar / k * density).powf(g)
            })
            .sum::<f64>()
            / dist.len() as f64
    };
    let p_x = mean_pow(&stats.rho, n - 1.0);
    let q_y = mean_pow(&stats.rho_bar, m - 1.0);
    let q_x = mean_pow(&stats.nu, m);
    Ok((p_x * q_y.powf(g) / q_x.powf(1.0 + g)).ln() / (g * (1.0 + g)))
}

/// k-NN estimate of `KL(p ‖ q)`.
pub fn kl_divergence_knn(x: &PointSet, y: &PointSet, k: usize) -> Result<f64> {
    Ok(NeighborStats::compute(x, y, k)?.kl_divergence())
}

#[inline]
fn gaussian_kernel(a: &[f64], b: &[f64], inv_two_h2: f64) -> f64 {
    (-sq_dist(a, b) * inv_two_h2).exp()
}

/// Unbiased U-statistic estimate of MMD² with kernel `exp(−‖a−b‖²/(2h²))`.
pub fn mmd_u_squared(x: &PointSet, y: &PointSet, bandwidth: f64) -> Result<f64> {
    check_dims(x, y)?;
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::InvalidBandwidth(bandwidth));
    }
    let (n, m) = (x.len(), y.len());
    if n < 2 || m < 2 {
        return Err(Error::SampleTooSmall {
            k: 2,
            available: n.min(m),
        });
    }
    let c = 1.0 / (2.0 * bandwidth * bandwidth);
    let self_sum = |s: &PointSet| -> f64 {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                acc += gaussian_kernel(s.row(i), s.row(j), c);
            }
        }
        2.0 * acc
    };
    let mut cross = 0.0;
    for a in x.rows() {
        for b in y.rows() {
            cross += gaussian_kernel(a, b, c);
        }
    }
    let (nf, mf) = (n as f64, m as f64);
    Ok(self_sum(x) / (nf * (nf - 1.0)) + self_sum(y) / (mf * (mf - 1.0))
        - 2.0 * cross / (nf * mf))
}

/// Median of the n(n−1)/2 pairwise distances (mean of the two middle
/// values when the count is even).
pub fn median_heuristic_bandwidth(x: &PointSet) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::SampleTooSmall { k: 2, available: n });
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(sq_dist(x.row(i), x.row(j)).sqrt());
        }
    }
    let mid = d.len() / 2;
    let odd = d.len() % 2 == 1;
    let (lower, &mut upper, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let median = if odd {
        upper
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (below + upper)
    };
    if median <= 0.0 {
        return Err(Error::DegenerateSample);
    }
    Ok(median)
}

/// Axis-aligned Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Gaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::ZeroDimension);
        }
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch {
                left: mean.len(),
                right: std.len(),
            });
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidConfig(
                "gaussian needs finite mean and positive std".into(),
            ));
        }
        Ok(Self { mean, std })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    fn ln_pdf(&self, x: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.mean
            .iter()
            .zip(&self.std)
            .zip(x)
            .map(|((m, s), v)| {
                let z = (v - m) / s;
                -0.5 * (z * z + ln_2pi) - s.ln()
            })
            .sum()
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for ((o, m), s) in out.iter_mut().zip(&self.mean).zip(&self.std) {
            let z: f64 = StandardNormal.sample(rng);
            *o = m + s * z;
        }
    }
}

/// An analytic density with both a pdf and a sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DensityModel {
    Gaussian(Gaussian),
    /// Weighted mixture; weights are non-negative and sum to one.
    Mixture(Vec<(f64, Gaussian)>),
}

impl DensityModel {
    pub fn normal(mean: f64, std: f64) -> Result<Self> {
        Ok(Self::Gaussian(Gaussian::new(vec![mean], vec![std])?))
    }

    pub fn mixture(components: Vec<(f64, Gaussian)>) -> Result<Self> {
        let first = components.first().ok_or(Error::EmptySample)?;
        let dim = first.1.mean.len();
        if components.iter().any(|(_, g)| g.mean.len() != dim) {
            return Err(Error::InvalidConfig("mixture components differ in dimension".into()));
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if components.iter().any(|c| !(c.0 >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("mixture weights must sum to 1".into()));
        }
        Ok(Self::Mixture(
            components.into_iter().filter(|c| c.0 > 0.0).collect(),
        ))
    }

    /// Huber contamination `(1−η)·clean + η·outlier`.
    pub fn contaminated(clean: Gaussian, eta: f64, outlier: Gaussian) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidContamination(format!("eta = {eta}")));
        }
        Self::mixture(vec![(1.0 - eta, clean), (eta, outlier)])
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Gaussian(g) => g.mean.len(),
            Self::Mixture(c) => c[0].1.mean.len(),
        }
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        match self {
            Self::Gaussian(g) => g.ln_pdf(x),
            Self::Mixture(c) => {
                let terms: Vec<f64> = c.iter().map(|(w, g)| w.ln() + g.ln_pdf(x)).collect();
                let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
            }
        }
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Result<PointSet> {
        let dim = self.dim();
        let mut data = vec![0.0; count * dim];
        for row in data.chunks_exact_mut(dim) {
            match self {
                Self::Gaussian(g) => g.sample_into(rng, row),
                Self::Mixture(c) => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut chosen = &c[c.len() - 1].1;
                    for (w, g) in c {
                        acc += w;
                        if u < acc {
                            chosen = g;
                            break;
                        }
                    }
                    chosen.sample_into(rng, row);
                }
            }
        }
        PointSet::from_flat(data, dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrueDivergence {
    Gamma { gamma: f64 },
    Kl,
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Monte-Carlo value of `D(p ‖ q)` for analytic densities.
///
/// The γ case evaluates `log E_p p^γ − (1+γ) log E_p q^γ + γ log E_q q^γ`
/// (scaled by `1/(γ(1+γ))`) from `samples` i.i.d. draws of each density; the
/// standard error comes from the delta method on the three log-means.
pub fn mc_true_divergence<R: Rng + ?Sized>(
    p: &DensityModel,
    q: &DensityModel,
    kind: TrueDivergence,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if samples < 1000 {
        return Err(Error::TooFewMonteCarloSamples(samples));
    }
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            left: p.dim(),
            right: q.dim(),
        });
    }
    let xp = p.sample(rng, samples)?;
    let nf = samples as f64;
    match kind {
        TrueDivergence::Kl => {
            let v: Vec<f64> = xp.rows().map(|x| p.ln_pdf(x) - q.ln_pdf(x)).collect();
            let (mean, var) = mean_var(&v);
            Ok(McEstimate {
                value: mean,
                std_error: (var / nf).sqrt(),
            })
        }
        TrueDivergence::Gamma { gamma } => {
            if !(gamma.is_finite() && gamma > 0.0) {
                return Err(Error::InvalidGamma { gamma, k: 0 });
            }
            let yq = q.sample(rng, samples)?;
            let lp: Vec<f64> = xp.rows().map(|x| gamma * p.ln_pdf(x)).collect();
            let lqx: Vec<f64> = xp.rows().map(|x| gamma * q.ln_pdf(x)).collect();
            let lqy: Vec<f64> = yq.rows().map(|y| gamma * q.ln_pdf(y)).collect();
            let (la, lb, lc) = (log_mean_exp(&lp), log_mean_exp(&lqx), log_mean_exp(&lqy));
            let scale = 1.0 / (gamma * (1.0 + gamma));
            let value = scale * (la - (1.0 + gamma) * lb + gamma * lc);
            // Influence of each draw on the log-means: a_i/A − (1+γ) b_i/B.
            let u: Vec<f64> = lp
                .iter()
                .zip(&lqx)
                .map(|(a, b)| (a - la).exp() - (1.0 + gamma) * (b - lb).exp())
                .collect();
            let w: Vec<f64> = lqy.iter().map(|c| gamma * (c - lc).exp()).collect();
            let var = mean_var(&u).1 / nf + mean_var(&w).1 / nf;
            Ok(McEstimate {
                value,
                std_error: scale * var.sqrt(),
            })
        }
    }
}

/// `D̂_γ(X ∪ {x0} ‖ Y) − D̂_γ(X ‖ Y)`.
pub fn outlier_shift(
    x: &PointSet,
    y: &PointSet,
    x0: &[f64],
    params: DivergenceParams,
) -> Result<f64> {
    let base = gamma_divergence_knn(x, y, params)?;
    let augmented = x.with_point(x0)?;
    Ok(gamma_divergence_knn(&augmented, y, params)? - base)
}

/// Limit of [`outlier_shift`] as ‖x0‖ → ∞: `log(1 − 1/n²)/(1+γ)`, n = |X|.
pub fn outlier_shift_limit(n: usize, gamma: f64) -> f64 {
    let n = n as f64;
    (-1.0 / (n * n)).ln_1p() / (1.0 + gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pts(v: &[f64]) -> PointSet {
        PointSet::from_scalars(v).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(DivergenceParams::new(0.5, 1).is_ok());
        assert!(matches!(
            DivergenceParams::new(1.0, 1),
            Err(Error::InvalidGamma { .. })
        ));
        assert!(DivergenceParams::new(0.0, 1).is_err());
        assert!(DivergenceParams::new(-0.5, 1).is_err());
        assert!(DivergenceParams::new(f64::NAN, 2).is_err());
        assert!(DivergenceParams::new(1.5, 2).is_ok());
        assert!(matches!(DivergenceParams::new(0.5, 0), Err(Error::InvalidK(0))));
    }

    #[test]
    fn unit_ball() {
        assert_abs_diff_eq!(unit_ball_volume(1), 2.0);
        assert_abs_diff_eq!(unit_ball_volume(2), std::f64::consts::PI, epsilon = 1e-15);
        assert_abs_diff_eq!(
            unit_ball_volume(3),
            4.0 / 3.0 * std::f64::consts::PI,
            epsilon = 1e-14
        );
    }

    #[test]
    fn two_point_gamma_hand_value() {
        // ρ = (2, 2), ρ̄ = (2, 2), ν = (1, 1); n = m = 2, d = 1, γ = 1/2.
        let g: f64 = 0.5;
        let a = ((1.0f64 * 2.0).powf(-g)).ln();
        let b = ((1.0f64 * 2.0).powf(-g)).ln();
        let c = ((2.0f64 * 1.0).powf(-g)).ln();
        let expected = (a + g * b - (1.0 + g) * c) / (g * (1.0 + g));
        let params = DivergenceParams::new(g, 1).unwrap();
        let got = gamma_divergence_knn(&pts(&[0.0, 2.0]), &pts(&[1.0, 3.0]), params).unwrap();
        assert_abs_diff_eq!(got, expected, epsilon = 1e-15);
        let dens =
            gamma_divergence_density_path(&pts(&[0.0, 2.0]), &pts(&[1.0, 3.0]), params).unwrap();
        assert_abs_diff_eq!(dens, expected, epsilon = 1e-15);
    }

    #[test]
    fn three_point_gamma_hand_value() {
        // X = {0, 1, 3}: ρ₁ = (1, 1, 2). Y = {0.5, 2, 6}: ρ̄₁ = (1.5, 1.5, 4).
        // ν₁ from X into Y = (0.5, 0.5, 1).
        let g: f64 = 0.25;
        let lme = |v: &[f64]| (v.iter().map(|t| t.exp()).sum::<f64>() / v.len() as f64).ln();
        let t = |c: f64, r: f64| -g * (c * r).ln();
        let a = lme(&[t(2.0, 1.0), t(2.0, 1.0), t(2.0, 2.0)]);
        let b = lme(&[t(2.0, 1.5), t(2.0, 1.5), t(2.0, 4.0)]);
        let c = lme(&[t(3.0, 0.5), t(3.0, 0.5), t(3.0, 1.0)]);
        let expected = (a + g * b - (1.0 + g) * c) / (g * (1.0 + g));
        let params = DivergenceParams::new(g, 1).unwrap();
        let x = pts(&[0.0, 1.0, 3.0]);
        let y = pts(&[0.5, 2.0, 6.0]);
        assert_abs_diff_eq!(
            gamma_divergence_knn(&x, &y, params).unwrap(),
            expected,
            epsilon = 1e-14
        );
    }

    #[test]
    fn density_path_matches_in_low_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [1usize, 2, 3] {
            let x = DensityModel::Gaussian(Gaussian::standard(d))
                .sample(&mut rng, 80)
                .unwrap();
            let y = DensityModel::Gaussian(Gaussian::new(vec![0.7; d], vec![1.3; d]).unwrap())
                .sample(&mut rng, 90)
                .unwrap();
            for (g, k) in [(0.3, 1), (0.9, 1), (1.5, 3)] {
                let p = DivergenceParams::new(g, k).unwrap();
                let a = gamma_divergence_knn(&x, &y, p).unwrap();
                let b = gamma_divergence_density_path(&x, &y, p).unwrap();
                assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gamma_errors() {
        let p = DivergenceParams::new(0.5, 1).unwrap();
        let dup = pts(&[0.0, 1.0, 1.0]);
        let y = pts(&[0.2, 0.4, 2.0]);
        assert!(matches!(
            gamma_divergence_knn(&dup, &y, p),
            Err(Error::DuplicatePoints { .. })
        ));
        let p2 = DivergenceParams::new(1.5, 2).unwrap();
        assert!(matches!(
            gamma_divergence_knn(&pts(&[0.0, 1.0]), &y, p2),
            Err(Error::SampleTooSmall { .. })
        ));
        // A synthetic point sitting exactly on an observed one.
        assert!(matches!(
            gamma_divergence_knn(&pts(&[0.0, 1.0]), &pts(&[1.0, 3.0]), p),
            Err(Error::DuplicatePoints { .. })
        ));
    }

    #[test]
    fn kl_two_point_is_zero() {
        let v = kl_divergence_knn(&pts(&[0.0, 2.0]), &pts(&[1.0, 3.0]), 1).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn permutation_invariance() {
        let x = pts(&[0.0, 0.3, 1.7, -2.0, 4.1]);
        let y = pts(&[0.1, 2.5, -0.7, 3.3]);
        let xp = x.select(&[3, 0, 4, 1, 2]);
        let yp = y.select(&[2, 3, 1, 0]);
        let p = DivergenceParams::new(0.4, 1).unwrap();
        assert_abs_diff_eq!(
            gamma_divergence_knn(&x, &y, p).unwrap(),
            gamma_divergence_knn(&xp, &yp, p).unwrap(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            kl_divergence_knn(&x, &y, 1).unwrap(),
            kl_divergence_knn(&xp, &yp, 1).unwrap(),
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(
            mmd_u_squared(&x, &y, 1.0).unwrap(),
            mmd_u_squared(&xp, &yp, 1.0).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn mmd_three_points_matches_double_loop() {
        let x = PointSet::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let y = PointSet::new(vec![vec![0.5, 0.5], vec![2.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let h: f64 = 0.8;
        let k = |a: &[f64], b: &[f64]| {
            let s: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
            (-s / (2.0 * h * h)).exp()
        };
        let (xr, yr) = (x.to_rows(), y.to_rows());
        let mut kxx = 0.0;
        let mut kyy = 0.0;
        let mut kxy = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    kxx += k(&xr[i], &xr[j]);
                    kyy += k(&yr[i], &yr[j]);
                }
                kxy += k(&xr[i], &yr[j]);
            }
        }
        let expected = kxx / 6.0 + kyy / 6.0 - 2.0 * kxy / 9.0;
        assert_abs_diff_eq!(mmd_u_squared(&x, &y, h).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(
            mmd_u_squared(&y, &x, h).unwrap(),
            mmd_u_squared(&x, &y, h).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn mmd_errors() {
        let x = pts(&[0.0, 1.0]);
        assert!(matches!(
            mmd_u_squared(&x, &x, 0.0),
            Err(Error::InvalidBandwidth(_))
        ));
        assert!(mmd_u_squared(&x, &pts(&[1.0]), 1.0).is_err());
    }

    #[test]
    fn median_heuristic_small() {
        assert_eq!(median_heuristic_bandwidth(&pts(&[0.0, 1.0, 3.0])).unwrap(), 2.0);
        assert_eq!(median_heuristic_bandwidth(&pts(&[0.0, 4.0])).unwrap(), 4.0);
        // Four points: distances {1, 2, 3, 1, 2, 1} → sorted middle pair (1, 2).
        assert_eq!(
            median_heuristic_bandwidth(&pts(&[0.0, 1.0, 2.0, 3.0])).unwrap(),
            1.5
        );
        assert!(median_heuristic_bandwidth(&pts(&[1.0])).is_err());
        assert_eq!(
            median_heuristic_bandwidth(&pts(&[2.0, 2.0, 2.0])),
            Err(Error::DegenerateSample)
        );
    }

    #[test]
    fn median_heuristic_matches_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DensityModel::Gaussian(Gaussian::standard(3))
            .sample(&mut rng, 100)
            .unwrap();
        let rows = x.to_rows();
        let mut all = Vec::new();
        for i in 0..rows.len() {
            for j in i + 1..rows.len() {
                let s: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum();
                all.push(s.sqrt());
            }
        }
        all.sort_by(f64::total_cmp);
        let n = all.len();
        let expected = if n % 2 == 1 {
            all[n / 2]
        } else {
            0.5 * (all[n / 2 - 1] + all[n / 2])
        };
        assert_eq!(median_heuristic_bandwidth(&x).unwrap(), expected);
    }

    #[test]
    fn density_model_normalises() {
        // MC check that pdf and sampler agree: E_q[p/q] = 1 with q a wide proposal.
        let p = DensityModel::contaminated(
            Gaussian::standard(1),
            0.2,
            Gaussian::new(vec![10.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let q = DensityModel::normal(5.0, 6.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = q.sample(&mut rng, 200_000).unwrap();
        let mass: f64 =
            draws.rows().map(|x| (p.ln_pdf(x) - q.ln_pdf(x)).exp()).sum::<f64>() / 200_000.0;
        assert!((mass - 1.0).abs() < 0.01, "mass {mass}");
        // And the sampler puts ~20% of its draws near the outlier mode.
        let s = p.sample(&mut rng, 100_000).unwrap();
        let frac = s.rows().filter(|x| x[0] > 5.0).count() as f64 / 100_000.0;
        assert!((frac - 0.2).abs() < 0.01, "frac {frac}");
    }

    #[test]
    fn mc_truth_closed_forms() {
        let p = DensityModel::normal(0.0, 1.0).unwrap();
        let q = DensityModel::normal(1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let kl = mc_true_divergence(&p, &q, TrueDivergence::Kl, 10_000, &mut rng).unwrap();
        assert!((kl.value - 0.5).abs() < 3.0 * kl.std_error, "{kl:?}");
        let same = mc_true_divergence(&p, &p, TrueDivergence::Gamma { gamma: 0.5 }, 10_000, &mut rng)
            .unwrap();
        assert!(same.value.abs() < 3.0 * same.std_error.max(1e-12), "{same:?}");
        // Equal-variance Gaussians: D_γ = μ²/(2(1+γ)).
        let g = mc_true_divergence(&p, &q, TrueDivergence::Gamma { gamma: 0.5 }, 10_000, &mut rng)
            .unwrap();
        assert!((g.value - 1.0 / 3.0).abs() < 3.0 * g.std_error, "{g:?}");
        let small =
            mc_true_divergence(&p, &q, TrueDivergence::Gamma { gamma: 0.01 }, 10_000, &mut rng)
                .unwrap();
        assert!((small.value - 0.5).abs() < 0.05, "{small:?}");
        assert_eq!(
            mc_true_divergence(&p, &q, TrueDivergence::Kl, 999, &mut rng),
            Err(Error::TooFewMonteCarloSamples(999))
        );
    }

    #[test]
    fn outlier_shift_reaches_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = DensityModel::Gaussian(Gaussian::standard(2));
        let x = model.sample(&mut rng, 100).unwrap();
        let y = model.sample(&mut rng, 100).unwrap();
        let p = DivergenceParams::new(0.5, 1).unwrap();
        let limit = outlier_shift_limit(100, 0.5);
        assert_abs_diff_eq!(limit, (1.0f64 - 1e-4).ln() / 1.5, epsilon = 1e-16);
        let mut last = f64::INFINITY;
        for r in [1e2, 1e3, 1e4, 1e6] {
            let x0 = [r / 2f64.sqrt(), r / 2f64.sqrt()];
            let err = (outlier_shift(&x, &y, &x0, p).unwrap() - limit).abs();
            assert!(err <= last, "err {err} > {last}");
            last = err;
        }
        assert!(last < 1e-6);
        let inside = outlier_shift(&x, &y, &[0.05, -0.02], p).unwrap();
        assert!((inside - limit).abs() > 1e-6);
    }
}
