//! The five benchmark generative models, their priors and true parameters,
//! plus Huber-style outlier injection.
//!
//! | id  | θ                              | data dim | n   |
//! |-----|--------------------------------|----------|-----|
//! | GM  | (p, μ₀ ∈ ℝ², μ₁ ∈ ℝ²)          | 2        | 500 |
//! | MG1 | (θ₁, θ₂, θ₃)                   | 5        | 500 |
//! | BB  | (θ₁, θ₂, θ₆, θ₇, θ₈)           | 2        | 500 |
//! | MA2 | (θ₁, θ₂)                       | 10       | 200 |
//! | GK  | (A, B, g, k, ρ)                | 5        | 500 |

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, StandardNormal, StudentT, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neighbors::PointSet;
use crate::stream::StreamRng;

/// A parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Theta(pub Vec<f64>);

impl Theta {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for Theta {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Anything the rejection sampler can propose from and simulate with.
pub trait Simulator: Sync {
    fn param_dim(&self) -> usize;
    fn data_dim(&self) -> usize;
    fn sample_prior(&self, rng: &mut StreamRng) -> Theta;
    fn simulate(&self, theta: &Theta, m: usize, rng: &mut StreamRng) -> Result<PointSet>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelId {
    #[serde(rename = "GM")]
    Gm,
    #[serde(rename = "MG1")]
    Mg1,
    #[serde(rename = "BB")]
    Bb,
    #[serde(rename = "MA2")]
    Ma2,
    #[serde(rename = "GK")]
    Gk,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [Self::Gm, Self::Mg1, Self::Bb, Self::Ma2, Self::Gk];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gm => "GM",
            Self::Mg1 => "MG1",
            Self::Bb => "BB",
            Self::Ma2 => "MA2",
            Self::Gk => "GK",
        }
    }

    pub fn spec(self) -> ModelSpec {
        ModelSpec::new(self)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown model '{s}'")))
    }
}

/// Static description of one benchmark model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: ModelId,
    pub param_dim: usize,
    pub data_dim: usize,
    pub default_n: usize,
    pub theta_star: Theta,
    pub param_names: Vec<String>,
}

/// Conventional g-and-k constant.
pub const GK_C: f64 = 0.8;

/// Row-length of one MA(2) observation.
pub const MA2_LENGTH: usize = 10;

/// Inter-departure components per MG1 observation.
pub const MG1_LENGTH: usize = 5;

impl ModelSpec {
    pub fn new(id: ModelId) -> Self {
        let (param_dim, data_dim, default_n, theta_star, param_names) = match id {
            ModelId::Gm => (
                5,
                2,
                500,
                vec![0.3, 0.7, 0.7, -0.7, -0.7],
                vec!["p", "mu0_x", "mu0_y", "mu1_x", "mu1_y"],
            ),
            ModelId::Mg1 => (3, MG1_LENGTH, 500, vec![1.0, 5.0, 0.2], vec!["theta1", "theta2", "theta3"]),
            ModelId::Bb => (
                5,
                2,
                500,
                vec![3.0, 2.5, 2.0, 1.5, 1.0],
                vec!["theta1", "theta2", "theta6", "theta7", "theta8"],
            ),
            ModelId::Ma2 => (2, MA2_LENGTH, 200, vec![0.6, 0.2], vec!["theta1", "theta2"]),
            ModelId::Gk => (
                5,
                5,
                500,
                vec![3.0, 1.0, 2.0, 0.5, -0.3],
                vec!["A", "B", "g", "k", "rho"],
            ),
        };
        Self {
            id,
            param_dim,
            data_dim,
            default_n,
            theta_star: Theta(theta_star),
            param_names: param_names.into_iter().map(String::from).collect(),
        }
    }

    /// Checks that `theta` lies where the simulator is defined.
    pub fn check_theta(&self, theta: &Theta) -> Result<()> {
        let t = theta.as_slice();
        if t.len() != self.param_dim {
            return Err(Error::ThetaLength {
                expected: self.param_dim,
                found: t.len(),
            });
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfSupport("non-finite parameter".into()));
        }
        let fail = |msg: &str| Err(Error::OutOfSupport(format!("{}: {msg}", self.id)));
        match self.id {
            ModelId::Gm if !(0.0..=1.0).contains(&t[0]) => fail("p must lie in [0, 1]"),
            ModelId::Mg1 if !(0.0 <= t[0] && t[0] <= t[1]) => fail("need 0 <= theta1 <= theta2"),
            ModelId::Mg1 if t[2] <= 0.0 => fail("arrival rate theta3 must be positive"),
            ModelId::Bb if t.iter().any(|&v| v <= 0.0) => fail("gamma shapes must be positive"),
            ModelId::Gk if t[1] <= 0.0 => fail("B must be positive"),
            ModelId::Gk if t[3] <= -0.5 => fail("k must exceed -0.5"),
            ModelId::Gk if t[4].abs() >= 1.0 / 3f64.sqrt() => {
                fail("|rho| must be below 1/sqrt(3) for a positive-definite covariance")
            }
            _ => Ok(()),
        }
    }

    /// One draw from the prior.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Theta {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let v = match self.id {
            ModelId::Gm => vec![
                u(0.0, 1.0),
                u(-1.0, 1.0),
                u(-1.0, 1.0),
                u(-1.0, 1.0),
                u(-1.0, 1.0),
            ],
            ModelId::Mg1 => {
                let t1 = u(0.0, 10.0);
                let t2 = t1 + u(0.0, 10.0);
                vec![t1, t2, u(0.0, 0.5)]
            }
            ModelId::Bb => (0..5).map(|_| u(0.0, 5.0)).collect(),
            ModelId::Ma2 => vec![u(-2.0, 2.0), u(-1.0, 1.0)],
            ModelId::Gk => {
                let mut t: Vec<f64> = (0..4).map(|_| u(0.0, 4.0)).collect();
                let r = u(0.0, 1.0);
                t.push(2.0 * 3f64.sqrt() * (r - 0.5) / 3.0);
                t
            }
        };
        Theta(v)
    }

    /// `m` i.i.d. observations from the model at `theta`.
    pub fn simulate<R: Rng + ?Sized>(&self, theta: &Theta, m: usize, rng: &mut R) -> Result<PointSet> {
        self.check_theta(theta)?;
        if m == 0 {
            return Err(Error::EmptySample);
        }
        let t = theta.as_slice();
        let mut data = Vec::with_capacity(m * self.data_dim);
        match self.id {
            ModelId::Gm => simulate_gm(t, m, rng, &mut data),
            ModelId::Mg1 => simulate_mg1(t, m, rng, &mut data),
            ModelId::Bb => simulate_bb(t, m, rng, &mut data),
            ModelId::Ma2 => simulate_ma2(t, m, rng, &mut data),
            ModelId::Gk => simulate_gk(t, m, rng, &mut data)?,
        }
        PointSet::from_flat(data, self.data_dim)
    }
}

impl Simulator for ModelSpec {
    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn data_dim(&self) -> usize {
        self.data_dim
    }

    fn sample_prior(&self, rng: &mut StreamRng) -> Theta {
        ModelSpec::sample_prior(self, rng)
    }

    fn simulate(&self, theta: &Theta, m: usize, rng: &mut StreamRng) -> Result<PointSet> {
        ModelSpec::simulate(self, theta, m, rng)
    }
}

// Component 0 has covariance [[0.5, -0.3], [-0.3, 0.5]]; its Cholesky factor
// is [[a, 0], [b, c]] with a = √0.5, b = −0.3/a, c = √(0.5 − b²).
fn simulate_gm<R: Rng + ?Sized>(t: &[f64], m: usize, rng: &mut R, out: &mut Vec<f64>) {
    let a = 0.5f64.sqrt();
    let b = -0.3 / a;
    let c = (0.5 - b * b).sqrt();
    for _ in 0..m {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        // Z ~ Bernoulli(p); Z = 1 selects the second component.
        if rng.random::<f64>() < t[0] {
            out.push(t[3] + 0.5 * z1);
            out.push(t[4] + 0.5 * z2);
        } else {
            out.push(t[1] + a * z1);
            out.push(t[2] + b * z1 + c * z2);
        }
    }
}

/// Inter-departure times of a single-server FIFO queue that starts empty.
///
/// `arrivals` are absolute arrival times, `services` the matching service
/// durations: `dᵢ = max(dᵢ₋₁, aᵢ) + sᵢ`, `xᵢ = dᵢ − dᵢ₋₁`, `d₀ = 0`.
pub fn lindley_interdepartures(arrivals: &[f64], services: &[f64]) -> Vec<f64> {
    let mut prev = 0.0f64;
    arrivals
        .iter()
        .zip(services)
        .map(|(&a, &s)| {
            let d = prev.max(a) + s;
            let x = d - prev;
            prev = d;
            x
        })
        .collect()
}

fn simulate_mg1<R: Rng + ?Sized>(t: &[f64], m: usize, rng: &mut R, out: &mut Vec<f64>) {
    let service = Uniform::new_inclusive(t[0], t[1]).expect("checked theta1 <= theta2");
    let inter = Exp::new(t[2]).expect("checked positive rate");
    let mut arrivals = [0.0; MG1_LENGTH];
    let mut services = [0.0; MG1_LENGTH];
    for _ in 0..m {
        let mut clock = 0.0;
        for i in 0..MG1_LENGTH {
            clock += inter.sample(rng);
            arrivals[i] = clock;
            services[i] = service.sample(rng);
        }
        out.extend(lindley_interdepartures(&arrivals, &services));
    }
}

/// One bivariate-beta point from the five active Gamma draws
/// `(U₁, U₂, U₆, U₇, U₈)`:
/// `V₁ = (U₁+U₇)/(U₆+U₈)`, `V₂ = (U₂+U₈)/(U₆+U₇)`, `Zₗ = Vₗ/(1+Vₗ)`.
pub fn bivariate_beta_point(u: [f64; 5]) -> [f64; 2] {
    let [u1, u2, u6, u7, u8] = u;
    // Vₗ/(1+Vₗ) written as num/(num+den) so a zero denominator stays finite.
    let (n1, d1) = (u1 + u7, u6 + u8);
    let (n2, d2) = (u2 + u8, u6 + u7);
    [n1 / (n1 + d1), n2 / (n2 + d2)]
}

fn simulate_bb<R: Rng + ?Sized>(t: &[f64], m: usize, rng: &mut R, out: &mut Vec<f64>) {
    let shapes: Vec<Gamma<f64>> = t
        .iter()
        .map(|&s| Gamma::new(s, 1.0).expect("checked positive shape"))
        .collect();
    for _ in 0..m {
        let mut u = [0.0; 5];
        for (ui, g) in u.iter_mut().zip(&shapes) {
            *ui = g.sample(rng);
        }
        out.extend(bivariate_beta_point(u));
    }
}

/// MA(2) series `xⱼ = zⱼ + θ₁zⱼ₋₁ + θ₂zⱼ₋₂`. `noise` holds `z₋₁, z₀, z₁, …`,
/// so the output has `noise.len() − 2` entries.
pub fn ma2_series(noise: &[f64], theta1: f64, theta2: f64) -> Vec<f64> {
    noise
        .windows(3)
        .map(|w| w[2] + theta1 * w[1] + theta2 * w[0])
        .collect()
}

fn simulate_ma2<R: Rng + ?Sized>(t: &[f64], m: usize, rng: &mut R, out: &mut Vec<f64>) {
    let student = StudentT::new(5.0).expect("5 degrees of freedom");
    let mut noise = [0.0; MA2_LENGTH + 2];
    for _ in 0..m {
        for z in noise.iter_mut() {
            *z = student.sample(rng);
        }
        out.extend(ma2_series(&noise, t[0], t[1]));
    }
}

/// g-and-k quantile function applied to a standard-normal quantile `z`:
/// `A + B·[1 + c·(1−e^{−gz})/(1+e^{−gz})]·(1+z²)^k·z`.
pub fn gk_quantile_transform(z: f64, a: f64, b: f64, g: f64, k: f64, c: f64) -> f64 {
    // (1 − e^{−gz}) / (1 + e^{−gz}) = tanh(gz/2), which cannot overflow.
    let skew = 1.0 + c * (0.5 * g * z).tanh();
    a + b * skew * (1.0 + z * z).powf(k) * z
}

/// Lower Cholesky factor of the tridiagonal correlation matrix with unit
/// diagonal and `rho` on the first off-diagonals.
fn tridiagonal_cholesky(dim: usize, rho: f64) -> Result<Vec<Vec<f64>>> {
    let sigma = |i: usize, j: usize| match i.abs_diff(j) {
        0 => 1.0,
        1 => rho,
        _ => 0.0,
    };
    let mut l = vec![vec![0.0; dim]; dim];
    for i in 0..dim {
        for j in 0..=i {
            let s: f64 = (0..j).map(|p| l[i][p] * l[j][p]).sum();
            if i == j {
                let v = sigma(i, i) - s;
                if v <= 0.0 {
                    return Err(Error::OutOfSupport(format!(
                        "GK: correlation {rho} gives a singular covariance"
                    )));
                }
                l[i][j] = v.sqrt();
            } else {
                l[i][j] = (sigma(i, j) - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

fn simulate_gk<R: Rng + ?Sized>(t: &[f64], m: usize, rng: &mut R, out: &mut Vec<f64>) -> Result<()> {
    const DIM: usize = 5;
    let (a, b, g, k, rho) = (t[0], t[1], t[2], t[3], t[4]);
    let l = tridiagonal_cholesky(DIM, rho)?;
    let mut e = [0.0; DIM];
    for _ in 0..m {
        for v in e.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for row in &l {
            let z: f64 = row.iter().zip(&e).map(|(li, ei)| li * ei).sum();
            out.push(gk_quantile_transform(z, a, b, g, k, GK_C));
        }
    }
    Ok(())
}

fn default_outlier_mean() -> f64 {
    10.0
}

fn default_outlier_var() -> f64 {
    1.0
}

/// Fraction `eta` of rows replaced by `N(outlier_mean, outlier_var)` in
/// every coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationSpec {
    pub eta: f64,
    #[serde(default = "default_outlier_mean")]
    pub outlier_mean: f64,
    #[serde(default = "default_outlier_var")]
    pub outlier_var: f64,
}

impl ContaminationSpec {
    pub fn new(eta: f64) -> Result<Self> {
        let spec = Self {
            eta,
            outlier_mean: default_outlier_mean(),
            outlier_var: default_outlier_var(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn none() -> Self {
        Self {
            eta: 0.0,
            outlier_mean: default_outlier_mean(),
            outlier_var: default_outlier_var(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidContamination(format!(
                "eta = {} outside [0, 1]",
                self.eta
            )));
        }
        if !(self.outlier_var.is_finite() && self.outlier_var > 0.0) {
            return Err(Error::InvalidContamination(format!(
                "outlier variance {} must be positive",
                self.outlier_var
            )));
        }
        if !self.outlier_mean.is_finite() {
            return Err(Error::InvalidContamination("outlier mean must be finite".into()));
        }
        Ok(())
    }

    /// Rows replaced out of `n`: `round(eta · n)`.
    pub fn replaced_rows(&self, n: usize) -> usize {
        ((self.eta * n as f64).round() as usize).min(n)
    }
}

/// Replaces `round(eta·n)` uniformly chosen rows (without replacement) by
/// Gaussian outliers. Other rows are left untouched.
pub fn contaminate<R: Rng + ?Sized>(
    data: &PointSet,
    spec: &ContaminationSpec,
    rng: &mut R,
) -> Result<PointSet> {
    spec.validate()?;
    let n = data.len();
    let count = spec.replaced_rows(n);
    let mut out = data.clone();
    if count == 0 {
        return Ok(out);
    }
    let noise = Normal::new(spec.outlier_mean, spec.outlier_var.sqrt())
        .map_err(|e| Error::InvalidContamination(e.to_string()))?;
    let mut chosen = index::sample(rng, n, count).into_vec();
    chosen.sort_unstable();
    let mut rows: Vec<&mut [f64]> = out.rows_mut().collect();
    for i in chosen {
        for v in rows[i].iter_mut() {
            *v = noise.sample(rng);
        }
    }
    Ok(out)
}
