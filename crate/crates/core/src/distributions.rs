//! Univariate predictive distributions.
//!
//! Every family exposes its cdf, the left limit of the cdf (needed for
//! randomized PIT values at point masses), the generalized inverse
//! `inf { y : F(y) >= tau }`, the mean and inverse-transform sampling.
//! Precipitation laws live on the original accumulation scale: the cube-root
//! transform of the Bernoulli-gamma mixture is applied internally.

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::{gamma_lr, gamma_ur, ln_gamma};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use crate::{Error, Result};

const WEIGHT_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 300;

/// Standard normal cdf.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 - Phi(z)`, accurate in the upper tail.
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Standard normal quantile for `p` in (0, 1).
pub fn std_normal_quantile(p: f64) -> f64 {
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    if !x.is_finite() {
        return x;
    }
    // One Newton step against the erfc-based cdf, working in whichever tail
    // keeps the residual accurate.
    let (residual, density) = if x <= 0.0 {
        (std_normal_cdf(x) - p, std_normal_pdf(x))
    } else {
        ((1.0 - p) - std_normal_sf(x), std_normal_pdf(x))
    };
    if density > 0.0 {
        x - residual / density
    } else {
        x
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "quantile level {tau} outside (0, 1)"
        )))
    }
}

fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Generalized inverse of a nondecreasing `cdf` on a bracket with
/// `cdf(lo) <= tau <= cdf(hi)`.
///
/// Splits geometrically while the bracket spans orders of magnitude on the
/// positive axis, so quantiles of laws piled up near zero are located to
/// relative precision.
fn bisect_quantile<F: Fn(f64) -> f64>(cdf: F, tau: f64, mut lo: f64, mut hi: f64) -> f64 {
    if cdf(lo) >= tau {
        return lo;
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = if lo == 0.0 && hi > 1e-300 {
            hi / 16.0
        } else if lo > 0.0 && hi > 4.0 * lo {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi || hi - lo <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()) {
            break;
        }
        if cdf(mid) >= tau {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Normal law with mean `mu` and standard deviation `sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normal {
    pub mu: f64,
    pub sigma: f64,
}

impl Normal {
    pub fn new(mu: f64, sigma: f64) -> Result<Self> {
        let d = Normal { mu, sigma };
        d.validate()?;
        Ok(d)
    }

    pub fn from_variance(mu: f64, variance: f64) -> Result<Self> {
        Normal::new(mu, variance.sqrt())
    }

    pub fn standard() -> Self {
        Normal {
            mu: 0.0,
            sigma: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() || !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "normal requires finite mu and sigma > 0, got ({}, {})",
                self.mu, self.sigma
            )));
        }
        Ok(())
    }

    pub fn cdf(&self, y: f64) -> f64 {
        std_normal_cdf((y - self.mu) / self.sigma)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        std_normal_pdf((y - self.mu) / self.sigma) / self.sigma
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(self.quantile_unchecked(tau))
    }

    fn quantile_unchecked(&self, tau: f64) -> f64 {
        self.mu + self.sigma * std_normal_quantile(tau)
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// Closed-form CRPS of a normal predictive distribution.
pub fn crps_closed_normal(dist: &Normal, y: f64) -> f64 {
    let z = (y - dist.mu) / dist.sigma;
    dist.sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - 1.0 / PI.sqrt())
}

/// Normal law truncated to `[lower, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedNormal {
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
}

impl TruncatedNormal {
    pub fn new(mu: f64, sigma: f64, lower: f64) -> Result<Self> {
        let d = TruncatedNormal { mu, sigma, lower };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        Normal::new(self.mu, self.sigma)?;
        if !self.lower.is_finite() {
            return Err(Error::InvalidInput(
                "truncation point must be finite".into(),
            ));
        }
        if self.kept_mass() <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "truncation at {} leaves no mass for N({}, {}^2)",
                self.lower, self.mu, self.sigma
            )));
        }
        Ok(())
    }

    fn alpha(&self) -> f64 {
        (self.lower - self.mu) / self.sigma
    }

    fn kept_mass(&self) -> f64 {
        std_normal_sf(self.alpha())
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y <= self.lower {
            return 0.0;
        }
        let z = (y - self.mu) / self.sigma;
        let kept = self.kept_mass();
        ((kept - std_normal_sf(z)) / kept).clamp(0.0, 1.0)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        if y < self.lower {
            return 0.0;
        }
        std_normal_pdf((y - self.mu) / self.sigma) / (self.sigma * self.kept_mass())
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(self.quantile_unchecked(tau))
    }

    fn quantile_unchecked(&self, tau: f64) -> f64 {
        // Upper-tail form: sf(z) = (1 - tau) * sf(alpha).
        let p = (1.0 - tau) * self.kept_mass();
        let z = SQRT_2 * erfc_inv(2.0 * p);
        (self.mu + self.sigma * z).max(self.lower)
    }

    pub fn mean(&self) -> f64 {
        self.mu + self.sigma * std_normal_pdf(self.alpha()) / self.kept_mass()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct GammaMoments {
    mean: f64,
    variance: f64,
}

/// Gamma law parameterized by its mean and variance.
///
/// Shape and rate follow by moment matching: `shape = mean^2 / variance`,
/// `rate = mean / variance`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GammaMoments", into = "GammaMoments")]
pub struct Gamma {
    mean: f64,
    variance: f64,
    shape: f64,
    rate: f64,
}

impl TryFrom<GammaMoments> for Gamma {
    type Error = Error;

    fn try_from(m: GammaMoments) -> Result<Self> {
        Gamma::new(m.mean, m.variance)
    }
}

impl From<Gamma> for GammaMoments {
    fn from(g: Gamma) -> Self {
        GammaMoments {
            mean: g.mean,
            variance: g.variance,
        }
    }
}

impl Gamma {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite() && variance > 0.0 && variance.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "gamma requires mean > 0 and variance > 0, got ({mean}, {variance})"
            )));
        }
        Ok(Gamma {
            mean,
            variance,
            shape: mean * mean / variance,
            rate: mean / variance,
        })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn cdf(&self, z: f64) -> f64 {
        if z <= 0.0 {
            0.0
        } else {
            gamma_lr(self.shape, self.rate * z)
        }
    }

    pub fn sf(&self, z: f64) -> f64 {
        if z <= 0.0 {
            1.0
        } else {
            gamma_ur(self.shape, self.rate * z)
        }
    }

    pub fn ln_pdf(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * z.ln()
            - self.rate * z
    }

    pub fn pdf(&self, z: f64) -> f64 {
        self.ln_pdf(z).exp()
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(self.quantile_unchecked(tau))
    }

    fn quantile_unchecked(&self, tau: f64) -> f64 {
        let sd = self.variance.sqrt();
        let mut hi = self.mean + 4.0 * sd;
        while self.cdf(hi) < tau {
            hi = 2.0 * hi + sd;
        }
        bisect_quantile(|z| self.cdf(z), tau, 0.0, hi)
    }

    /// `E[Z^3]`, the mean accumulation when `Z` is a cube-root amount.
    fn third_moment(&self) -> f64 {
        let k = self.shape;
        k * (k + 1.0) * (k + 2.0) / self.rate.powi(3)
    }
}

/// A mixture component: weight plus kernel parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weighted<T> {
    pub weight: f64,
    #[serde(flatten)]
    pub kernel: T,
}

impl<T> Weighted<T> {
    pub fn new(weight: f64, kernel: T) -> Self {
        Weighted { weight, kernel }
    }
}

fn validate_weights<T>(components: &[Weighted<T>]) -> Result<()> {
    if components.is_empty() {
        return Err(Error::InvalidInput(
            "mixture needs at least one component".into(),
        ));
    }
    if components
        .iter()
        .any(|c| !(c.weight >= 0.0 && c.weight <= 1.0))
    {
        return Err(Error::InvalidInput(
            "mixture weights must lie in [0, 1]".into(),
        ));
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(Error::InvalidInput(format!(
            "mixture weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Finite mixture of normal laws (the ensemble BMA predictive for
/// temperature and pressure).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalMixture {
    pub components: Vec<Weighted<Normal>>,
}

impl NormalMixture {
    pub fn new(components: Vec<Weighted<Normal>>) -> Result<Self> {
        let d = NormalMixture { components };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        validate_weights(&self.components)?;
        for c in &self.components {
            c.kernel.validate()?;
        }
        Ok(())
    }

    pub fn cdf(&self, y: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.kernel.cdf(y))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.kernel.pdf(y))
            .sum()
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(self.quantile_unchecked(tau))
    }

    fn quantile_unchecked(&self, tau: f64) -> f64 {
        // The mixture quantile lies between the extreme component quantiles.
        let (lo, hi) = self
            .components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.kernel.quantile_unchecked(tau))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| {
                (lo.min(q), hi.max(q))
            });
        bisect_quantile(|y| self.cdf(y), tau, lo, hi)
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.kernel.mu).sum()
    }
}

/// Point mass at zero plus a gamma mixture on the cube-root scale
/// (the Bernoulli-gamma ensemble BMA predictive for precipitation).
///
/// `cdf(y) = pop_zero + (1 - pop_zero) * sum_k w_k G_k(y^(1/3))` for `y >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliGammaMixture {
    pub pop_zero: f64,
    /// Gamma kernels for the cube root of positive amounts. Empty only when
    /// `pop_zero == 1`.
    pub components: Vec<Weighted<Gamma>>,
}

impl BernoulliGammaMixture {
    pub fn new(pop_zero: f64, components: Vec<Weighted<Gamma>>) -> Result<Self> {
        let d = BernoulliGammaMixture {
            pop_zero,
            components,
        };
        d.validate()?;
        Ok(d)
    }

    /// Combine per-member kernels `(weight, P(y = 0), gamma on y^(1/3))`.
    pub fn from_kernels(kernels: &[(f64, f64, Gamma)]) -> Result<Self> {
        let pop_zero: f64 = kernels
            .iter()
            .map(|(w, p, _)| w * p)
            .sum::<f64>()
            .clamp(0.0, 1.0);
        let positive = 1.0 - pop_zero;
        if positive <= 0.0 {
            return BernoulliGammaMixture::new(1.0, Vec::new());
        }
        let mut components: Vec<Weighted<Gamma>> = kernels
            .iter()
            .map(|&(w, p, g)| Weighted::new(w * (1.0 - p) / positive, g))
            .collect();
        // Remove rounding so the weights sum to one within tolerance.
        let total: f64 = components.iter().map(|c| c.weight).sum();
        for c in &mut components {
            c.weight /= total;
        }
        BernoulliGammaMixture::new(pop_zero, components)
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.pop_zero) {
            return Err(Error::InvalidInput(format!(
                "probability of zero {} outside [0, 1]",
                self.pop_zero
            )));
        }
        if self.components.is_empty() {
            if self.pop_zero == 1.0 {
                return Ok(());
            }
            return Err(Error::InvalidInput(
                "Bernoulli-gamma mixture without components must have pop_zero = 1".into(),
            ));
        }
        validate_weights(&self.components)
    }

    /// Cdf of the cube-root amount given that it is positive.
    fn positive_cdf(&self, z: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * c.kernel.cdf(z))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y < 0.0 {
            0.0
        } else if y == 0.0 || self.components.is_empty() {
            self.pop_zero
        } else {
            self.pop_zero + (1.0 - self.pop_zero) * self.positive_cdf(y.cbrt())
        }
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(self.quantile_unchecked(tau))
    }

    fn quantile_unchecked(&self, tau: f64) -> f64 {
        if tau <= self.pop_zero || self.components.is_empty() {
            return 0.0;
        }
        let inner = ((tau - self.pop_zero) / (1.0 - self.pop_zero)).min(1.0 - 1e-16);
        let (lo, hi) = self
            .components
            .iter()
            .filter(|c| c.weight > 0.0)
            .map(|c| c.kernel.quantile_unchecked(inner))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| {
                (lo.min(q), hi.max(q))
            });
        let z = bisect_quantile(|z| self.positive_cdf(z), inner, lo, hi);
        z * z * z
    }

    pub fn mean(&self) -> f64 {
        (1.0 - self.pop_zero)
            * self
                .components
                .iter()
                .map(|c| c.weight * c.kernel.third_moment())
                .sum::<f64>()
    }
}

/// Extended logistic law with linear `h(y) = gamma_h * y`: a point mass
/// `logistic(eta)` at zero and a truncated logistic density above.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMassLogistic {
    pub eta: f64,
    pub gamma_h: f64,
}

impl PointMassLogistic {
    pub fn new(eta: f64, gamma_h: f64) -> Result<Self> {
        let d = PointMassLogistic { eta, gamma_h };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        if !self.eta.is_finite() || !(self.gamma_h > 0.0 && self.gamma_h.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "extended logistic requires finite eta and gamma_h > 0, got ({}, {})",
                self.eta, self.gamma_h
            )));
        }
        Ok(())
    }

    pub fn cdf(&self, y: f64) -> f64 {
        if y < 0.0 {
            0.0
        } else {
            logistic(self.eta + self.gamma_h * y)
        }
    }

    pub fn zero_mass(&self) -> f64 {
        logistic(self.eta)
    }

    /// Density of the continuous part, `y > 0`.
    pub fn pdf(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let g = self.cdf(y);
        self.gamma_h * g * (1.0 - g)
    }

    pub fn quantile(&self, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(self.quantile_unchecked(tau))
    }

    fn quantile_unchecked(&self, tau: f64) -> f64 {
        if tau <= self.zero_mass() {
            0.0
        } else {
            (((tau / (1.0 - tau)).ln() - self.eta) / self.gamma_h).max(0.0)
        }
    }

    pub fn mean(&self) -> f64 {
        // Integral of 1 - G(y) over y > 0.
        let t = -self.eta;
        let softplus = if t > 0.0 {
            t + (-t).exp().ln_1p()
        } else {
            t.exp().ln_1p()
        };
        softplus / self.gamma_h
    }
}

/// Uniform law on `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uniform {
    pub a: f64,
    pub b: f64,
}

impl Uniform {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidInput(format!(
                "uniform requires a < b, got [{a}, {b}]"
            )));
        }
        Ok(Uniform { a, b })
    }
}

/// Empirical law of a finite sample, e.g. an ensemble forecast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Empirical {
    sorted: Vec<f64>,
}

impl TryFrom<Vec<f64>> for Empirical {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Empirical::new(values)
    }
}

impl From<Empirical> for Vec<f64> {
    fn from(e: Empirical) -> Self {
        e.sorted
    }
}

impl Empirical {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput(
                "empirical law needs at least one value".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "empirical law values must be finite".into(),
            ));
        }
        values.sort_by(f64::total_cmp);
        Ok(Empirical { sorted: values })
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    fn count_le(&self, y: f64) -> usize {
        self.sorted.partition_point(|&v| v <= y)
    }

    fn count_lt(&self, y: f64) -> usize {
        self.sorted.partition_point(|&v| v < y)
    }
}

/// Tagged family of univariate predictive distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PredictiveDistribution {
    Normal(Normal),
    TruncatedNormal(TruncatedNormal),
    NormalMixture(NormalMixture),
    BernoulliGammaMixture(BernoulliGammaMixture),
    PointMassLogistic(PointMassLogistic),
    Uniform(Uniform),
    PointMass { at: f64 },
    Empirical { values: Empirical },
}

impl From<Normal> for PredictiveDistribution {
    fn from(d: Normal) -> Self {
        PredictiveDistribution::Normal(d)
    }
}

impl From<TruncatedNormal> for PredictiveDistribution {
    fn from(d: TruncatedNormal) -> Self {
        PredictiveDistribution::TruncatedNormal(d)
    }
}

impl From<NormalMixture> for PredictiveDistribution {
    fn from(d: NormalMixture) -> Self {
        PredictiveDistribution::NormalMixture(d)
    }
}

impl From<BernoulliGammaMixture> for PredictiveDistribution {
    fn from(d: BernoulliGammaMixture) -> Self {
        PredictiveDistribution::BernoulliGammaMixture(d)
    }
}

impl From<PointMassLogistic> for PredictiveDistribution {
    fn from(d: PointMassLogistic) -> Self {
        PredictiveDistribution::PointMassLogistic(d)
    }
}

impl From<Uniform> for PredictiveDistribution {
    fn from(d: Uniform) -> Self {
        PredictiveDistribution::Uniform(d)
    }
}

impl From<Empirical> for PredictiveDistribution {
    fn from(values: Empirical) -> Self {
        PredictiveDistribution::Empirical { values }
    }
}

impl PredictiveDistribution {
    pub fn point_mass(at: f64) -> Self {
        PredictiveDistribution::PointMass { at }
    }

    pub fn empirical(values: &[f64]) -> Result<Self> {
        Ok(Empirical::new(values.to_vec())?.into())
    }

    /// Re-check the family invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        match self {
            PredictiveDistribution::Normal(d) => d.validate(),
            PredictiveDistribution::TruncatedNormal(d) => d.validate(),
            PredictiveDistribution::NormalMixture(d) => d.validate(),
            PredictiveDistribution::BernoulliGammaMixture(d) => d.validate(),
            PredictiveDistribution::PointMassLogistic(d) => d.validate(),
            PredictiveDistribution::Uniform(d) => Uniform::new(d.a, d.b).map(|_| ()),
            PredictiveDistribution::PointMass { at } if at.is_finite() => Ok(()),
            PredictiveDistribution::PointMass { .. } => Err(Error::InvalidInput(
                "point mass location must be finite".into(),
            )),
            PredictiveDistribution::Empirical { .. } => Ok(()),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            PredictiveDistribution::Normal(_) => "normal",
            PredictiveDistribution::TruncatedNormal(_) => "truncated-normal",
            PredictiveDistribution::NormalMixture(_) => "normal-mixture",
            PredictiveDistribution::BernoulliGammaMixture(_) => "bernoulli-gamma-mixture",
            PredictiveDistribution::PointMassLogistic(_) => "point-mass-logistic",
            PredictiveDistribution::Uniform(_) => "uniform",
            PredictiveDistribution::PointMass { .. } => "point-mass",
            PredictiveDistribution::Empirical { .. } => "empirical",
        }
    }

    /// `P(Y <= y)`.
    pub fn cdf(&self, y: f64) -> f64 {
        match self {
            PredictiveDistribution::Normal(d) => d.cdf(y),
            PredictiveDistribution::TruncatedNormal(d) => d.cdf(y),
            PredictiveDistribution::NormalMixture(d) => d.cdf(y),
            PredictiveDistribution::BernoulliGammaMixture(d) => d.cdf(y),
            PredictiveDistribution::PointMassLogistic(d) => d.cdf(y),
            PredictiveDistribution::Uniform(d) => ((y - d.a) / (d.b - d.a)).clamp(0.0, 1.0),
            PredictiveDistribution::PointMass { at } => {
                if y >= *at {
                    1.0
                } else {
                    0.0
                }
            }
            PredictiveDistribution::Empirical { values } => {
                values.count_le(y) as f64 / values.sorted.len() as f64
            }
        }
    }

    /// `P(Y < y)`, the left limit of the cdf.
    pub fn cdf_left(&self, y: f64) -> f64 {
        match self {
            PredictiveDistribution::BernoulliGammaMixture(_)
            | PredictiveDistribution::PointMassLogistic(_)
                if y == 0.0 =>
            {
                0.0
            }
            PredictiveDistribution::PointMass { at } => {
                if y > *at {
                    1.0
                } else {
                    0.0
                }
            }
            PredictiveDistribution::Empirical { values } => {
                values.count_lt(y) as f64 / values.sorted.len() as f64
            }
            _ => self.cdf(y),
        }
    }

    /// Locations of point masses, in increasing order.
    pub fn atoms(&self) -> Vec<f64> {
        match self {
            PredictiveDistribution::BernoulliGammaMixture(d) if d.pop_zero > 0.0 => vec![0.0],
            PredictiveDistribution::PointMassLogistic(_) => vec![0.0],
            PredictiveDistribution::PointMass { at } => vec![*at],
            PredictiveDistribution::Empirical { values } => {
                let mut v = values.sorted.clone();
                v.dedup();
                v
            }
            _ => Vec::new(),
        }
    }

    /// True when the law has a point mass at zero, as precipitation laws do.
    pub fn has_point_mass_at_zero(&self) -> bool {
        matches!(
            self,
            PredictiveDistribution::BernoulliGammaMixture(_)
                | PredictiveDistribution::PointMassLogistic(_)
        )
    }

    /// Generalized inverse `inf { y : F(y) >= tau }` for `tau` in (0, 1).
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        check_tau(tau)?;
        Ok(self.quantile_unchecked(tau))
    }

    pub(crate) fn quantile_unchecked(&self, tau: f64) -> f64 {
        match self {
            PredictiveDistribution::Normal(d) => d.quantile_unchecked(tau),
            PredictiveDistribution::TruncatedNormal(d) => d.quantile_unchecked(tau),
            PredictiveDistribution::NormalMixture(d) => d.quantile_unchecked(tau),
            PredictiveDistribution::BernoulliGammaMixture(d) => d.quantile_unchecked(tau),
            PredictiveDistribution::PointMassLogistic(d) => d.quantile_unchecked(tau),
            PredictiveDistribution::Uniform(d) => d.a + tau * (d.b - d.a),
            PredictiveDistribution::PointMass { at } => *at,
            PredictiveDistribution::Empirical { values } => {
                let n = values.sorted.len();
                let k = ((tau * n as f64).ceil() as usize).clamp(1, n);
                values.sorted[k - 1]
            }
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile_unchecked(0.5)
    }

    pub fn mean(&self) -> f64 {
        match self {
            PredictiveDistribution::Normal(d) => d.mu,
            PredictiveDistribution::TruncatedNormal(d) => d.mean(),
            PredictiveDistribution::NormalMixture(d) => d.mean(),
            PredictiveDistribution::BernoulliGammaMixture(d) => d.mean(),
            PredictiveDistribution::PointMassLogistic(d) => d.mean(),
            PredictiveDistribution::Uniform(d) => 0.5 * (d.a + d.b),
            PredictiveDistribution::PointMass { at } => *at,
            PredictiveDistribution::Empirical { values } => crate::stats::mean(&values.sorted),
        }
    }

    /// Inverse-transform draw `quantile(u)` with `u` uniform on (0, 1).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        self.quantile_unchecked(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from_seed;
    use proptest::prelude::*;

    fn std_normal() -> PredictiveDistribution {
        Normal::standard().into()
    }

    /// Normal cdf via quadrature of the density, independent of erfc.
    fn normal_cdf_oracle(z: f64) -> f64 {
        let tail =
            crate::quadrature::integrate(std_normal_pdf_direct, 0.0, z.abs(), 1e-15).unwrap();
        if z >= 0.0 {
            0.5 + tail
        } else {
            0.5 - tail
        }
    }

    fn std_normal_pdf_direct(z: f64) -> f64 {
        (-(z * z) / 2.0).exp() * 0.398_942_280_401_432_7
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(std_normal().cdf(0.0), 0.5);
        let pml: PredictiveDistribution = PointMassLogistic::new(0.0, 1.0).unwrap().into();
        assert_eq!(pml.cdf(0.0), 0.5);
        let mix: PredictiveDistribution = NormalMixture::new(vec![
            Weighted::new(0.5, Normal::new(0.0, 1.0).unwrap()),
            Weighted::new(0.5, Normal::new(2.0, 1.0).unwrap()),
        ])
        .unwrap()
        .into();
        assert!((mix.cdf(1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn normal_quantile_against_bisection_oracle() {
        // Bisection on the quadrature-based cdf oracle.
        let (mut lo, mut hi) = (0.0, 2.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if normal_cdf_oracle(mid) < 0.75 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!((oracle - 0.674_489_8).abs() < 1e-7);
        let q = std_normal().quantile(0.75).unwrap();
        assert!((q - oracle).abs() < 1e-12, "{q} vs {oracle}");
        assert_eq!(std_normal().quantile(0.5).unwrap(), 0.0);
    }

    #[test]
    fn quantile_rejects_levels_outside_unit_interval() {
        for tau in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(std_normal().quantile(tau), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn bernoulli_gamma_quantile_below_point_mass_is_zero() {
        let d = BernoulliGammaMixture::new(
            0.4,
            vec![Weighted::new(1.0, Gamma::new(1.0, 0.5).unwrap())],
        )
        .unwrap();
        let d: PredictiveDistribution = d.into();
        assert_eq!(d.quantile(0.3).unwrap(), 0.0);
        assert_eq!(d.quantile(0.4).unwrap(), 0.0);
        assert!(d.quantile(0.41).unwrap() > 0.0);
        assert_eq!(d.cdf(0.0), 0.4);
        assert_eq!(d.cdf(-1e-300), 0.0);
        assert_eq!(d.cdf_left(0.0), 0.0);
    }

    #[test]
    fn crps_normal_reference_values() {
        let c0 = crps_closed_normal(&Normal::standard(), 0.0);
        // Closed form 2 phi(0) - 1/sqrt(pi), confirmed by quadrature in the verification tests.
        assert!((c0 - 0.233_695_0).abs() < 1e-7, "{c0}");
        let shifted = crps_closed_normal(&Normal::new(5.0, 1.0).unwrap(), 5.0);
        assert!((shifted - c0).abs() < 1e-15);
        let scaled = crps_closed_normal(&Normal::new(0.0, 2.0).unwrap(), 0.0);
        assert!((scaled - 2.0 * c0).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let d = std_normal();
        let a: Vec<f64> = {
            let mut rng = rng_from_seed(11);
            (0..5).map(|_| d.sample(&mut rng)).collect()
        };
        let b: Vec<f64> = {
            let mut rng = rng_from_seed(11);
            (0..5).map(|_| d.sample(&mut rng)).collect()
        };
        assert_eq!(a, b);
        assert_eq!(d.quantile_unchecked(0.5), d.median());
    }

    #[test]
    fn sampling_matches_normal_cdf_in_ks_distance() {
        let d = std_normal();
        let mut rng = rng_from_seed(2024);
        let draws: Vec<f64> = (0..100_000).map(|_| d.sample(&mut rng)).collect();
        let ks = crate::stats::ks_statistic(&draws, normal_cdf_oracle);
        assert!(ks < 0.01, "KS distance {ks}");
    }

    #[test]
    fn truncated_normal_has_no_mass_below_lower() {
        let d = TruncatedNormal::new(1.0, 2.0, 0.0).unwrap();
        assert_eq!(d.cdf(0.0), 0.0);
        assert_eq!(d.cdf(-3.0), 0.0);
        let mass = crate::quadrature::integrate(|y| d.pdf(y), 0.0, 40.0, 1e-12).unwrap();
        assert!((mass - 1.0).abs() < 1e-10);
        let mean = crate::quadrature::integrate(|y| y * d.pdf(y), 0.0, 40.0, 1e-12).unwrap();
        assert!((mean - d.mean()).abs() < 1e-10);
    }

    #[test]
    fn truncation_far_in_the_tail_is_rejected() {
        assert!(TruncatedNormal::new(0.0, 1.0, 60.0).is_err());
    }

    #[test]
    fn gamma_moment_matching_round_trips() {
        let g = Gamma::new(2.5, 0.7).unwrap();
        assert!((g.shape() / g.rate() - 2.5).abs() < 1e-12);
        assert!((g.shape() / (g.rate() * g.rate()) - 0.7).abs() < 1e-12);
        assert!(Gamma::new(0.0, 1.0).is_err());
        assert!(Gamma::new(1.0, -1.0).is_err());
    }

    #[test]
    fn point_mass_logistic_mean_matches_quadrature() {
        let d = PointMassLogistic::new(-0.7, 0.4).unwrap();
        let integral = crate::quadrature::integrate(|y| 1.0 - d.cdf(y), 0.0, 200.0, 1e-12).unwrap();
        assert!((integral - d.mean()).abs() < 1e-9);
    }

    #[test]
    fn bernoulli_gamma_mean_matches_quadrature() {
        let d = BernoulliGammaMixture::new(
            0.3,
            vec![
                Weighted::new(0.6, Gamma::new(1.2, 0.3).unwrap()),
                Weighted::new(0.4, Gamma::new(0.8, 0.2).unwrap()),
            ],
        )
        .unwrap();
        let integral =
            crate::quadrature::integrate(|y| 1.0 - d.cdf(y), 0.0, 5000.0, 1e-11).unwrap();
        assert!(
            (integral - d.mean()).abs() < 1e-8,
            "{integral} vs {}",
            d.mean()
        );
    }

    #[test]
    fn empirical_quantiles_are_order_statistics() {
        let d = PredictiveDistribution::empirical(&[3.0, 1.0, 2.0, 4.0]).unwrap();
        for m in 1..=4 {
            let tau = (m as f64 - 0.5) / 4.0;
            assert_eq!(d.quantile(tau).unwrap(), m as f64);
        }
        assert_eq!(d.cdf(2.0), 0.5);
        assert_eq!(d.cdf_left(2.0), 0.25);
    }

    #[test]
    fn mixture_weights_must_sum_to_one() {
        let n = Normal::standard();
        assert!(NormalMixture::new(vec![Weighted::new(0.5, n), Weighted::new(0.4, n)]).is_err());
        assert!(NormalMixture::new(vec![]).is_err());
    }

    #[test]
    fn serde_round_trip_preserves_distribution() {
        let d: PredictiveDistribution = BernoulliGammaMixture::new(
            0.2,
            vec![Weighted::new(1.0, Gamma::new(1.0, 0.5).unwrap())],
        )
        .unwrap()
        .into();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"family\":\"bernoulli-gamma-mixture\""));
        let back: PredictiveDistribution = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        assert!(serde_json::from_str::<PredictiveDistribution>(
            r#"{"family":"bernoulli-gamma-mixture","pop_zero":0.1,"components":[{"weight":1.0,"mean":-1.0,"variance":1.0}]}"#
        )
        .is_err());
    }

    fn arb_distribution() -> impl Strategy<Value = PredictiveDistribution> {
        prop_oneof![
            (-50.0..50.0f64, 0.05..20.0f64).prop_map(|(m, s)| Normal::new(m, s).unwrap().into()),
            (-5.0..10.0f64, 0.1..5.0f64)
                .prop_map(|(m, s)| TruncatedNormal::new(m, s, 0.0).unwrap().into()),
            (
                -10.0..10.0f64,
                0.1..5.0f64,
                -10.0..10.0f64,
                0.1..5.0f64,
                0.01..0.99f64
            )
                .prop_map(|(m1, s1, m2, s2, w)| NormalMixture::new(vec![
                    Weighted::new(w, Normal::new(m1, s1).unwrap()),
                    Weighted::new(1.0 - w, Normal::new(m2, s2).unwrap()),
                ])
                .unwrap()
                .into()),
            (
                0.0..0.95f64,
                0.2..3.0f64,
                0.05..2.0f64,
                0.2..3.0f64,
                0.05..2.0f64,
                0.01..0.99f64
            )
                .prop_map(|(p, m1, v1, m2, v2, w)| BernoulliGammaMixture::new(
                    p,
                    vec![
                        Weighted::new(w, Gamma::new(m1, v1).unwrap()),
                        Weighted::new(1.0 - w, Gamma::new(m2, v2).unwrap()),
                    ],
                )
                .unwrap()
                .into()),
            (-4.0..4.0f64, 0.05..5.0f64)
                .prop_map(|(e, g)| PointMassLogistic::new(e, g).unwrap().into()),
        ]
    }

    proptest! {
        #[test]
        fn cdf_inverts_quantile_on_continuous_part(d in arb_distribution(), tau in 0.001..0.999f64) {
            let q = d.quantile(tau).unwrap();
            let zero_mass = if d.has_point_mass_at_zero() { d.cdf(0.0) } else { 0.0 };
            if tau <= zero_mass {
                prop_assert_eq!(q, 0.0);
            } else {
                prop_assert!((d.cdf(q) - tau).abs() < 1e-9, "cdf(q)={} tau={}", d.cdf(q), tau);
                // Quantile of cdf on the continuous support.
                let back = d.quantile(d.cdf(q)).unwrap();
                prop_assert!((back - q).abs() < 1e-6 * (1.0 + q.abs()));
            }
        }

        #[test]
        fn cdf_is_nondecreasing(d in arb_distribution(), a in -60.0..60.0f64, b in -60.0..60.0f64) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(d.cdf(lo) <= d.cdf(hi));
            prop_assert!(d.cdf_left(lo) <= d.cdf(lo));
        }

        #[test]
        fn zero_mass_is_exact(d in arb_distribution()) {
            match &d {
                PredictiveDistribution::BernoulliGammaMixture(b) => prop_assert_eq!(d.cdf(0.0), b.pop_zero),
                PredictiveDistribution::PointMassLogistic(p) => prop_assert_eq!(d.cdf(0.0), p.zero_mass()),
                _ => {}
            }
        }
    }
}
