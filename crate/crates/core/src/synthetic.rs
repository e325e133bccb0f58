//! Synthetic truth and raw ensembles with controlled bias, dispersion and
//! inter-margin dependence.
//!
//! Each day draws a correlated Gaussian signal `c` over the margins. The
//! observation is `c + e_0` and member `m` is `c + bias + dispersion * e_m`,
//! with errors `e_k` sharing the correlation matrix of the signal, scaled by
//! the per-margin error standard deviation. With zero bias and unit
//! dispersion, observation and members are exchangeable given `c`, so the
//! raw ensemble is calibrated by construction. Precipitation-like margins
//! pass the same Gaussian driver through the zero-censored cube
//! `max(v - threshold, 0)^3`, with the threshold placed so that the truth is
//! zero with probability `zero_inflation`.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coupling::RawEnsemble;
use crate::distributions::std_normal_quantile;
use crate::postprocess::{HistoryCase, MarginIndex};
use crate::seeds::rng_from_seed;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarginKind {
    /// Identity link (temperature, pressure, wind components).
    Continuous,
    /// Zero-censored cube link.
    Precipitation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub variable: String,
    pub location: String,
    pub lead_hours: u32,
    pub kind: MarginKind,
    /// Climatological mean of the Gaussian driver.
    pub climate_mean: f64,
    /// Day-to-day standard deviation of the predictable signal.
    pub signal_sd: f64,
    /// Standard deviation of the unpredictable error around the signal.
    pub error_sd: f64,
    /// Shift added to every member (in driver units).
    pub bias: f64,
    /// Probability that the truth is exactly zero; precipitation only.
    #[serde(default)]
    pub zero_inflation: f64,
}

impl MarginSpec {
    pub fn continuous(variable: &str, location: &str) -> Self {
        MarginSpec {
            variable: variable.into(),
            location: location.into(),
            lead_hours: 48,
            kind: MarginKind::Continuous,
            climate_mean: 0.0,
            signal_sd: 3.0,
            error_sd: 1.0,
            bias: 0.0,
            zero_inflation: 0.0,
        }
    }

    pub fn precipitation(variable: &str, location: &str, zero_inflation: f64) -> Self {
        MarginSpec {
            kind: MarginKind::Precipitation,
            climate_mean: 0.0,
            signal_sd: 1.0,
            error_sd: 0.5,
            zero_inflation,
            ..MarginSpec::continuous(variable, location)
        }
    }

    fn index(&self) -> Result<MarginIndex> {
        MarginIndex::new(
            self.variable.as_str(),
            self.location.as_str(),
            self.lead_hours,
        )
    }

    fn threshold(&self) -> f64 {
        let total = (self.signal_sd.powi(2) + self.error_sd.powi(2)).sqrt();
        if self.zero_inflation > 0.0 {
            self.climate_mean + total * std_normal_quantile(self.zero_inflation)
        } else {
            f64::NEG_INFINITY
        }
    }

    fn link(&self, v: f64, threshold: f64) -> f64 {
        match self.kind {
            MarginKind::Continuous => v,
            MarginKind::Precipitation => (v - threshold).max(0.0).powi(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub margins: Vec<MarginSpec>,
    pub members: usize,
    pub n_days: usize,
    /// Correlation matrix over margins, shared by signal and errors.
    pub correlation: Vec<Vec<f64>>,
    pub dispersion_factor: f64,
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start: NaiveDateTime,
}

fn default_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2020, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

/// Correlation matrix with unit diagonal and `rho` elsewhere.
pub fn exchangeable_correlation(l: usize, rho: f64) -> Vec<Vec<f64>> {
    (0..l)
        .map(|i| (0..l).map(|j| if i == j { 1.0 } else { rho }).collect())
        .collect()
}

impl ScenarioConfig {
    /// `L` continuous margins at distinct locations with common bias,
    /// dispersion factor and pairwise correlation `rho`.
    pub fn continuous(
        l: usize,
        members: usize,
        n_days: usize,
        rho: f64,
        bias: f64,
        dispersion_factor: f64,
        seed: u64,
    ) -> Self {
        let margins = (0..l)
            .map(|i| MarginSpec {
                bias,
                ..MarginSpec::continuous("t2m", &format!("s{:02}", i + 1))
            })
            .collect();
        ScenarioConfig {
            margins,
            members,
            n_days,
            correlation: exchangeable_correlation(l, rho),
            dispersion_factor,
            seed,
            start: default_start(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.margins.len();
        if l == 0 {
            return Err(Error::InvalidInput(
                "scenario needs at least one margin".into(),
            ));
        }
        if self.members < 2 {
            return Err(Error::InvalidInput(format!(
                "scenario needs at least 2 members, got {}",
                self.members
            )));
        }
        if self.n_days == 0 {
            return Err(Error::InvalidInput(
                "scenario needs at least one day".into(),
            ));
        }
        if !(self.dispersion_factor > 0.0 && self.dispersion_factor.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "dispersion factor must be positive, got {}",
                self.dispersion_factor
            )));
        }
        for spec in &self.margins {
            spec.index()?;
            let finite = [spec.climate_mean, spec.signal_sd, spec.error_sd, spec.bias]
                .iter()
                .all(|v| v.is_finite());
            if !finite || spec.signal_sd < 0.0 || !(spec.error_sd > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "margin {}@{}: need finite parameters, signal_sd >= 0 and error_sd > 0",
                    spec.variable, spec.location
                )));
            }
            if !(0.0..1.0).contains(&spec.zero_inflation) {
                return Err(Error::InvalidInput(format!(
                    "zero inflation {} outside [0, 1)",
                    spec.zero_inflation
                )));
            }
        }
        if self.correlation.len() != l || self.correlation.iter().any(|r| r.len() != l) {
            return Err(Error::SizeMismatch(format!(
                "correlation matrix must be {l} x {l}"
            )));
        }
        for i in 0..l {
            if (self.correlation[i][i] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(
                    "correlation matrix needs a unit diagonal".into(),
                ));
            }
            for j in 0..i {
                if (self.correlation[i][j] - self.correlation[j][i]).abs() > 1e-12 {
                    return Err(Error::InvalidInput(
                        "correlation matrix is not symmetric".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn cholesky(&self) -> Result<DMatrix<f64>> {
        let l = self.margins.len();
        let r = DMatrix::from_fn(l, l, |i, j| self.correlation[i][j]);
        r.cholesky().map(|c| c.l()).ok_or_else(|| {
            Error::InvalidInput("correlation matrix is not positive definite".into())
        })
    }
}

/// Generated forecast cases and verifying observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub margins: Vec<MarginIndex>,
    pub ensembles: Vec<RawEnsemble>,
    /// `observations[day][margin]`.
    pub observations: Vec<Vec<f64>>,
}

impl Scenario {
    pub fn len(&self) -> usize {
        self.ensembles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ensembles.is_empty()
    }

    pub fn valid_times(&self) -> Vec<NaiveDateTime> {
        self.ensembles.iter().map(|e| e.valid_time).collect()
    }

    /// History of margin `l` for training.
    pub fn history(&self, l: usize) -> Vec<HistoryCase> {
        self.ensembles
            .iter()
            .zip(&self.observations)
            .map(|(e, o)| HistoryCase {
                valid_time: e.valid_time,
                members: e.margin(l).to_vec(),
                observation: Some(o[l]),
            })
            .collect()
    }
}

fn correlated_normals<R: Rng>(rng: &mut R, chol: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(chol.nrows(), |_, _| rng.sample::<f64, _>(StandardNormal));
    chol * z
}

/// Generate a scenario. Output depends only on the configuration.
pub fn generate_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let chol = config.cholesky()?;
    let margins = config
        .margins
        .iter()
        .map(MarginSpec::index)
        .collect::<Result<Vec<_>>>()?;
    let thresholds: Vec<f64> = config.margins.iter().map(MarginSpec::threshold).collect();
    let mut rng = rng_from_seed(config.seed);
    let m = config.members;

    let mut ensembles = Vec::with_capacity(config.n_days);
    let mut observations = Vec::with_capacity(config.n_days);
    for day in 0..config.n_days {
        let signal = correlated_normals(&mut rng, &chol);
        let truth_err = correlated_normals(&mut rng, &chol);
        let errors: Vec<DVector<f64>> = (0..m)
            .map(|_| correlated_normals(&mut rng, &chol))
            .collect();
        let values: Vec<Vec<f64>> = config
            .margins
            .iter()
            .enumerate()
            .map(|(k, spec)| {
                let c = spec.climate_mean + spec.signal_sd * signal[k];
                errors
                    .iter()
                    .map(|err| {
                        let v = c + spec.bias + config.dispersion_factor * spec.error_sd * err[k];
                        spec.link(v, thresholds[k])
                    })
                    .collect()
            })
            .collect();
        let obs: Vec<f64> = config
            .margins
            .iter()
            .enumerate()
            .map(|(k, spec)| {
                let c = spec.climate_mean + spec.signal_sd * signal[k];
                spec.link(c + spec.error_sd * truth_err[k], thresholds[k])
            })
            .collect();
        let valid_time = config.start + Duration::days(day as i64);
        ensembles.push(RawEnsemble::new(valid_time, margins.clone(), values)?);
        observations.push(obs);
    }
    Ok(Scenario {
        margins,
        ensembles,
        observations,
    })
}
