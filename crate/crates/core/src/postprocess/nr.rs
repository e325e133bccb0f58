//! Nonhomogeneous regression: normal and truncated-normal laws fitted by
//! minimum mean CRPS, and the extended logistic law for precipitation fitted
//! by maximum likelihood.
//!
//! All fits use exchangeable members, so the member coefficients collapse to
//! one shared `b` and the regression runs on the ensemble mean. Internally
//! the mean is centred on the window average of the ensemble mean, which
//! decouples intercept and slope for the optimizer.

use serde::{Deserialize, Serialize};

use super::{
    ensemble_mean_variance, softplus, FitDiagnostics, Fitted, TrainingWindow, MIN_TRAINING_CASES,
};
use crate::distributions::{
    crps_closed_normal, Normal, PointMassLogistic, PredictiveDistribution, TruncatedNormal,
};
use crate::optimize::{Minimum, NelderMead};
use crate::verification::crps_numeric;
use crate::{Error, Result};

/// Below this predictive variance the normal CRPS is taken as its
/// point-mass limit `|y - mu|`.
const TINY_VARIANCE: f64 = 1e-12;
/// Bound on the centred precipitation intercept, keeping degenerate
/// (all-zero or all-positive) windows finite.
const ETA_BOUND: f64 = 50.0;

/// `N(a + b * sum(x), c + d * S^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrNormalParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl NrNormalParams {
    fn moments(&self, ensemble: &[f64]) -> Result<(f64, f64)> {
        if ensemble.is_empty() {
            return Err(Error::InvalidInput("empty ensemble".into()));
        }
        if let Some(v) = ensemble.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite ensemble value {v}"
            )));
        }
        let (mean, s2) = ensemble_mean_variance(ensemble);
        let mu = self.a + self.b * ensemble.len() as f64 * mean;
        let var = self.c + self.d * s2;
        if !(var > 0.0) {
            return Err(Error::Degenerate(format!(
                "predictive variance c + d S^2 = {var} is not positive"
            )));
        }
        Ok((mu, var))
    }
}

/// Extended logistic regression: `P(Y <= y) = logistic(a + b * sum(x) + gamma_h * y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrPrecipParams {
    pub a: f64,
    pub b: f64,
    pub gamma_h: f64,
}

/// Per-case summaries used by every NR objective.
struct Design {
    /// Ensemble mean minus its window average.
    centred: Vec<f64>,
    spread: Vec<f64>,
    obs: Vec<f64>,
    offset: f64,
    m: f64,
}

impl Design {
    fn new(window: &TrainingWindow) -> Result<Self> {
        let m = window.require(MIN_TRAINING_CASES)?;
        let moments: Vec<(f64, f64)> = window
            .cases
            .iter()
            .map(|c| ensemble_mean_variance(&c.members))
            .collect();
        let offset = moments.iter().map(|p| p.0).sum::<f64>() / moments.len() as f64;
        Ok(Design {
            centred: moments.iter().map(|p| p.0 - offset).collect(),
            spread: moments.iter().map(|p| p.1).collect(),
            obs: window.cases.iter().map(|c| c.observation).collect(),
            offset,
            m: m as f64,
        })
    }

    fn n(&self) -> f64 {
        self.obs.len() as f64
    }

    /// Map centred parameters `(a', B, g1, g2)` to the public form.
    fn normal_params(&self, theta: &[f64]) -> NrNormalParams {
        NrNormalParams {
            a: theta[0] - theta[1] * self.offset,
            b: theta[1] / self.m,
            c: theta[2] * theta[2],
            d: theta[3] * theta[3],
        }
    }

    fn normal_objective(&self, theta: &[f64]) -> f64 {
        let (c, d) = (theta[2] * theta[2], theta[3] * theta[3]);
        let mut total = 0.0;
        for ((&xc, &s2), &y) in self.centred.iter().zip(&self.spread).zip(&self.obs) {
            let mu = theta[0] + theta[1] * xc;
            let var = c + d * s2;
            total += if var < TINY_VARIANCE {
                (y - mu).abs()
            } else {
                crps_closed_normal(
                    &Normal {
                        mu,
                        sigma: var.sqrt(),
                    },
                    y,
                )
            };
        }
        total / self.n()
    }

    fn truncated_objective(&self, theta: &[f64]) -> f64 {
        let (c, d) = (theta[2] * theta[2], theta[3] * theta[3]);
        let mut total = 0.0;
        for ((&xc, &s2), &y) in self.centred.iter().zip(&self.spread).zip(&self.obs) {
            let mu = theta[0] + theta[1] * xc;
            let var = c + d * s2;
            if var < TINY_VARIANCE {
                total += (y - mu.max(0.0)).abs();
                continue;
            }
            let score = TruncatedNormal::new(mu, var.sqrt(), 0.0)
                .and_then(|law| crps_numeric(&PredictiveDistribution::TruncatedNormal(law), y));
            match score {
                Ok(s) => total += s,
                Err(_) => return f64::INFINITY,
            }
        }
        total / self.n()
    }

    /// Least-squares start: slope and intercept on the ensemble mean, the
    /// residual variance split evenly between `c` and `d * mean(S^2)`.
    fn least_squares_start(&self) -> [f64; 4] {
        let n = self.n();
        let ybar = self.obs.iter().sum::<f64>() / n;
        let sxx: f64 = self.centred.iter().map(|x| x * x).sum();
        let sxy: f64 = self
            .centred
            .iter()
            .zip(&self.obs)
            .map(|(x, y)| x * (y - ybar))
            .sum();
        let slope = if sxx > 1e-12 { sxy / sxx } else { 0.0 };
        let resid = self
            .centred
            .iter()
            .zip(&self.obs)
            .map(|(x, y)| (y - ybar - slope * x).powi(2))
            .sum::<f64>()
            / n;
        let resid = resid.max(1e-6);
        let mean_s2 = self.spread.iter().sum::<f64>() / n;
        let g2 = if mean_s2 > 1e-12 {
            (0.5 * resid / mean_s2).sqrt()
        } else {
            0.0
        };
        [ybar, slope, (0.5 * resid).sqrt(), g2]
    }
}

fn steps_for(theta: &[f64]) -> Vec<f64> {
    theta.iter().map(|v| 0.1 + 0.1 * v.abs()).collect()
}

fn finish(opt: &Minimum, diag: &mut FitDiagnostics, what: &str) {
    diag.iterations += opt.evaluations;
    diag.converged = opt.converged;
    diag.objective = opt.value;
    if !opt.converged {
        diag.warn(format!(
            "{what} optimizer hit its evaluation budget; best iterate returned"
        ));
    }
}

fn require_exchangeable(exchangeable: bool) -> Result<()> {
    if exchangeable {
        Ok(())
    } else {
        Err(Error::InvalidInput(
            "member-specific NR coefficients are not supported; use exchangeable members".into(),
        ))
    }
}

fn minimize_normal(design: &Design) -> Minimum {
    let x0 = design.least_squares_start();
    NelderMead::default().minimize(|t| design.normal_objective(t), &x0, &steps_for(&x0))
}

/// Minimum mean CRPS fit of the normal NR model.
pub fn fit_nr_normal(
    window: &TrainingWindow,
    exchangeable: bool,
) -> Result<Fitted<NrNormalParams>> {
    require_exchangeable(exchangeable)?;
    let design = Design::new(window)?;
    let mut diag = FitDiagnostics::default();
    let opt = minimize_normal(&design);
    finish(&opt, &mut diag, "CRPS");
    Ok(Fitted {
        params: design.normal_params(&opt.x),
        diagnostics: diag,
    })
}

pub fn predict_nr_normal(params: &NrNormalParams, ensemble: &[f64]) -> Result<Normal> {
    let (mu, var) = params.moments(ensemble)?;
    Normal::from_variance(mu, var)
}

/// Minimum mean CRPS fit of the normal law truncated at zero, warm-started
/// from the untruncated fit. The CRPS of each case is integrated numerically.
pub fn fit_nr_wind_speed(window: &TrainingWindow) -> Result<Fitted<NrNormalParams>> {
    let design = Design::new(window)?;
    if let Some(y) = design.obs.iter().find(|&&y| y < 0.0) {
        return Err(Error::InvalidInput(format!(
            "negative wind speed observation {y}"
        )));
    }
    let mut diag = FitDiagnostics::default();
    let warm = minimize_normal(&design);
    let opt = NelderMead::default().minimize(
        |t| design.truncated_objective(t),
        &warm.x,
        &steps_for(&warm.x),
    );
    if !opt.value.is_finite() {
        return Err(Error::Degenerate(
            "truncated-normal CRPS is not finite at any trial point".into(),
        ));
    }
    finish(&opt, &mut diag, "truncated-normal CRPS");
    Ok(Fitted {
        params: design.normal_params(&opt.x),
        diagnostics: diag,
    })
}

pub fn predict_nr_wind_speed(params: &NrNormalParams, ensemble: &[f64]) -> Result<TruncatedNormal> {
    let (mu, var) = params.moments(ensemble)?;
    TruncatedNormal::new(mu, var.sqrt(), 0.0)
}

/// Maximum-likelihood fit of the extended logistic model. A zero
/// observation contributes `P(Y = 0)`; a positive one the density above zero.
pub fn fit_nr_precip(window: &TrainingWindow) -> Result<Fitted<NrPrecipParams>> {
    let design = Design::new(window)?;
    if let Some(y) = design.obs.iter().find(|&&y| y < 0.0) {
        return Err(Error::InvalidInput(format!(
            "negative precipitation observation {y}"
        )));
    }
    let mut diag = FitDiagnostics::default();
    let n_zero = design.obs.iter().filter(|&&y| y == 0.0).count();
    if n_zero == design.obs.len() {
        diag.warn("all observations zero: degenerate fit, intercept at its bound");
    } else if n_zero == 0 {
        diag.warn("no zero observations: degenerate fit, intercept at its bound");
    }

    let nll = |theta: &[f64]| -> f64 {
        if theta[0].abs() > ETA_BOUND {
            return f64::INFINITY;
        }
        let ln_gamma = theta[2];
        let gamma = ln_gamma.exp();
        let mut total = 0.0;
        for (&xc, &y) in design.centred.iter().zip(&design.obs) {
            let eta = theta[0] + theta[1] * xc;
            total += if y == 0.0 {
                softplus(-eta)
            } else {
                let t = eta + gamma * y;
                -ln_gamma + softplus(-t) + softplus(t)
            };
        }
        total / design.n()
    };

    let p0 = (n_zero as f64 / design.n()).clamp(0.02, 0.98);
    let positives: Vec<f64> = design.obs.iter().copied().filter(|&y| y > 0.0).collect();
    let scale = if positives.is_empty() {
        1.0
    } else {
        positives.iter().sum::<f64>() / positives.len() as f64
    };
    let x0 = [(p0 / (1.0 - p0)).ln(), 0.0, -scale.max(1e-6).ln()];
    let spread = design.centred.iter().map(|x| x.abs()).fold(0.0, f64::max);
    let steps = [0.5, 0.5 / spread.max(1e-6), 0.5];
    let opt = NelderMead::default().minimize(nll, &x0, &steps);
    finish(&opt, &mut diag, "likelihood");
    diag.objective = -opt.value * design.n();

    let big_b = opt.x[1];
    Ok(Fitted {
        params: NrPrecipParams {
            a: opt.x[0] - big_b * design.offset,
            b: big_b / design.m,
            gamma_h: opt.x[2].exp(),
        },
        diagnostics: diag,
    })
}

pub fn predict_nr_precip(params: &NrPrecipParams, ensemble: &[f64]) -> Result<PointMassLogistic> {
    if ensemble.is_empty() {
        return Err(Error::InvalidInput("empty ensemble".into()));
    }
    if let Some(v) = ensemble.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidInput(format!(
            "negative or missing ensemble value {v}"
        )));
    }
    let (mean, _) = ensemble_mean_variance(ensemble);
    let eta = params.a + params.b * ensemble.len() as f64 * mean;
    PointMassLogistic::new(eta, params.gamma_h)
}
