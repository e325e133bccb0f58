//! Ensemble BMA with normal kernels (temperature, pressure) and
//! Bernoulli-gamma kernels on the cube-root scale (precipitation).

use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic, COEF_CLAMP};
use super::{
    cbrt_nonneg, FitDiagnostics, Fitted, TrainingWindow, MIN_TRAINING_CASES, VARIANCE_FLOOR,
};
use crate::distributions::{BernoulliGammaMixture, Gamma, Normal, NormalMixture, Weighted};
use crate::optimize::NelderMead;
use crate::{Error, Result};

const EM_MAX_ITER: usize = 500;
const EM_REL_TOL: f64 = 1e-6;
/// Gamma kernel means are kept above this cube-root amount.
const GAMMA_MEAN_FLOOR: f64 = 1e-3;

/// Normal-kernel BMA: `sum_m w_m N(a + b x_m, sigma2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmaNormalParams {
    pub weights: Vec<f64>,
    pub a: f64,
    pub b: f64,
    pub sigma2: f64,
}

fn ln_normal_pdf(y: f64, mu: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (y - mu) * (y - mu) / var)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// EM for the normal BMA mixture.
///
/// The M-step updates the shared bias coefficients by weighted least squares
/// with the current responsibilities, which keeps every update an ascent
/// step for the mixture log-likelihood. With `exchangeable` the weights stay
/// at `1/M`.
pub fn fit_bma_normal(
    window: &TrainingWindow,
    exchangeable: bool,
) -> Result<Fitted<BmaNormalParams>> {
    let m = window.require(MIN_TRAINING_CASES)?;
    let n = window.cases.len();
    let mut diag = FitDiagnostics::default();

    let ys: Vec<f64> = window.cases.iter().map(|c| c.observation).collect();
    if ys.iter().all(|&y| y == ys[0]) {
        diag.warn("degenerate window: all observations identical");
    }

    // Pooled least squares start.
    let unit = vec![vec![1.0; m]; n];
    let (mut a, mut b) = weighted_ls(window, &unit);
    let mut sigma2 = residual_variance(window, &unit, a, b).max(VARIANCE_FLOOR);
    let mut weights = vec![1.0 / m as f64; m];
    let mut resp = vec![vec![0.0; m]; n];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;
    let mut floored = false;

    for iter in 1..=EM_MAX_ITER {
        diag.iterations = iter;
        // E-step.
        ll = 0.0;
        let mut terms = vec![0.0; m];
        for (t, case) in window.cases.iter().enumerate() {
            for (k, &x) in case.members.iter().enumerate() {
                terms[k] = weights[k].ln() + ln_normal_pdf(case.observation, a + b * x, sigma2);
            }
            let lse = log_sum_exp(&terms);
            ll += lse;
            for k in 0..m {
                resp[t][k] = (terms[k] - lse).exp();
            }
        }
        if !floored {
            debug_assert!(
                ll >= prev_ll - 1e-8 * prev_ll.abs().max(1.0),
                "EM log-likelihood decreased: {prev_ll} -> {ll}"
            );
        }
        if iter > 1 && (ll - prev_ll).abs() <= EM_REL_TOL * prev_ll.abs() {
            diag.converged = true;
            break;
        }
        prev_ll = ll;

        // M-step.
        let (na, nb) = weighted_ls(window, &resp);
        a = na;
        b = nb;
        let raw_sigma2 = residual_variance(window, &resp, a, b);
        floored = raw_sigma2 < VARIANCE_FLOOR;
        sigma2 = raw_sigma2.max(VARIANCE_FLOOR);
        if !exchangeable {
            for (k, w) in weights.iter_mut().enumerate() {
                *w = resp.iter().map(|r| r[k]).sum::<f64>() / n as f64;
            }
        }
    }
    if sigma2 <= VARIANCE_FLOOR {
        diag.warn(format!("variance floored at {VARIANCE_FLOOR}"));
    }
    if !diag.converged {
        diag.warn(format!("EM stopped after {EM_MAX_ITER} iterations"));
    }
    diag.objective = ll;
    Ok(Fitted {
        params: BmaNormalParams {
            weights,
            a,
            b,
            sigma2,
        },
        diagnostics: diag,
    })
}

/// Weighted least squares of the observation on each member value.
fn weighted_ls(window: &TrainingWindow, resp: &[Vec<f64>]) -> (f64, f64) {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (case, r) in window.cases.iter().zip(resp) {
        for (&x, &z) in case.members.iter().zip(r) {
            sw += z;
            sx += z * x;
            sy += z * case.observation;
        }
    }
    let (xbar, ybar) = (sx / sw, sy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (case, r) in window.cases.iter().zip(resp) {
        for (&x, &z) in case.members.iter().zip(r) {
            sxx += z * (x - xbar) * (x - xbar);
            sxy += z * (x - xbar) * (case.observation - ybar);
        }
    }
    let b = if sxx > 1e-12 * sw * (1.0 + xbar * xbar) {
        sxy / sxx
    } else {
        0.0
    };
    (ybar - b * xbar, b)
}

fn residual_variance(window: &TrainingWindow, resp: &[Vec<f64>], a: f64, b: f64) -> f64 {
    let mut s = 0.0;
    let mut sw = 0.0;
    for (case, r) in window.cases.iter().zip(resp) {
        for (&x, &z) in case.members.iter().zip(r) {
            let e = case.observation - a - b * x;
            s += z * e * e;
            sw += z;
        }
    }
    s / sw
}

/// Mixture with component `m` centered at `a + b x_m`.
pub fn predict_bma_normal(params: &BmaNormalParams, ensemble: &[f64]) -> Result<NormalMixture> {
    if params.weights.len() != ensemble.len() {
        return Err(Error::SizeMismatch(format!(
            "{} weights for {} members",
            params.weights.len(),
            ensemble.len()
        )));
    }
    let sigma = params.sigma2.sqrt();
    let components = params
        .weights
        .iter()
        .zip(ensemble)
        .map(|(&w, &x)| {
            Ok(Weighted::new(
                w,
                Normal::new(params.a + params.b * x, sigma)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    NormalMixture::new(components)
}

/// `logit P(y = 0 | x) = alpha + beta x^(1/3) + gamma 1{x = 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticCoefs {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl LogisticCoefs {
    pub fn logit_zero(&self, x: f64) -> f64 {
        let delta = if x == 0.0 { 1.0 } else { 0.0 };
        self.alpha + self.beta * cbrt_nonneg(x) + self.gamma * delta
    }

    pub fn prob_zero(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-self.logit_zero(x)).exp())
    }
}

/// Gamma kernel mean on the cube-root scale: `a + b x^(1/3)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaMeanCoefs {
    pub a: f64,
    pub b: f64,
}

/// Gamma kernel variance: `c + d x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaVarianceCoefs {
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BmaPrecipParams {
    pub logistic: LogisticCoefs,
    pub gamma_mean: GammaMeanCoefs,
    pub gamma_var: GammaVarianceCoefs,
    /// Set when the window held no positive amounts; predictions are then a
    /// point mass at zero and the gamma coefficients are unusable.
    #[serde(default)]
    pub pop_only: bool,
}

impl BmaPrecipParams {
    fn kernel(&self, x: f64) -> Result<(f64, Gamma)> {
        let mean = (self.gamma_mean.a + self.gamma_mean.b * cbrt_nonneg(x)).max(GAMMA_MEAN_FLOOR);
        let var = (self.gamma_var.c + self.gamma_var.d * x).max(VARIANCE_FLOOR);
        Ok((self.logistic.prob_zero(x), Gamma::new(mean, var)?))
    }
}

fn check_nonnegative(values: impl IntoIterator<Item = f64>, what: &str) -> Result<()> {
    for v in values {
        if !(v >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "negative or missing {what}: {v}"
            )));
        }
    }
    Ok(())
}

/// Bernoulli-gamma BMA with exchangeable members.
///
/// The occurrence part is a pooled logistic regression on the member
/// forecasts; the gamma mean and variance coefficients maximize the mixture
/// likelihood of the cube-root positive amounts.
pub fn fit_bma_precip(
    window: &TrainingWindow,
    exchangeable: bool,
) -> Result<Fitted<BmaPrecipParams>> {
    if !exchangeable {
        return Err(Error::InvalidInput(
            "member-specific precipitation BMA is not supported; use exchangeable members".into(),
        ));
    }
    let m = window.require(MIN_TRAINING_CASES)?;
    check_nonnegative(
        window.cases.iter().flat_map(|c| c.members.iter().copied()),
        "ensemble value",
    )?;
    check_nonnegative(window.cases.iter().map(|c| c.observation), "observation")?;
    let mut diag = FitDiagnostics::default();

    let n_zero = window.cases.iter().filter(|c| c.observation == 0.0).count();
    if n_zero == window.cases.len() {
        diag.warn("all observations zero: point mass model only, gamma part unusable");
        diag.converged = true;
        return Ok(Fitted {
            params: BmaPrecipParams {
                logistic: LogisticCoefs {
                    alpha: COEF_CLAMP,
                    beta: 0.0,
                    gamma: 0.0,
                },
                gamma_mean: GammaMeanCoefs { a: 1.0, b: 0.0 },
                gamma_var: GammaVarianceCoefs { c: 1.0, d: 0.0 },
                pop_only: true,
            },
            diagnostics: diag,
        });
    }

    let logistic = fit_occurrence(window, &mut diag)?;

    // Gamma part on cube-root positive amounts.
    // Per wet case: cube-root amount and, per member, (x, x^(1/3), P(y > 0 | x)).
    type MemberTerms = Vec<(f64, f64, f64)>;
    let positive: Vec<(f64, MemberTerms)> = window
        .cases
        .iter()
        .filter(|c| c.observation > 0.0)
        .map(|c| {
            let members = c
                .members
                .iter()
                .map(|&x| (x, cbrt_nonneg(x), 1.0 - logistic.prob_zero(x)))
                .collect();
            (c.observation.cbrt(), members)
        })
        .collect();

    let (a0, b0, resid) = {
        let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (z, members) in &positive {
            for &(_, xc, _) in members {
                sx += xc;
                sy += z;
                sxx += xc * xc;
                sxy += xc * z;
                n += 1.0;
            }
        }
        let var_x = sxx / n - (sx / n) * (sx / n);
        let b = if var_x > 1e-12 {
            (sxy / n - sx / n * sy / n) / var_x
        } else {
            0.0
        };
        let a = sy / n - b * sx / n;
        let mut r = 0.0;
        for (z, members) in &positive {
            for &(_, xc, _) in members {
                let e = z - a - b * xc;
                r += e * e;
            }
        }
        (a, b, (r / n).max(0.01))
    };

    let nll = |theta: &[f64]| -> f64 {
        let (a, b, c, d) = (theta[0], theta[1], theta[2] * theta[2], theta[3] * theta[3]);
        let mut total = 0.0;
        let mut terms = vec![0.0; m];
        for (z, members) in &positive {
            for (k, &(x, xc, p_pos)) in members.iter().enumerate() {
                let mean = (a + b * xc).max(GAMMA_MEAN_FLOOR);
                let var = (c + d * x).max(VARIANCE_FLOOR);
                let shape = mean * mean / var;
                let rate = mean / var;
                terms[k] = p_pos.ln() + shape * rate.ln()
                    - statrs::function::gamma::ln_gamma(shape)
                    + (shape - 1.0) * z.ln()
                    - rate * z;
            }
            total -= log_sum_exp(&terms) - (m as f64).ln();
        }
        total
    };

    let x0 = [a0, b0, resid.sqrt(), 0.1];
    let steps = [
        0.1 + 0.1 * a0.abs(),
        0.1 + 0.1 * b0.abs(),
        0.25 * resid.sqrt(),
        0.1,
    ];
    let opt = NelderMead::default().minimize(nll, &x0, &steps);
    if !opt.converged {
        diag.warn("gamma likelihood optimizer hit its evaluation budget");
    }
    diag.converged = opt.converged;
    diag.iterations += opt.evaluations;
    diag.objective = -opt.value;

    let params = BmaPrecipParams {
        logistic,
        gamma_mean: GammaMeanCoefs {
            a: opt.x[0],
            b: opt.x[1],
        },
        gamma_var: GammaVarianceCoefs {
            c: opt.x[2] * opt.x[2],
            d: opt.x[3] * opt.x[3],
        },
        pop_only: false,
    };
    let min_var = window
        .cases
        .iter()
        .flat_map(|c| c.members.iter())
        .map(|&x| params.gamma_var.c + params.gamma_var.d * x)
        .fold(f64::INFINITY, f64::min);
    if min_var < VARIANCE_FLOOR {
        diag.warn(format!(
            "gamma variance c + d x clamped at {VARIANCE_FLOOR}"
        ));
    }
    Ok(Fitted {
        params,
        diagnostics: diag,
    })
}

/// Pooled logistic regression of `1{y = 0}` on `(1, x^(1/3), 1{x = 0})`
/// over all (case, member) pairs. Columns without variation are dropped.
fn fit_occurrence(window: &TrainingWindow, diag: &mut FitDiagnostics) -> Result<LogisticCoefs> {
    let n_zero = window.cases.iter().filter(|c| c.observation == 0.0).count();
    if n_zero == 0 {
        diag.warn("no zero observations: occurrence model separated, P(y = 0) clamped near 0");
        return Ok(LogisticCoefs {
            alpha: -COEF_CLAMP,
            beta: 0.0,
            gamma: 0.0,
        });
    }
    let members = window.cases.iter().flat_map(|c| c.members.iter());
    let any_zero = members.clone().any(|&x| x == 0.0);
    let any_positive = members.clone().any(|&x| x > 0.0);
    let use_beta = any_positive;
    let use_gamma = any_zero && any_positive;

    let mut rows = Vec::new();
    let mut response = Vec::new();
    for case in &window.cases {
        for &x in &case.members {
            let mut row = vec![1.0];
            if use_beta {
                row.push(cbrt_nonneg(x));
            }
            if use_gamma {
                row.push(if x == 0.0 { 1.0 } else { 0.0 });
            }
            rows.push(row);
            response.push(case.observation == 0.0);
        }
    }
    let fit = fit_logistic(&rows, &response)?;
    if fit.separated {
        diag.warn("separation in occurrence model: coefficients clamped");
    }
    diag.iterations += fit.iterations;
    let mut coefs = fit.coefs.into_iter();
    let alpha = coefs.next().unwrap_or(0.0);
    let beta = if use_beta {
        coefs.next().unwrap_or(0.0)
    } else {
        0.0
    };
    let gamma = if use_gamma {
        coefs.next().unwrap_or(0.0)
    } else {
        0.0
    };
    Ok(LogisticCoefs { alpha, beta, gamma })
}

/// Per-member zero probabilities and gamma kernels, weighted `1/M`.
pub fn predict_bma_precip(
    params: &BmaPrecipParams,
    ensemble: &[f64],
) -> Result<BernoulliGammaMixture> {
    if ensemble.is_empty() {
        return Err(Error::InvalidInput("empty ensemble".into()));
    }
    check_nonnegative(ensemble.iter().copied(), "ensemble value")?;
    if params.pop_only {
        return BernoulliGammaMixture::new(1.0, Vec::new());
    }
    let w = 1.0 / ensemble.len() as f64;
    let kernels = ensemble
        .iter()
        .map(|&x| params.kernel(x).map(|(p, g)| (w, p, g)))
        .collect::<Result<Vec<_>>>()?;
    BernoulliGammaMixture::from_kernels(&kernels)
}
