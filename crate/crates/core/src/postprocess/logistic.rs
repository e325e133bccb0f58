//! Maximum-likelihood logistic regression by Newton's method with step
//! halving, so the deviance never increases between iterations.

use super::softplus;
use crate::{Error, Result};

/// Coefficients are clamped to this magnitude under (quasi-)separation.
pub const COEF_CLAMP: f64 = 30.0;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefs: Vec<f64>,
    pub deviance: f64,
    /// Deviance after each accepted iteration, starting with the initial value.
    pub deviance_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// True when some coefficient hit [`COEF_CLAMP`].
    pub separated: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn deviance(rows: &[Vec<f64>], response: &[bool], coefs: &[f64]) -> f64 {
    2.0 * rows
        .iter()
        .zip(response)
        .map(|(r, &y)| {
            let eta = dot(r, coefs);
            if y {
                softplus(-eta)
            } else {
                softplus(eta)
            }
        })
        .sum::<f64>()
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
pub(crate) fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let (upper, lower) = a.split_at_mut(row);
            let (pivot_row, target) = (&upper[col], &mut lower[0]);
            let factor = target[col] / pivot_row[col];
            for (t, p) in target[col..n].iter_mut().zip(&pivot_row[col..n]) {
                *t -= factor * p;
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Fit `logit P(y = 1) = row . coefs`.
pub fn fit_logistic(rows: &[Vec<f64>], response: &[bool]) -> Result<LogisticFit> {
    if rows.is_empty() || rows.len() != response.len() {
        return Err(Error::SizeMismatch(format!(
            "{} design rows for {} responses",
            rows.len(),
            response.len()
        )));
    }
    let p = rows[0].len();
    if rows
        .iter()
        .any(|r| r.len() != p || r.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::InvalidInput(
            "ragged or non-finite design matrix".into(),
        ));
    }
    let mut coefs = vec![0.0; p];
    let mut dev = deviance(rows, response, &coefs);
    let mut trace = vec![dev];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let mut grad = vec![0.0; p];
        let mut hess = vec![vec![0.0; p]; p];
        for (r, &y) in rows.iter().zip(response) {
            let eta = dot(r, &coefs);
            let prob = 1.0 / (1.0 + (-eta).exp());
            let w = prob * (1.0 - prob);
            let resid = if y { 1.0 - prob } else { -prob };
            for i in 0..p {
                grad[i] += r[i] * resid;
                for j in 0..p {
                    hess[i][j] += w * r[i] * r[j];
                }
            }
        }
        for (i, row) in hess.iter_mut().enumerate() {
            row[i] += 1e-10 * (1.0 + row[i]);
        }
        let Some(step) = solve(hess, grad) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = coefs
                .iter()
                .zip(&step)
                .map(|(c, s)| (c + scale * s).clamp(-COEF_CLAMP, COEF_CLAMP))
                .collect();
            let trial_dev = deviance(rows, response, &trial);
            if trial_dev <= dev {
                accepted = Some((trial, trial_dev));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_dev)) = accepted else {
            converged = true;
            break;
        };
        let change = dev - next_dev;
        coefs = next;
        dev = next_dev;
        trace.push(dev);
        if change < 1e-10 * (dev.abs() + 0.1) {
            converged = true;
            break;
        }
    }
    let separated = coefs.iter().any(|c| c.abs() >= COEF_CLAMP);
    Ok(LogisticFit {
        coefs,
        deviance: dev,
        deviance_trace: trace,
        iterations,
        converged,
        separated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::rng_from_seed;
    use rand::Rng;

    #[test]
    fn recovers_generating_coefficients() {
        let mut rng = rng_from_seed(3);
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..20_000 {
            let x: f64 = rng.random_range(-2.0..2.0);
            let p = 1.0 / (1.0 + (-(0.5 - 1.5 * x)).exp());
            rows.push(vec![1.0, x]);
            ys.push(rng.random::<f64>() < p);
        }
        let fit = fit_logistic(&rows, &ys).unwrap();
        assert!(fit.converged);
        assert!((fit.coefs[0] - 0.5).abs() < 0.08, "{:?}", fit.coefs);
        assert!((fit.coefs[1] + 1.5).abs() < 0.08, "{:?}", fit.coefs);
        assert!(fit.deviance_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn separation_is_clamped_and_flagged() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![1.0, i as f64]).collect();
        let ys: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let fit = fit_logistic(&rows, &ys).unwrap();
        assert!(fit.separated);
        assert!(fit.coefs.iter().all(|c| c.abs() <= COEF_CLAMP));
    }

    #[test]
    fn solve_small_system() {
        let x = solve(vec![vec![2.0, 1.0], vec![1.0, 3.0]], vec![3.0, 5.0]).unwrap();
        assert!((x[0] - 0.8).abs() < 1e-14 && (x[1] - 1.4).abs() < 1e-14);
        assert!(solve(vec![vec![0.0, 0.0], vec![0.0, 0.0]], vec![1.0, 1.0]).is_none());
    }
}
