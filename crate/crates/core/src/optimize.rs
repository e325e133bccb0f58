//! Derivative-free local minimization (Nelder-Mead with restarts).

/// Outcome of a minimization run.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// False when the evaluation budget ran out before the improvement
    /// between restarts fell below the tolerance.
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct NelderMead {
    /// Restarting stops once a restart improves the objective by less than this.
    pub improvement_tol: f64,
    pub max_evaluations: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            improvement_tol: 1e-8,
            max_evaluations: 20_000,
        }
    }
}

impl NelderMead {
    /// Minimize `f` from `x0` with initial simplex edge lengths `steps`.
    ///
    /// Non-finite objective values are treated as `+inf`, which lets callers
    /// encode hard constraints.
    pub fn minimize<F>(&self, f: F, x0: &[f64], steps: &[f64]) -> Minimum
    where
        F: Fn(&[f64]) -> f64,
    {
        assert_eq!(x0.len(), steps.len());
        let eval = |x: &[f64]| {
            let v = f(x);
            if v.is_finite() {
                v
            } else {
                f64::INFINITY
            }
        };
        let mut best_x = x0.to_vec();
        let mut best_f = eval(x0);
        let mut evaluations = 1;
        let mut step_scale = 1.0;
        loop {
            let steps: Vec<f64> = steps.iter().map(|s| s * step_scale).collect();
            let (x, fx, used) = simplex_search(
                &eval,
                &best_x,
                &steps,
                self.max_evaluations.saturating_sub(evaluations),
            );
            evaluations += used;
            let improvement = best_f - fx;
            if fx < best_f || !best_f.is_finite() {
                best_x = x;
                best_f = fx;
            }
            if improvement.abs() < self.improvement_tol || improvement <= 0.0 {
                return Minimum {
                    x: best_x,
                    value: best_f,
                    evaluations,
                    converged: true,
                };
            }
            if evaluations >= self.max_evaluations {
                return Minimum {
                    x: best_x,
                    value: best_f,
                    evaluations,
                    converged: false,
                };
            }
            step_scale = (step_scale * 0.5).max(1e-3);
        }
    }
}

fn simplex_search<F>(f: &F, x0: &[f64], steps: &[f64], budget: usize) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut used = 0;
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    used += 1;
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if steps[i] != 0.0 { steps[i] } else { 1e-3 };
        let fx = f(&x);
        used += 1;
        simplex.push((x, fx));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    while used < budget {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let f_best = simplex[0].1;
        let f_worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let scale = simplex[0].0.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        if f_worst.is_finite()
            && (f_worst - f_best).abs() <= 1e-13 * (1.0 + f_best.abs())
            && diameter <= 1e-9 * scale
        {
            break;
        }

        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let xr = along(alpha);
        let fr = f(&xr);
        used += 1;
        if fr < simplex[0].1 {
            let xe = along(gamma);
            let fe = f(&xe);
            used += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = along(rho * alpha);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = f(&xc);
                (xc, fc)
            };
            used += 1;
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for (x, fx) in simplex.iter_mut().skip(1) {
                    for (v, b) in x.iter_mut().zip(&best) {
                        *v = b + sigma * (*v - b);
                    }
                    *fx = f(x);
                    used += 1;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    (x, fx, used)
}
