//! Damped Gauss–Newton (Levenberg–Marquardt) least squares with analytic
//! Jacobians, used by the spectral and frequency-shift fits.

use crate::error::{Error, Result};
use crate::numeric::solve_linear;

/// A least-squares problem: residual vector r(θ) and Jacobian ∂r/∂θ.
pub trait LeastSquaresModel {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    /// Fill `out` (length n_residuals) with residuals at `params`. Returning
    /// false marks the point infeasible (step rejected).
    fn residuals(&self, params: &[f64], out: &mut [f64]) -> bool;
    /// Fill `out[i][j]` with ∂r_i/∂θ_j at `params`.
    fn jacobian(&self, params: &[f64], out: &mut [Vec<f64>]);
}

#[derive(Debug, Clone)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative parameter-step convergence threshold.
    pub xtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-8,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Parameter covariance s²·(JᵀJ)⁻¹ with s² = Σr²/(n−p).
    pub covariance: Vec<Vec<f64>>,
    /// Final ½Σr².
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

pub fn levenberg_marquardt(
    model: &dyn LeastSquaresModel,
    initial: &[f64],
    opts: &LmOptions,
) -> Result<LmResult> {
    let np = model.n_params();
    let nr = model.n_residuals();
    if nr < np {
        return Err(Error::InvalidInput(format!(
            "{nr} residuals cannot determine {np} parameters"
        )));
    }
    // Work on internally rescaled parameters (unit scale at the initial
    // guess); raw spectral parameters span tens of orders of magnitude and
    // would wreck the conditioning of the normal equations.
    let scales: Vec<f64> = initial
        .iter()
        .map(|p| if p.abs() > 0.0 { p.abs() } else { 1.0 })
        .collect();
    let to_raw = |u: &[f64]| -> Vec<f64> {
        u.iter().zip(&scales).map(|(x, s)| x * s).collect()
    };

    let mut u: Vec<f64> = initial.iter().zip(&scales).map(|(p, s)| p / s).collect();
    let mut r = vec![0.0; nr];
    if !model.residuals(&to_raw(&u), &mut r) {
        return Err(Error::InvalidInput("initial guess is infeasible".into()));
    }
    let mut cost: f64 = 0.5 * r.iter().map(|x| x * x).sum::<f64>();
    let mut jac = vec![vec![0.0; np]; nr];
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..opts.max_iterations {
        iterations = iter + 1;
        model.jacobian(&to_raw(&u), &mut jac);
        // normal equations in scaled space: J_u = J·diag(scales)
        let mut jtj = vec![vec![0.0; np]; np];
        let mut jtr = vec![0.0; np];
        for i in 0..nr {
            for a in 0..np {
                let ja = jac[i][a] * scales[a];
                jtr[a] += ja * r[i];
                for b in a..np {
                    jtj[a][b] += ja * jac[i][b] * scales[b];
                }
            }
        }
        for a in 0..np {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }

        let mut improved = false;
        let mut best_trial = f64::INFINITY;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for (k, row) in a.iter_mut().enumerate() {
                row[k] += lambda * jtj[k][k].max(1e-300);
            }
            let rhs: Vec<f64> = jtr.iter().map(|v| -v).collect();
            let Ok(step) = solve_linear(a, rhs) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = u.iter().zip(&step).map(|(p, s)| p + s).collect();
            let mut r_trial = vec![0.0; nr];
            if !model.residuals(&to_raw(&trial), &mut r_trial) {
                lambda *= 10.0;
                continue;
            }
            let cost_trial: f64 = 0.5 * r_trial.iter().map(|x| x * x).sum::<f64>();
            best_trial = best_trial.min(cost_trial);
            if cost_trial.is_finite() && cost_trial < cost {
                let rel_step = step
                    .iter()
                    .zip(&u)
                    .map(|(s, p)| (s / (p.abs() + 1.0)).abs())
                    .fold(0.0f64, f64::max);
                u = trial;
                r = r_trial;
                cost = cost_trial;
                lambda = (lambda / 3.0).max(1e-14);
                improved = true;
                if rel_step < opts.xtol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if converged {
            break;
        }
        if !improved {
            // no downhill step at any damping: accept as stationary if the
            // cost surface is numerically flat there or the scaled gradient
            // has vanished
            let g_inf = jtr.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            converged = best_trial <= cost * (1.0 + 1e-10) || g_inf <= 1e-8 * (1.0 + cost);
            break;
        }
    }

    let params = to_raw(&u);
    // covariance at the solution, computed in scaled space and mapped back
    model.jacobian(&params, &mut jac);
    let mut jtj = vec![vec![0.0; np]; np];
    for i in 0..nr {
        for a in 0..np {
            for b in a..np {
                jtj[a][b] += jac[i][a] * scales[a] * jac[i][b] * scales[b];
            }
        }
    }
    for a in 0..np {
        for b in 0..a {
            jtj[a][b] = jtj[b][a];
        }
    }
    let dof = (nr - np).max(1) as f64;
    let s2 = 2.0 * cost / dof;
    let mut covariance = vec![vec![0.0; np]; np];
    for col in 0..np {
        let mut e = vec![0.0; np];
        e[col] = 1.0;
        if let Ok(x) = solve_linear(jtj.clone(), e) {
            for row in 0..np {
                covariance[row][col] = s2 * x[row] * scales[row] * scales[col];
            }
        } else {
            for row in 0..np {
                covariance[row][col] = f64::NAN;
            }
        }
    }

    Ok(LmResult {
        params,
        covariance,
        cost,
        iterations,
        converged,
    })
}
