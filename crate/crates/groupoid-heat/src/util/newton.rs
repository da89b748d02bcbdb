//! Damped Newton iteration for small square systems.

use thiserror::Error;

use super::linalg::{self, LinalgError};

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iters: usize,
    /// Central difference step for the numerical Jacobian.
    pub fd_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 1e-10, max_iters: 50, fd_step: 1e-7 }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NewtonError {
    #[error("Jacobian became singular: {0}")]
    Singular(#[from] LinalgError),
    #[error("no convergence after {iters} iterations, residual {residual:.3e}")]
    NoConvergence { iters: usize, residual: f64 },
}

const MIN_DAMPING: f64 = 1.0 / 256.0;

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Solve `f(x) = 0` by Newton iteration with residual-monotone damping.
/// The Jacobian is assembled by central differences around the iterate.
pub fn solve_damped<F>(
    mut f: F,
    x0: &[f64],
    opts: &NewtonOptions,
) -> Result<Vec<f64>, NewtonError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut res = vec![0.0; n];
    let mut res_trial = vec![0.0; n];
    let mut jac = vec![0.0; n * n];
    let mut xp = vec![0.0; n];
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];

    f(&x, &mut res);
    let mut res_norm = inf_norm(&res);

    for iter in 0..opts.max_iters {
        if res_norm <= opts.tol {
            return Ok(x);
        }
        // Central difference Jacobian, column by column.
        for j in 0..n {
            let h = opts.fd_step * x[j].abs().max(1.0);
            xp.copy_from_slice(&x);
            xp[j] += h;
            f(&xp, &mut fp);
            xp[j] = x[j] - h;
            f(&xp, &mut fm);
            for i in 0..n {
                jac[i * n + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let mut step = res.clone();
        linalg::solve(&jac, &mut step, n)?;

        // Damp until the residual actually decreases.
        let mut lambda = 1.0;
        loop {
            for i in 0..n {
                xp[i] = x[i] - lambda * step[i];
            }
            f(&xp, &mut res_trial);
            let trial_norm = inf_norm(&res_trial);
            if trial_norm < res_norm || trial_norm <= opts.tol {
                x.copy_from_slice(&xp);
                res.copy_from_slice(&res_trial);
                res_norm = trial_norm;
                break;
            }
            lambda *= 0.5;
            if lambda < MIN_DAMPING {
                // Take the tiny step anyway; the next Jacobian may do better.
                x.copy_from_slice(&xp);
                res.copy_from_slice(&res_trial);
                res_norm = trial_norm;
                break;
            }
        }
        let _ = iter;
    }
    if res_norm <= opts.tol {
        return Ok(x);
    }
    Err(NewtonError::NoConvergence { iters: opts.max_iters, residual: res_norm })
}
