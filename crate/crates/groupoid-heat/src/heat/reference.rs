//! Dense finite-difference reference solution of the fiber heat flow.
//!
//! This is the independent check for the parametrix machinery: a
//! Crank-Nicolson march of `d/ds u = (1/w) d/dt ((1/w) d/dt u)` with
//! `w = sqrt(h)` along one fiber, started from a narrow Gaussian in arc
//! length. The flux form keeps the discrete mass `sum u w dt` constant, so
//! mass drift doubles as a self-test. Nothing here touches the parametrix
//! code paths; distances are integrated directly from `h`.

use crate::models::{BasePoint, Model};
use crate::util::quad::adaptive_simpson;
use crate::util::solve_tridiagonal;

use super::HeatError;

#[derive(Debug, Clone)]
pub struct ReferenceOptions {
    /// Half-width of the coordinate window around the source.
    pub half_width: f64,
    /// Spatial step.
    pub step: f64,
    /// Time at which the Gaussian initial slice is placed.
    pub s0: f64,
    /// Initial time step, as a fraction of `s0`.
    pub first_dt: f64,
    /// Geometric growth of the time step while ramping up.
    pub growth: f64,
    /// Cap on the time step.
    pub max_dt: f64,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        ReferenceOptions {
            half_width: 4.5,
            step: 0.004,
            s0: 1e-3,
            first_dt: 0.05,
            growth: 1.06,
            max_dt: 2.5e-4,
        }
    }
}

/// Snapshots of the fiber heat kernel with source at the window center.
#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub grid_lo: f64,
    pub step: f64,
    pub times: Vec<f64>,
    /// One slice per requested time, on the uniform coordinate grid.
    pub values: Vec<Vec<f64>>,
    /// `sqrt(h)` at the grid nodes.
    pub weights: Vec<f64>,
}

impl ReferenceSolution {
    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// Kernel value at snapshot `j` and fiber coordinate `x`, by local
    /// 6-point Lagrange interpolation.
    pub fn value_at(&self, j: usize, x: f64) -> f64 {
        let vals = &self.values[j];
        let n = vals.len();
        let pos = (x - self.grid_lo) / self.step;
        let mut i0 = pos.floor() as isize - 2;
        i0 = i0.clamp(0, n as isize - 6);
        let i0 = i0 as usize;
        let mut acc = 0.0;
        for a in 0..6 {
            let xa = i0 as f64 + a as f64;
            let mut ell = 1.0;
            for b in 0..6 {
                if b != a {
                    let xb = i0 as f64 + b as f64;
                    ell *= (pos - xb) / (xa - xb);
                }
            }
            acc += ell * vals[i0 + a];
        }
        acc
    }

    /// Discrete Riemannian mass of snapshot `j`.
    pub fn mass(&self, j: usize) -> f64 {
        let vals = &self.values[j];
        let mut acc = 0.0;
        for i in 0..vals.len() {
            acc += vals[i] * self.weights[i];
        }
        acc * self.step
    }
}

/// Arc length from the window center, straight from `h`.
pub fn arc_length(model: &Model, base: &BasePoint, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let f = |t: f64| model.h(&model.act(base, &[t])).sqrt();
    adaptive_simpson(&f, 0.0, x, 1e-13)
}

/// March the fiber heat equation over the fiber through `base` and record
/// the requested times. Only one-dimensional fibers are supported; that is
/// the regime where tolerances are tight enough to need a dense check.
pub fn reference_heat_kernel(
    model: &Model,
    base: &BasePoint,
    times: &[f64],
    opts: &ReferenceOptions,
) -> Result<ReferenceSolution, HeatError> {
    let q = model.q() + model.p();
    if q != 1 {
        return Err(HeatError::UnsupportedFiber { model: model.id.name(), q });
    }
    let mut wanted: Vec<f64> = times.to_vec();
    wanted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(
        wanted.first().copied().unwrap_or(opts.s0) >= opts.s0,
        "requested times must not precede the initial slice"
    );

    let n = (2.0 * opts.half_width / opts.step).round() as usize + 1;
    let grid_lo = -opts.half_width;
    let mut w = Vec::with_capacity(n);
    let mut w_mid = Vec::with_capacity(n - 1);
    for i in 0..n {
        let x = grid_lo + i as f64 * opts.step;
        w.push(model.h(&model.act(base, &[x])).sqrt());
        if i + 1 < n {
            let xm = x + 0.5 * opts.step;
            w_mid.push(model.h(&model.act(base, &[xm])).sqrt());
        }
    }

    // Initial slice: Gaussian in arc length at time s0, a density with
    // respect to the Riemannian fiber measure.
    let mut u = Vec::with_capacity(n);
    for i in 0..n {
        let x = grid_lo + i as f64 * opts.step;
        let d = arc_length(model, base, x);
        u.push((4.0 * std::f64::consts::PI * opts.s0).powf(-0.5) * (-d * d / (4.0 * opts.s0)).exp());
    }

    let apply_l = |u: &[f64], out: &mut [f64]| {
        out[0] = 0.0;
        out[n - 1] = 0.0;
        for i in 1..n - 1 {
            let flux_r = (u[i + 1] - u[i]) / (opts.step * w_mid[i]);
            let flux_l = (u[i] - u[i - 1]) / (opts.step * w_mid[i - 1]);
            out[i] = (flux_r - flux_l) / (opts.step * w[i]);
        }
    };

    let mut s = opts.s0;
    let mut dt = opts.s0 * opts.first_dt;
    let mut snapshots = Vec::with_capacity(wanted.len());
    let mut recorded = Vec::with_capacity(wanted.len());
    let mut next = 0;
    while next < wanted.len() && wanted[next] <= s + 1e-14 {
        snapshots.push(u.clone());
        recorded.push(s);
        next += 1;
    }

    let mut rhs = vec![0.0; n];
    let mut lu = vec![0.0; n];
    let mut lower = vec![0.0; n - 1];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n - 1];
    while next < wanted.len() {
        let mut step_dt = dt;
        if s + step_dt >= wanted[next] - 1e-14 {
            step_dt = wanted[next] - s;
        }

        apply_l(&u, &mut lu);
        for i in 0..n {
            rhs[i] = u[i] + 0.5 * step_dt * lu[i];
        }
        rhs[0] = 0.0;
        rhs[n - 1] = 0.0;

        diag[0] = 1.0;
        diag[n - 1] = 1.0;
        upper[0] = 0.0;
        lower[n - 2] = 0.0;
        for i in 1..n - 1 {
            let cr = 1.0 / (opts.step * opts.step * w[i] * w_mid[i]);
            let cl = 1.0 / (opts.step * opts.step * w[i] * w_mid[i - 1]);
            lower[i - 1] = -0.5 * step_dt * cl;
            upper[i] = -0.5 * step_dt * cr;
            diag[i] = 1.0 + 0.5 * step_dt * (cl + cr);
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs)?;
        std::mem::swap(&mut u, &mut rhs);
        s += step_dt;

        if (s - wanted[next]).abs() <= 1e-13 {
            snapshots.push(u.clone());
            recorded.push(wanted[next]);
            next += 1;
        }
        dt = (dt * opts.growth).min(opts.max_dt);
    }

    Ok(ReferenceSolution {
        grid_lo,
        step: opts.step,
        times: recorded,
        values: snapshots,
        weights: w,
    })
}

/// Fit the short-time expansion `K sqrt(4 pi s) exp(d^2 / 4s) = a + b s`
/// at fixed fiber points, using every snapshot in the solution. Returns
/// `(a, b)` per point; `a` estimates the leading transport coefficient.
pub fn extract_leading_coefficient(
    model: &Model,
    base: &BasePoint,
    sol: &ReferenceSolution,
    points: &[f64],
) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(points.len());
    for &x in points {
        let d = arc_length(model, base, x);
        let mut xs = Vec::with_capacity(sol.times.len());
        let mut ys = Vec::with_capacity(sol.times.len());
        for (j, &sj) in sol.times.iter().enumerate() {
            let k = sol.value_at(j, x);
            let y = k * (4.0 * std::f64::consts::PI * sj).sqrt() * (d * d / (4.0 * sj)).exp();
            xs.push(sj);
            ys.push(y);
        }
        let (intercept, slope) = crate::util::fit::fit_line(&xs, &ys);
        out.push((intercept, slope));
    }
    out
}
