//! Explicit Runge-Kutta integration: Dormand-Prince 5(4) with dense output.
//!
//! The integrator keeps every accepted step's interpolation polynomial, so a
//! solution can be sampled anywhere in the integration window at the order of
//! the method. Step size control is the standard PI controller. When the
//! controller drives the step below machine resolution the integrator stops
//! and hands back the partial trajectory inside the error, which callers use
//! to diagnose flows that leave their chart domain.

use thiserror::Error;

/// Tolerances and limits for one integration.
#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub h_init: Option<f64>,
    pub h_max: Option<f64>,
    pub max_steps: usize,
    /// Keep dense output segments. Disable for pure endpoint solves.
    pub dense: bool,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            h_init: None,
            h_max: None,
            max_steps: 100_000,
            dense: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size underflow at t = {t:.6e}")]
    StepUnderflow { t: f64, partial: Box<OdeSolution> },
    #[error("step budget of {max_steps} exhausted at t = {t:.6e}")]
    MaxSteps { t: f64, max_steps: usize, partial: Box<OdeSolution> },
    #[error("non-finite state at t = {t:.6e}")]
    NonFinite { t: f64 },
}

impl OdeError {
    /// The trajectory integrated so far, if any.
    pub fn partial(&self) -> Option<&OdeSolution> {
        match self {
            OdeError::StepUnderflow { partial, .. } => Some(partial),
            OdeError::MaxSteps { partial, .. } => Some(partial),
            OdeError::NonFinite { .. } => None,
        }
    }
}

/// One accepted step's interpolation data.
#[derive(Debug, Clone)]
struct DenseSegment {
    t0: f64,
    h: f64,
    cont: [Vec<f64>; 5],
}

impl DenseSegment {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let theta = (t - self.t0) / self.h;
        let th1 = 1.0 - theta;
        for i in 0..out.len() {
            out[i] = self.cont[0][i]
                + theta
                    * (self.cont[1][i]
                        + th1
                            * (self.cont[2][i]
                                + theta * (self.cont[3][i] + th1 * self.cont[4][i])));
        }
    }
}

/// Result of an integration, including dense output if requested.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    pub t0: f64,
    pub t_end: f64,
    pub y_end: Vec<f64>,
    pub n_accepted: usize,
    pub n_rejected: usize,
    /// Sum of normalized local error estimates over accepted steps. In units
    /// of the prescribed tolerance, so `accuracy * abs_tol` is a crude global
    /// error proxy for well conditioned problems.
    pub accuracy: f64,
    segments: Vec<DenseSegment>,
}

impl OdeSolution {
    pub fn dim(&self) -> usize {
        self.y_end.len()
    }

    /// Evaluate the dense output at `t`, clamped to the integration window.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        if self.segments.is_empty() {
            // Zero length span: the solution is the initial state.
            assert!(self.t0 == self.t_end, "solution stored without dense output");
            out.copy_from_slice(&self.y_end);
            return;
        }
        let dir = (self.t_end - self.t0).signum();
        let t = if (t - self.t0) * dir < 0.0 {
            self.t0
        } else if (t - self.t_end) * dir > 0.0 {
            self.t_end
        } else {
            t
        };
        // Binary search for the segment containing t.
        let mut lo = 0usize;
        let mut hi = self.segments.len() - 1;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if (t - self.segments[mid].t0) * dir >= 0.0 {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        self.segments[lo].eval(t, out);
    }

    pub fn eval_vec(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(t, &mut out);
        out
    }
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Dense output coefficients.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const BETA: f64 = 0.04;
const EXPO1: f64 = 0.2 - BETA * 0.75;

/// Integrate `y' = f(t, y)` from `t0` to `t1` (either direction).
pub fn integrate<F>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: &[f64],
    opts: &OdeOptions,
) -> Result<OdeSolution, OdeError>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    if t1 == t0 {
        return Ok(OdeSolution {
            t0,
            t_end: t1,
            y_end: y0.to_vec(),
            n_accepted: 0,
            n_rejected: 0,
            accuracy: 0.0,
            segments: Vec::new(),
        });
    }
    let dir = (t1 - t0).signum();
    let h_max = opts.h_max.unwrap_or((t1 - t0).abs());

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut ytmp = vec![0.0; n];
    let mut y1 = vec![0.0; n];

    f(t, &y, &mut k1);

    let mut h = match opts.h_init {
        Some(h) => h.abs().min(h_max) * dir,
        None => initial_step(&mut f, t, &y, &k1, dir, h_max, opts),
    };

    let mut solution = OdeSolution {
        t0,
        t_end: t0,
        y_end: y.clone(),
        n_accepted: 0,
        n_rejected: 0,
        accuracy: 0.0,
        segments: Vec::new(),
    };
    let mut facold: f64 = 1e-4;
    let mut rejected_last = false;

    for _ in 0..opts.max_steps {
        if (t - t1) * dir >= 0.0 {
            solution.t_end = t;
            solution.y_end = y;
            return Ok(solution);
        }
        // Do not step past the end point. A clamped step is always
        // attempted, however small; underflow only means the controller
        // stalled short of the end.
        if (t + h - t1) * dir >= 0.0 {
            h = t1 - t;
            if t + h == t {
                solution.t_end = t;
                solution.y_end = y;
                return Ok(solution);
            }
        } else if h.abs() <= 16.0 * f64::EPSILON * t.abs().max(1e-3) {
            solution.t_end = t;
            solution.y_end = y.clone();
            return Err(OdeError::StepUnderflow { t, partial: Box::new(solution) });
        }

        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        f(t + C2 * h, &ytmp, &mut k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        f(t + C3 * h, &ytmp, &mut k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        f(t + C4 * h, &ytmp, &mut k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        f(t + C5 * h, &ytmp, &mut k5);
        for i in 0..n {
            ytmp[i] =
                y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        f(t + h, &ytmp, &mut k6);
        for i in 0..n {
            y1[i] = y[i]
                + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        f(t + h, &y1, &mut k7);

        // Normalized error estimate.
        let mut err_sq = 0.0;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(y1[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / n as f64).sqrt();

        if !err.is_finite() {
            if !y1.iter().all(|v| v.is_finite()) && h.abs() < 1e-12 {
                return Err(OdeError::NonFinite { t });
            }
            solution.n_rejected += 1;
            rejected_last = true;
            h *= 0.1;
            continue;
        }

        if err <= 1.0 {
            // Accept.
            if opts.dense {
                let mut cont = [
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                    vec![0.0; n],
                ];
                for i in 0..n {
                    let ydiff = y1[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    cont[0][i] = y[i];
                    cont[1][i] = ydiff;
                    cont[2][i] = bspl;
                    cont[3][i] = ydiff - h * k7[i] - bspl;
                    cont[4][i] = h
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                solution.segments.push(DenseSegment { t0: t, h, cont });
            }
            solution.n_accepted += 1;
            solution.accuracy += err;
            t += h;
            std::mem::swap(&mut y, &mut y1);
            std::mem::swap(&mut k1, &mut k7);

            let fac11 = err.max(1e-10).powf(EXPO1);
            let mut scale = SAFETY / (fac11 / facold.powf(BETA));
            scale = scale.clamp(0.2, if rejected_last { 1.0 } else { 10.0 });
            h = (h * scale).clamp(-h_max, h_max);
            facold = err.max(1e-4);
            rejected_last = false;
        } else {
            solution.n_rejected += 1;
            rejected_last = true;
            let fac11 = err.powf(EXPO1);
            h *= (SAFETY / fac11).max(0.2);
        }
    }

    solution.t_end = t;
    solution.y_end = y;
    Err(OdeError::MaxSteps { t, max_steps: opts.max_steps, partial: Box::new(solution) })
}

/// Automatic initial step, following the usual two trial evaluations.
fn initial_step<F>(f: &mut F, t: f64, y: &[f64], k1: &[f64], dir: f64, h_max: f64, opts: &OdeOptions) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut d0 = 0.0;
    let mut d1 = 0.0;
    for i in 0..n {
        let sc = opts.abs_tol + opts.rel_tol * y[i].abs();
        d0 += (y[i] / sc) * (y[i] / sc);
        d1 += (k1[i] / sc) * (k1[i] / sc);
    }
    d0 = (d0 / n as f64).sqrt();
    d1 = (d1 / n as f64).sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(h_max);
    let ytmp: Vec<f64> = (0..n).map(|i| y[i] + dir * h0 * k1[i]).collect();
    let mut k2 = vec![0.0; n];
    f(t + dir * h0, &ytmp, &mut k2);
    let mut d2 = 0.0;
    for i in 0..n {
        let sc = opts.abs_tol + opts.rel_tol * y[i].abs();
        d2 += ((k2[i] - k1[i]) / sc) * ((k2[i] - k1[i]) / sc);
    }
    d2 = (d2 / n as f64).sqrt() / h0;
    let d_max = d1.max(d2);
    let h1 = if d_max <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d_max).powf(0.2) };
    dir * h1.min(100.0 * h0).min(h_max)
}
