//! Transport coefficients and the truncated parametrix.
//!
//! The ansatz is the usual short-time series
//! `A(d, t) = (4 pi t)^{-q/2} exp(-d^2/4t) sum_i t^i Phi_i(d)` with radial
//! coefficients solving the transport recursion along geodesics from the
//! unit; `G_N = phi(d / rho0) A` glues it to zero outside the collar of the
//! diagonal. The remainder `R_N = (d/dt + Lap) G_N` is evaluated in the same
//! radially decomposed form: substituting the ansatz turns it into
//!
//! `R_N = phi pre [ sum_i t^{i-1} res_i + t^N Lap Phi_N ] + (Lap phi) A - 2 phi' dA/dr`
//!
//! where `res_i` are the transport residuals of the tabulated coefficients
//! (zero up to table error). All radial derivatives are taken once, on the
//! coefficient tables, with fourth order stencils; evaluation afterwards is
//! table lookup plus analytic jets. Doing the differentiation on the tables
//! instead of on kernel values keeps the remainder meaningful at small
//! times, where a fixed-step stencil through the Gaussian peak would drown
//! in amplified truncation error.
//!
//! One-dimensional fibers are flat in arc length: the density `theta` is
//! identically 1, the leading coefficient is exactly 1, and every correction
//! and residual table comes out exactly zero. The general code produces
//! those values without special casing, and the unit-fiber tables are then
//! valid at every row.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::util::cutoff::cutoff_jet;
use crate::util::quad::cumulative_simpson;
use crate::util::stencil::{deriv1_c4, deriv2_c4};

use super::geometry::{FiberGeometry, GeodesicFan};
use super::{HeatError, HeatOptions};

/// Which factor of the parametrix an evaluation asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    /// `G_N` itself.
    Value,
    /// Analytic time derivative of `G_N`.
    TimeDerivative,
    /// `R_N = (d/dt + Lap) G_N`.
    Remainder,
}

/// Radial coefficient tables over a star of rays from one fiber point.
/// `rays = 2` for a one-dimensional fiber (the two half-lines).
#[derive(Debug, Clone)]
pub struct HeatCoefficients {
    pub order: usize,
    pub q: usize,
    pub radial_step: f64,
    pub rays: usize,
    /// `phi[i][ray]`: transport coefficient i along the ray; lengths shrink
    /// with i because each recursion level consumes stencil arms.
    pub phi: Vec<Vec<Vec<f64>>>,
    /// Radial derivative tables, same layout.
    pub dphi: Vec<Vec<Vec<f64>>>,
    /// Laplacian tables; `lap[i] = Lap(phi[i])`.
    pub lap: Vec<Vec<Vec<f64>>>,
    /// Transport residuals: `res[0] = r phi_0' + (r theta'/2theta) phi_0`,
    /// `res[i] = i phi_i + r phi_i' + (r theta'/2theta) phi_i + lap[i-1]`.
    pub res: Vec<Vec<Vec<f64>>>,
    /// Radial volume density along each ray and its log-derivative.
    pub theta: Vec<Vec<f64>>,
    pub dlog_theta: Vec<Vec<f64>>,
}

fn radial_interp(table: &[f64], step: f64, r: f64) -> f64 {
    let n = table.len();
    if n == 0 {
        return 0.0;
    }
    if n < 6 {
        return *table.last().unwrap();
    }
    let pos = r / step;
    let mut i0 = pos.floor() as isize - 2;
    i0 = i0.clamp(0, n as isize - 6);
    let i0 = i0 as usize;
    let mut acc = 0.0;
    for a in 0..6 {
        let xa = (i0 + a) as f64;
        let mut ell = 1.0;
        for b in 0..6 {
            if b != a {
                let xb = (i0 + b) as f64;
                ell *= (pos - xb) / (xa - xb);
            }
        }
        acc += ell * table[i0 + a];
    }
    acc
}

impl HeatCoefficients {
    fn antipode(&self, ray: usize) -> usize {
        (ray + self.rays / 2) % self.rays
    }

    /// Table value with signed radial index: negative indices read the
    /// antipodal ray, which is the smooth continuation through the center.
    fn signed(&self, table: &[Vec<f64>], ray: usize, k: isize) -> f64 {
        if k >= 0 {
            table[ray][k as usize]
        } else {
            table[self.antipode(ray)][(-k) as usize]
        }
    }

    fn radial_d1(&self, table: &[Vec<f64>], ray: usize, k: usize) -> f64 {
        let mut w = [0.0; 5];
        for (j, off) in (-2isize..=2).enumerate() {
            w[j] = self.signed(table, ray, k as isize + off);
        }
        deriv1_c4(&w, self.radial_step)
    }

    fn radial_d2(&self, table: &[Vec<f64>], ray: usize, k: usize) -> f64 {
        let mut w = [0.0; 5];
        for (j, off) in (-2isize..=2).enumerate() {
            w[j] = self.signed(table, ray, k as isize + off);
        }
        deriv2_c4(&w, self.radial_step)
    }

    /// Angular derivative across rays at fixed radius (q = 2).
    fn angular_d1(&self, table: &[Vec<f64>], ray: usize, k: usize) -> f64 {
        let step = 2.0 * std::f64::consts::PI / self.rays as f64;
        let mut w = [0.0; 5];
        for (j, off) in (-2isize..=2).enumerate() {
            let r = (ray as isize + off).rem_euclid(self.rays as isize) as usize;
            w[j] = table[r][k];
        }
        deriv1_c4(&w, step)
    }

    /// Positive Laplacian of a radial-table function, node by node. The
    /// result is two nodes shorter than the input.
    fn laplacian(&self, table: &[Vec<f64>], jac: Option<(&[Vec<f64>], &[Vec<f64>])>) -> Vec<Vec<f64>> {
        let len = table[0].len();
        let out_len = len.saturating_sub(2);
        let mut out = vec![vec![0.0; out_len]; self.rays];
        if out_len == 0 {
            return out;
        }
        // Center value: in normal coordinates the Laplacian at the center
        // is minus twice the ray-average of the radial second derivative
        // (q = 2), or minus the second derivative through the center (q = 1).
        let mut center = 0.0;
        for ray in 0..self.rays {
            center += self.radial_d2(table, ray, 0);
        }
        center /= self.rays as f64;
        center = if self.q == 1 { -center } else { -2.0 * center };

        match self.q {
            1 => {
                for ray in 0..self.rays {
                    out[ray][0] = center;
                    for k in 1..out_len {
                        out[ray][k] = -self.radial_d2(table, ray, k);
                    }
                }
            }
            _ => {
                let (jacobi, jacobi_d) = jac.expect("q = 2 needs Jacobi tables");
                // Angular part: g = f_w / J, term = g_w / J.
                let mut fw = vec![vec![0.0; len]; self.rays];
                for ray in 0..self.rays {
                    for k in 0..len {
                        fw[ray][k] = self.angular_d1(table, ray, k);
                    }
                }
                let mut gw = vec![vec![0.0; len]; self.rays];
                for ray in 0..self.rays {
                    for k in 1..len {
                        gw[ray][k] = fw[ray][k] / jacobi[ray][k];
                    }
                }
                for ray in 0..self.rays {
                    out[ray][0] = center;
                    for k in 1..out_len {
                        let frr = self.radial_d2(table, ray, k);
                        let fr = self.radial_d1(table, ray, k);
                        let jr_over_j = jacobi_d[ray][k] / jacobi[ray][k];
                        let ang = self.angular_d1(&gw, ray, k) / jacobi[ray][k];
                        out[ray][k] = -(frr + jr_over_j * fr + ang);
                    }
                }
            }
        }
        out
    }
}

/// Build the coefficient tables over the star at one fiber point.
/// `theta` has one table per ray on the uniform radial grid.
fn build_coefficients(
    q: usize,
    order: usize,
    radial_step: f64,
    theta: Vec<Vec<f64>>,
    jacobi: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
) -> Result<HeatCoefficients, HeatError> {
    if order as f64 <= q as f64 / 2.0 {
        return Err(HeatError::OrderTooLow { order, q });
    }
    let rays = theta.len();
    let nodes = theta[0].len();
    let mut coeffs = HeatCoefficients {
        order,
        q,
        radial_step,
        rays,
        phi: Vec::with_capacity(order + 1),
        dphi: Vec::with_capacity(order + 1),
        lap: Vec::with_capacity(order + 1),
        res: Vec::with_capacity(order + 1),
        theta,
        dlog_theta: Vec::new(),
    };
    let jac = jacobi.as_ref().map(|(j, jd)| (j.as_slice(), jd.as_slice()));

    let mut dlog = vec![vec![0.0; nodes - 2]; rays];
    for ray in 0..rays {
        for k in 0..nodes - 2 {
            dlog[ray][k] = coeffs.radial_d1(&coeffs.theta, ray, k) / coeffs.theta[ray][k];
        }
    }
    coeffs.dlog_theta = dlog;

    // Leading coefficient: inverse square root of the density.
    let mut phi0 = vec![vec![0.0; nodes]; rays];
    for ray in 0..rays {
        for k in 0..nodes {
            phi0[ray][k] = coeffs.theta[ray][k].powf(-0.5);
        }
    }
    coeffs.phi.push(phi0);

    for i in 1..=order {
        let prev_lap = coeffs.laplacian(&coeffs.phi[i - 1], jac);
        let len = prev_lap[0].len();
        let mut next = vec![vec![0.0; len]; rays];
        let center = -prev_lap[0][0] / i as f64;
        for ray in 0..rays {
            // Radial transport integral along the ray, with the polynomial
            // weight folded into the integrand so Simpson sees something
            // smooth at the center.
            let mut integrand = vec![0.0; len];
            for k in 0..len {
                let r = k as f64 * radial_step;
                integrand[k] =
                    r.powi(i as i32 - 1) * coeffs.phi[0][ray][k].recip() * prev_lap[ray][k];
            }
            let cum = cumulative_simpson(&integrand, radial_step);
            next[ray][0] = center;
            for k in 1..len {
                let r = k as f64 * radial_step;
                next[ray][k] = -r.powi(-(i as i32)) * coeffs.phi[0][ray][k] * cum[k];
            }
        }
        coeffs.lap.push(prev_lap);
        coeffs.phi.push(next);
    }
    let top_lap = coeffs.laplacian(&coeffs.phi[order], jac);
    coeffs.lap.push(top_lap);

    for i in 0..=order {
        let len = coeffs.lap[i][0].len().min(coeffs.phi[i][0].len().saturating_sub(2));
        let mut dphi = vec![vec![0.0; len]; rays];
        let mut res = vec![vec![0.0; len]; rays];
        for ray in 0..rays {
            for k in 0..len {
                let r = k as f64 * radial_step;
                let d1 = coeffs.radial_d1(&coeffs.phi[i], ray, k);
                dphi[ray][k] = d1;
                let half_dlog = if k < coeffs.dlog_theta[ray].len() {
                    0.5 * r * coeffs.dlog_theta[ray][k]
                } else {
                    0.0
                };
                let transport =
                    i as f64 * coeffs.phi[i][ray][k] + r * d1 + half_dlog * coeffs.phi[i][ray][k];
                res[ray][k] = if i == 0 {
                    transport
                } else {
                    transport + coeffs.lap[i - 1][ray][k]
                };
            }
        }
        coeffs.dphi.push(dphi);
        coeffs.res.push(res);
    }
    Ok(coeffs)
}

/// Coefficient tables for the fiber through the geometry anchor.
pub fn heat_coefficients(
    geom: &FiberGeometry,
    order: usize,
    opts: &HeatOptions,
) -> Result<HeatCoefficients, HeatError> {
    match geom.q {
        1 => {
            let step = opts.radial_step();
            let nodes =
                ((opts.rho0 + (2.0 * (order as f64 + 1.0) + 6.0) * step) / step).ceil() as usize
                    + 1;
            let theta = vec![vec![1.0; nodes]; 2];
            build_coefficients(1, order, step, theta, None)
        }
        _ => {
            let fan = geom.fan_at(&[0.0, 0.0])?;
            coefficients_on_fan(&fan, order)
        }
    }
}

fn coefficients_on_fan(fan: &GeodesicFan, order: usize) -> Result<HeatCoefficients, HeatError> {
    build_coefficients(
        2,
        order,
        fan.radial_step,
        fan.theta.clone(),
        Some((fan.jacobi.clone(), fan.jacobi_d.clone())),
    )
}

/// The truncated parametrix over one fiber geometry, with per-row
/// coefficient tables. Rows of a one-dimensional fiber share the unit
/// tables (they are constants there); two-dimensional rows are served from
/// a cache keyed by the fan snap grid.
pub struct ParametrixKernel {
    pub geom: Arc<FiberGeometry>,
    pub order: usize,
    pub rho0: f64,
    coeffs: Mutex<BTreeMap<[i64; 2], Arc<HeatCoefficients>>>,
    line: Option<Arc<HeatCoefficients>>,
}

impl std::fmt::Debug for ParametrixKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ParametrixKernel")
            .field("order", &self.order)
            .field("rho0", &self.rho0)
            .field("geom", &self.geom)
            .finish()
    }
}

impl ParametrixKernel {
    pub fn new(geom: Arc<FiberGeometry>, opts: &HeatOptions) -> Result<Self, HeatError> {
        let order = opts.order;
        if order as f64 <= geom.q as f64 / 2.0 {
            return Err(HeatError::OrderTooLow { order, q: geom.q });
        }
        let line = if geom.q == 1 {
            Some(Arc::new(heat_coefficients(&geom, order, opts)?))
        } else {
            None
        };
        Ok(ParametrixKernel {
            geom,
            order,
            rho0: opts.rho0,
            coeffs: Mutex::new(BTreeMap::new()),
            line,
        })
    }

    pub fn coefficients_at(&self, row: &[f64]) -> Result<Arc<HeatCoefficients>, HeatError> {
        if let Some(line) = &self.line {
            return Ok(line.clone());
        }
        let snapped = self.geom.snapped_row(row);
        let key = [snapped[0].to_bits() as i64, snapped[1].to_bits() as i64];
        if let Some(c) = self.coeffs.lock().unwrap().get(&key) {
            return Ok(c.clone());
        }
        let fan = self.geom.fan_at(row)?;
        let built = Arc::new(coefficients_on_fan(&fan, self.order)?);
        self.coeffs.lock().unwrap().insert(key, built.clone());
        Ok(built)
    }

    /// Polar position of the offset `g` relative to the unit at `row`:
    /// distance plus the angular slot used for table lookups. `None` means
    /// beyond the tabulated radius, where every part vanishes.
    fn polar(&self, row: &[f64], g: &[f64]) -> Option<(f64, f64)> {
        match self.geom.q {
            1 => {
                let d = self.geom.dist_to_unit(row, g)?;
                Some((d, if g[0] >= 0.0 { 0.0 } else { std::f64::consts::PI }))
            }
            _ => {
                let fan = self.geom.fan_at(row).ok()?;
                let center = self.geom.snapped_row(row);
                let h_c = self.geom.h_at(&center);
                let target = [center[0] + g[0], center[1] + g[1]];
                fan.polar_of([center[0], center[1]], h_c, target)
            }
        }
    }

    fn table_at(coeffs: &HeatCoefficients, table: &[Vec<f64>], d: f64, omega: f64) -> f64 {
        if coeffs.rays == 2 {
            let ray = if omega.rem_euclid(2.0 * std::f64::consts::PI)
                < std::f64::consts::FRAC_PI_2
                || omega.rem_euclid(2.0 * std::f64::consts::PI)
                    > 3.0 * std::f64::consts::FRAC_PI_2
            {
                0
            } else {
                1
            };
            radial_interp(&table[ray], coeffs.radial_step, d)
        } else {
            // Radial 6-point Lagrange along each of the four neighbouring
            // rays, then periodic 4-point Lagrange across them.
            let step_ang = 2.0 * std::f64::consts::PI / coeffs.rays as f64;
            let apos = omega.rem_euclid(2.0 * std::f64::consts::PI) / step_ang;
            let a0 = apos.floor() as isize - 1;
            let mut acc = 0.0;
            for a in 0..4 {
                let ja = a0 + a as isize;
                let mut ell = 1.0;
                for b in 0..4 {
                    if b != a {
                        let jb = a0 + b as isize;
                        ell *= (apos - jb as f64) / (ja as f64 - jb as f64);
                    }
                }
                let ray = ja.rem_euclid(coeffs.rays as isize) as usize;
                acc += ell * radial_interp(&table[ray], coeffs.radial_step, d);
            }
            acc
        }
    }

    /// Evaluate one part of the parametrix at the arrow `(row, g)` and
    /// time `t`.
    pub fn eval_part(&self, row: &[f64], g: &[f64], t: f64, part: Part) -> f64 {
        let coeffs = self
            .coefficients_at(row)
            .expect("coefficient tables failed during evaluation");
        let Some((d, omega)) = self.polar(row, g) else {
            return 0.0;
        };
        self.part_core(&coeffs, d, omega, t, part, false)
    }

    /// Same, with the Gaussian factor divided out. Quadratures that carry
    /// `exp(-d^2/4t)` in their own weights (the Hermite path) use this so
    /// the spike never has to be resolved numerically.
    pub fn eval_part_nogauss(&self, row: &[f64], g: &[f64], t: f64, part: Part) -> f64 {
        let coeffs = self
            .coefficients_at(row)
            .expect("coefficient tables failed during evaluation");
        let Some((d, omega)) = self.polar(row, g) else {
            return 0.0;
        };
        self.part_core(&coeffs, d, omega, t, part, true)
    }

    fn part_at(&self, coeffs: &HeatCoefficients, d: f64, omega: f64, t: f64, part: Part) -> f64 {
        self.part_core(coeffs, d, omega, t, part, false)
    }

    /// Shared core: everything is a function of the polar position.
    fn part_core(
        &self,
        coeffs: &HeatCoefficients,
        d: f64,
        omega: f64,
        t: f64,
        part: Part,
        drop_gaussian: bool,
    ) -> f64 {
        if d >= self.rho0 {
            return 0.0;
        }
        let q = self.geom.q as f64;
        let jet = cutoff_jet(d / self.rho0);
        if jet.value == 0.0 && jet.d1 == 0.0 && part != Part::Remainder {
            return 0.0;
        }
        let gauss = if drop_gaussian { 1.0 } else { (-d * d / (4.0 * t)).exp() };
        let pre = (4.0 * std::f64::consts::PI * t).powf(-q / 2.0) * gauss;
        let mut s_val = 0.0;
        let mut s_d1 = 0.0;
        let mut s_dt = 0.0;
        let mut tp = 1.0;
        for i in 0..=self.order {
            let phi = Self::table_at(coeffs, &coeffs.phi[i], d, omega);
            s_val += tp * phi;
            if part != Part::Value {
                let dphi = Self::table_at(coeffs, &coeffs.dphi[i], d, omega);
                s_d1 += tp * dphi;
                if i >= 1 {
                    s_dt += i as f64 * tp / t * phi;
                }
            }
            tp *= t;
        }
        match part {
            Part::Value => jet.value * pre * s_val,
            Part::TimeDerivative => {
                jet.value * pre * ((d * d / (4.0 * t * t) - q / (2.0 * t)) * s_val + s_dt)
            }
            Part::Remainder => {
                let mut resum = 0.0;
                let mut tp = 1.0 / t;
                for i in 0..=self.order {
                    resum += tp * Self::table_at(coeffs, &coeffs.res[i], d, omega);
                    tp *= t;
                }
                resum += t.powi(self.order as i32)
                    * Self::table_at(coeffs, &coeffs.lap[self.order], d, omega);
                let mut out = jet.value * pre * resum;
                if jet.d1 != 0.0 || jet.d2 != 0.0 {
                    let phi_d1 = jet.d1 / self.rho0;
                    let phi_d2 = jet.d2 / (self.rho0 * self.rho0);
                    let a_val = pre * s_val;
                    let a_d = pre * (-d / (2.0 * t) * s_val + s_d1);
                    let mut lambda = 0.0;
                    if q > 1.5 {
                        lambda += (q - 1.0) / d;
                    }
                    lambda += Self::table_at(coeffs, &coeffs.dlog_theta, d, omega);
                    let lap_phi = -(phi_d2 + lambda * phi_d1);
                    out += lap_phi * a_val - 2.0 * phi_d1 * a_d;
                }
                out
            }
        }
    }

    /// Upper envelope `amp * exp(-d^2 / four_t)` for one part at time `t`,
    /// measured on the coefficient tables.
    pub fn envelope(&self, row: &[f64], t: f64, part: Part) -> (f64, f64) {
        let coeffs = self
            .coefficients_at(row)
            .expect("coefficient tables failed during envelope measurement");
        let four_t = 8.0 * t;
        let mut amp = 0.0f64;
        let probes = 80;
        let omegas: &[f64] = if coeffs.rays == 2 {
            &[0.0, std::f64::consts::PI]
        } else {
            &[0.0, 0.9, 1.8, 2.7, 3.6, 4.5, 5.4]
        };
        for &omega in omegas {
            for k in 0..=probes {
                let d = self.rho0 * k as f64 / probes as f64;
                let v = self.part_at(&coeffs, d, omega, t, part);
                if v != 0.0 {
                    // In log space: v carries exp(-d^2/4t), so the product
                    // is finite even where the compensating factor alone
                    // would overflow.
                    let w = v.abs().ln() + d * d / four_t;
                    if w < 700.0 {
                        amp = amp.max(w.exp());
                    }
                }
            }
        }
        (1.3 * amp + 1e-300, four_t)
    }
}
