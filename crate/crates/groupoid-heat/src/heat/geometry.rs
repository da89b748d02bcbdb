//! Exact geometry of one fiber, anchored at a reference point.
//!
//! A fiber of the action stratum is a copy of the structure group, with the
//! metric pulled back from the base through the orbit map. In the global
//! translation chart the fiber through `base` is parameterized by the group
//! coordinate, the metric is `h(act(base, t)) * I`, and translating the
//! anchor only shifts the parameter. Positions along the fiber ("rows") are
//! measured in that chart, so one geometry object serves every kernel built
//! over the same orbit.
//!
//! For one-dimensional fibers everything reduces to the arc-length map `u`,
//! tabulated once on a uniform grid. For two-dimensional fibers each row
//! carries a geodesic fan: unit-speed rays with a Jacobi field each, giving
//! the exponential map, its inverse, and the radial volume density.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::models::{Arrow, BasePoint, Model};
use crate::util::ode::{integrate, OdeOptions};
use crate::util::quad::gauss_legendre_on;
use crate::util::stencil::{deriv1_c4, deriv2_c4};

use super::{HeatError, HeatOptions};

/// Geodesic fan anchored at one row: per-ray radial tables of the
/// exponential map `xi`, the Jacobi field `J`, and the density `theta = J/r`.
#[derive(Debug, Clone)]
pub struct GeodesicFan {
    pub rays: usize,
    pub radial_step: f64,
    pub radial_nodes: usize,
    /// `xi[ray][node]`: absolute chart coordinates of the ray point.
    pub xi: Vec<Vec<[f64; 2]>>,
    pub jacobi: Vec<Vec<f64>>,
    pub jacobi_d: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
}

impl GeodesicFan {
    pub fn r_max(&self) -> f64 {
        (self.radial_nodes - 1) as f64 * self.radial_step
    }

    fn ray_angle(&self, ray: usize) -> f64 {
        2.0 * std::f64::consts::PI * ray as f64 / self.rays as f64
    }

    /// Interpolate a per-ray radial table at `(r, omega)`: 6-point Lagrange
    /// radially, 4-point periodic Lagrange across rays.
    pub fn interp(&self, table: &[Vec<f64>], r: f64, omega: f64) -> f64 {
        let pos = r / self.radial_step;
        let mut i0 = pos.floor() as isize - 2;
        i0 = i0.clamp(0, self.radial_nodes as isize - 6);
        let i0 = i0 as usize;
        let step_ang = 2.0 * std::f64::consts::PI / self.rays as f64;
        let apos = omega.rem_euclid(2.0 * std::f64::consts::PI) / step_ang;
        let a0 = apos.floor() as isize - 1;
        let mut acc = 0.0;
        for a in 0..4 {
            let ja = a0 + a as isize;
            let mut ell_a = 1.0;
            for b in 0..4 {
                if b != a {
                    let jb = a0 + b as isize;
                    ell_a *= (apos - jb as f64) / (ja as f64 - jb as f64);
                }
            }
            let ray = (ja.rem_euclid(self.rays as isize)) as usize;
            let mut radial = 0.0;
            for p in 0..6 {
                let xp = (i0 + p) as f64;
                let mut ell_p = 1.0;
                for qn in 0..6 {
                    if qn != p {
                        let xq = (i0 + qn) as f64;
                        ell_p *= (pos - xq) / (xp - xq);
                    }
                }
                radial += ell_p * table[ray][i0 + p];
            }
            acc += ell_a * radial;
        }
        acc
    }

    fn interp_xi(&self, r: f64, omega: f64) -> [f64; 2] {
        let step_ang = 2.0 * std::f64::consts::PI / self.rays as f64;
        let apos = omega.rem_euclid(2.0 * std::f64::consts::PI) / step_ang;
        let a0 = apos.floor() as isize - 1;
        let pos = r / self.radial_step;
        let mut i0 = pos.floor() as isize - 2;
        i0 = i0.clamp(0, self.radial_nodes as isize - 6);
        let i0 = i0 as usize;
        let mut acc = [0.0, 0.0];
        for a in 0..4 {
            let ja = a0 + a as isize;
            let mut ell_a = 1.0;
            for b in 0..4 {
                if b != a {
                    let jb = a0 + b as isize;
                    ell_a *= (apos - jb as f64) / (ja as f64 - jb as f64);
                }
            }
            let ray = (ja.rem_euclid(self.rays as isize)) as usize;
            for p in 0..6 {
                let xp = (i0 + p) as f64;
                let mut ell_p = 1.0;
                for qn in 0..6 {
                    if qn != p {
                        let xq = (i0 + qn) as f64;
                        ell_p *= (pos - xq) / (xp - xq);
                    }
                }
                for c in 0..2 {
                    acc[c] += ell_a * ell_p * self.xi[ray][i0 + p][c];
                }
            }
        }
        acc
    }

    /// Invert the exponential map: chart displacement `target` (relative to
    /// the fan center) to polar `(r, omega)`. Returns `None` when the point
    /// lies beyond the tabulated radius.
    pub fn polar_of(&self, center: [f64; 2], h_center: f64, target: [f64; 2]) -> Option<(f64, f64)> {
        let dx = [target[0] - center[0], target[1] - center[1]];
        let euc = (dx[0] * dx[0] + dx[1] * dx[1]).sqrt();
        if euc == 0.0 {
            return Some((0.0, 0.0));
        }
        let mut r = euc * h_center.sqrt();
        let mut omega = dx[1].atan2(dx[0]);
        if r > self.r_max() {
            return None;
        }
        // Newton on the interpolated exponential map with a finite
        // difference Jacobian. Interpolation kinks can stall the iteration
        // near machine precision, so anything below 1e-10 is accepted.
        let fd = 1e-5;
        let mut last_res = f64::INFINITY;
        for it in 0..40 {
            let cur = self.interp_xi(r, omega);
            let f = [cur[0] - target[0], cur[1] - target[1]];
            let res = (f[0] * f[0] + f[1] * f[1]).sqrt();
            if res < 1e-12 || (res < 1e-10 && res >= last_res) || (it == 39 && res < 1e-9) {
                return Some((r, omega.rem_euclid(2.0 * std::f64::consts::PI)));
            }
            last_res = res;
            let rp = self.interp_xi((r + fd).min(self.r_max()), omega);
            let rm = self.interp_xi((r - fd).max(0.0), omega);
            let op = self.interp_xi(r, omega + fd);
            let om = self.interp_xi(r, omega - fd);
            let j00 = (rp[0] - rm[0]) / (fd.min(self.r_max() - r) + fd.min(r));
            let j10 = (rp[1] - rm[1]) / (fd.min(self.r_max() - r) + fd.min(r));
            let j01 = (op[0] - om[0]) / (2.0 * fd);
            let j11 = (op[1] - om[1]) / (2.0 * fd);
            let det = j00 * j11 - j01 * j10;
            if det.abs() < 1e-14 {
                return None;
            }
            let dr = (f[0] * j11 - f[1] * j01) / det;
            let dw = (f[1] * j00 - f[0] * j10) / det;
            r -= dr;
            omega -= dw;
            if !(0.0..=self.r_max()).contains(&r) {
                if r < 0.0 && r > -1e-9 {
                    r = 0.0;
                } else if r > self.r_max() {
                    return None;
                } else {
                    r = r.clamp(0.0, self.r_max());
                }
            }
        }
        None
    }
}

/// Geometry of the fiber through `base`, with per-row tables cached behind
/// a mutex. Cached values are pure functions of the row, so sharing across
/// threads cannot change any result.
pub struct FiberGeometry {
    pub model: Model,
    pub base: BasePoint,
    pub q: usize,
    /// Half-width of the row/offset window covered by the tables.
    pub span: f64,
    base_action: Vec<f64>,
    /// q = 1: arc length at uniform chart nodes over `[-span, span]`.
    u_step: f64,
    u_table: Vec<f64>,
    /// q = 2: fan cache keyed by the row snapped to the radial step.
    fans: Mutex<BTreeMap<[i64; 2], Arc<GeodesicFan>>>,
    fan_rays: usize,
    fan_radial_step: f64,
    fan_r_max: f64,
    fan_snap: f64,
    ode: OdeOptions,
    h_min: f64,
    h_max: f64,
}

impl std::fmt::Debug for FiberGeometry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FiberGeometry")
            .field("model", &self.model.id.name())
            .field("base", &self.base)
            .field("q", &self.q)
            .field("span", &self.span)
            .finish()
    }
}

impl FiberGeometry {
    pub fn new(model: &Model, base: &BasePoint, opts: &HeatOptions) -> Result<Self, HeatError> {
        // The source fiber through an action-stratum point is the open
        // stratum itself; its dimension is the isotropy rank plus the pair
        // part. Only the purely isotropic models stay desk-sized.
        let q = model.q() + model.p();
        if q > 2 {
            return Err(HeatError::UnsupportedFiber { model: model.id.name(), q });
        }
        // Rows live in the box; offsets reach another box radius out, and
        // finite difference stencils poke a little past that.
        let span = 2.0 * opts.box_radius() + opts.rho0 + 10.0 * opts.grid_step;
        let base_action = model.action_coords(base);

        let u_step = opts.radial_step();
        let mut u_table = Vec::new();
        if q == 1 {
            let half = (span / u_step).ceil() as usize;
            let n = 2 * half + 1;
            u_table = vec![0.0; n];
            let mut acc = 0.0;
            for i in half..n - 1 {
                let a = (i as f64 - half as f64) * u_step;
                let rule = gauss_legendre_on(a, a + u_step, 8);
                acc += rule.integrate(|t| model.h(&model.act(base, &[t])).sqrt());
                u_table[i + 1] = acc;
            }
            acc = 0.0;
            for i in (0..half).rev() {
                let a = (i as f64 - half as f64) * u_step;
                let rule = gauss_legendre_on(a, a + u_step, 8);
                acc -= rule.integrate(|t| model.h(&model.act(base, &[t])).sqrt());
                u_table[i] = acc;
            }
        }

        // Metric bounds over the covered window, for conservative window
        // sizing in the convolution.
        let mut h_min = f64::INFINITY;
        let mut h_max = 0.0f64;
        let probes = 400;
        for i in 0..=probes {
            let frac = i as f64 / probes as f64 * 2.0 - 1.0;
            let g = match q {
                1 => vec![span * frac],
                _ => vec![span * frac, span * (1.0 - frac * frac).sqrt() * frac.signum()],
            };
            let h = model.h(&model.act(base, &g));
            h_min = h_min.min(h);
            h_max = h_max.max(h);
            if q == 2 {
                let h2 = model.h(&model.act(base, &[g[1], g[0]]));
                h_min = h_min.min(h2);
                h_max = h_max.max(h2);
            }
        }

        let fan_radial_step = opts.radial_step();
        let fan_r_max = opts.rho0 + (2.0 * (opts.order as f64 + 1.0) + 6.0) * fan_radial_step;
        Ok(FiberGeometry {
            model: model.clone(),
            base: *base,
            q,
            span,
            base_action,
            u_step,
            u_table,
            fans: Mutex::new(BTreeMap::new()),
            fan_rays: opts.rays,
            fan_radial_step,
            fan_r_max,
            fan_snap: fan_radial_step,
            ode: opts.ode.clone(),
            h_min,
            h_max,
        })
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    /// Chart position of the arrow source relative to the anchor.
    pub fn row_of(&self, x: &BasePoint) -> Vec<f64> {
        let a = self.model.action_coords(x);
        a.iter().zip(&self.base_action).map(|(ai, bi)| ai - bi).collect()
    }

    /// The point sitting at chart position `row`.
    pub fn point_at(&self, row: &[f64]) -> BasePoint {
        self.model.act(&self.base, row)
    }

    /// The arrow with source at `row` and offset `g`.
    pub fn arrow_at(&self, row: &[f64], g: &[f64]) -> Arrow {
        let mut arr = self.model.unit(&self.point_at(row));
        arr.g[..g.len()].copy_from_slice(g);
        arr
    }

    pub fn h_at(&self, pos: &[f64]) -> f64 {
        self.model.h(&self.point_at(pos))
    }

    /// Density of the fiber measure in the chart: `sqrt(det m)`.
    pub fn weight(&self, pos: &[f64]) -> f64 {
        self.h_at(pos).powf(self.q as f64 / 2.0)
    }

    /// Arc length along a one-dimensional fiber, measured from the anchor.
    /// Local 6-point Lagrange interpolation of the node-exact table.
    pub fn arc(&self, x: f64) -> f64 {
        debug_assert_eq!(self.q, 1);
        let n = self.u_table.len();
        let half = (n - 1) / 2;
        let pos = x / self.u_step + half as f64;
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
            acc += ell * self.u_table[i0 + a];
        }
        acc
    }

    /// Invert the arc-length map: the chart position whose arc length is
    /// `u`. Newton from `guess`; `u` is strictly monotone with derivative
    /// `sqrt(h)`, so a handful of steps reach machine precision.
    pub fn coord_of_arc(&self, u: f64, guess: f64) -> f64 {
        debug_assert_eq!(self.q, 1);
        let mut x = guess;
        for _ in 0..8 {
            let f = self.arc(x) - u;
            if f.abs() < 1e-13 {
                break;
            }
            x -= f / self.h_at(&[x]).sqrt();
        }
        x
    }

    /// Fiber distance between the points at chart positions `p` and `row`.
    /// `None` when the pair is beyond the tabulated exponential range
    /// (q = 2 only; one-dimensional fibers are globally tabulated).
    pub fn dist(&self, row: &[f64], p: &[f64]) -> Option<f64> {
        match self.q {
            1 => Some((self.arc(p[0]) - self.arc(row[0])).abs()),
            _ => {
                let fan = self.fan_at(row).ok()?;
                let center = self.snapped_row(row);
                let h_c = self.h_at(&center);
                fan.polar_of([center[0], center[1]], h_c, [p[0], p[1]]).map(|(r, _)| r)
            }
        }
    }

    /// Distance from the arrow `(row, g)` to the unit at its source.
    pub fn dist_to_unit(&self, row: &[f64], g: &[f64]) -> Option<f64> {
        match self.q {
            1 => Some((self.arc(row[0] + g[0]) - self.arc(row[0])).abs()),
            _ => {
                let p = [row[0] + g[0], row[1] + g[1]];
                self.dist(row, &p)
            }
        }
    }

    fn snap_key(&self, row: &[f64]) -> [i64; 2] {
        match self.q {
            1 => [0, 0],
            _ => [
                (row[0] / self.fan_snap).round() as i64,
                (row[1] / self.fan_snap).round() as i64,
            ],
        }
    }

    /// The row actually used for table lookups. Two-dimensional rows snap
    /// to the fan cache resolution; one-dimensional tables are exact in the
    /// row, so no snapping happens there.
    pub fn snapped_row(&self, row: &[f64]) -> Vec<f64> {
        match self.q {
            1 => row.to_vec(),
            _ => {
                let k = self.snap_key(row);
                vec![k[0] as f64 * self.fan_snap, k[1] as f64 * self.fan_snap]
            }
        }
    }

    /// Geodesic fan anchored at (the snapped version of) `row`.
    pub fn fan_at(&self, row: &[f64]) -> Result<Arc<GeodesicFan>, HeatError> {
        debug_assert_eq!(self.q, 2);
        let key = self.snap_key(row);
        if let Some(fan) = self.fans.lock().unwrap().get(&key) {
            return Ok(fan.clone());
        }
        let center = [key[0] as f64 * self.fan_snap, key[1] as f64 * self.fan_snap];
        let fan = Arc::new(self.build_fan(center)?);
        self.fans.lock().unwrap().insert(key, fan.clone());
        Ok(fan)
    }

    /// Conformal factor helpers in the chart plane, by centered differences
    /// of `h`; the models only expose `h` pointwise.
    fn grad_log_h(&self, pos: [f64; 2]) -> [f64; 2] {
        let fd = 1e-4;
        let mut out = [0.0; 2];
        for c in 0..2 {
            let mut vals = [0.0; 5];
            for (k, off) in (-2i32..=2).enumerate() {
                let mut p = pos;
                p[c] += off as f64 * fd;
                vals[k] = self.h_at(&p).ln();
            }
            out[c] = deriv1_c4(&vals, fd);
        }
        out
    }

    /// Gauss curvature of the conformal metric `h * I` at a chart point.
    pub fn curvature(&self, pos: [f64; 2]) -> f64 {
        let fd = 1e-3;
        let mut lap = 0.0;
        for c in 0..2 {
            let mut vals = [0.0; 5];
            for (k, off) in (-2i32..=2).enumerate() {
                let mut p = pos;
                p[c] += off as f64 * fd;
                vals[k] = self.h_at(&p).ln();
            }
            lap += deriv2_c4(&vals, fd);
        }
        -lap / (2.0 * self.h_at(&pos))
    }

    fn build_fan(&self, center: [f64; 2]) -> Result<GeodesicFan, HeatError> {
        let rays = self.fan_rays;
        assert!(rays % 2 == 0, "fan needs antipodal rays");
        let dr = self.fan_radial_step;
        let nodes = (self.fan_r_max / dr).ceil() as usize + 1;
        let h0 = self.h_at(&center);
        let mut xi = Vec::with_capacity(rays);
        let mut jacobi = Vec::with_capacity(rays);
        let mut jacobi_d = Vec::with_capacity(rays);
        let mut theta = Vec::with_capacity(rays);

        for ray in 0..rays {
            let omega = 2.0 * std::f64::consts::PI * ray as f64 / rays as f64;
            // State: xi, unit-speed velocity, Jacobi value and derivative.
            let y0 = [
                center[0],
                center[1],
                omega.cos() / h0.sqrt(),
                omega.sin() / h0.sqrt(),
                0.0,
                1.0,
            ];
            let span_limit = self.span;
            let rhs = |_r: f64, y: &[f64], dy: &mut [f64]| {
                let pos = [y[0], y[1]];
                let grad = self.grad_log_h(pos);
                // lambda = log(h) / 2; unit speed keeps |v|^2 = 1/h.
                let lam = [0.5 * grad[0], 0.5 * grad[1]];
                let v = [y[2], y[3]];
                let vlam = v[0] * lam[0] + v[1] * lam[1];
                let vv = v[0] * v[0] + v[1] * v[1];
                dy[0] = v[0];
                dy[1] = v[1];
                dy[2] = -2.0 * vlam * v[0] + lam[0] * vv;
                dy[3] = -2.0 * vlam * v[1] + lam[1] * vv;
                dy[4] = y[5];
                dy[5] = -self.curvature(pos) * y[4];
            };
            let mut opts = self.ode.clone();
            opts.dense = true;
            let sol = integrate(rhs, 0.0, (nodes - 1) as f64 * dr, &y0, &opts)?;
            let mut ray_xi = Vec::with_capacity(nodes);
            let mut ray_j = Vec::with_capacity(nodes);
            let mut ray_jd = Vec::with_capacity(nodes);
            let mut ray_th = Vec::with_capacity(nodes);
            let mut buf = vec![0.0; 6];
            for i in 0..nodes {
                let r = i as f64 * dr;
                sol.eval(r, &mut buf);
                if buf[0].abs() > span_limit || buf[1].abs() > span_limit {
                    return Err(HeatError::GeodesicEscape { ray, radius: r });
                }
                ray_xi.push([buf[0], buf[1]]);
                ray_j.push(buf[4]);
                ray_jd.push(buf[5]);
                ray_th.push(if i == 0 { 1.0 } else { buf[4] / r });
            }
            xi.push(ray_xi);
            jacobi.push(ray_j);
            jacobi_d.push(ray_jd);
            theta.push(ray_th);
        }

        Ok(GeodesicFan {
            rays,
            radial_step: dr,
            radial_nodes: nodes,
            xi,
            jacobi,
            jacobi_d,
            theta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_model, ModelId, ModelParams};
    use crate::util::quad::adaptive_simpson;

    fn geometry(name: &str, amp: f64, base: BasePoint) -> FiberGeometry {
        let id = ModelId::parse(name).unwrap();
        let mut params = ModelParams::defaults(id);
        params.h_amplitude = amp;
        let model = build_model(name, Some(params)).unwrap();
        FiberGeometry::new(&model, &base, &HeatOptions::default()).unwrap()
    }

    fn sphere_geometry(amp: f64) -> FiberGeometry {
        let id = ModelId::parse("stereo-sphere").unwrap();
        let mut params = ModelParams::defaults(id);
        params.h_amplitude = amp;
        let model = build_model("stereo-sphere", Some(params)).unwrap();
        let base = model.point_at_dist(0.9, 0.3);
        FiberGeometry::new(&model, &base, &HeatOptions::default().coarse_q2()).unwrap()
    }

    #[test]
    fn arc_length_matches_direct_quadrature() {
        let geom = geometry("parabolic-circle", 0.3, BasePoint::Circle { theta: 0.8 });
        for &x in &[-2.3, -1.1, -0.37, 0.0, 0.21, 0.9, 1.7, 2.9] {
            let direct = adaptive_simpson(
                &|t: f64| geom.model.h(&geom.model.act(&geom.base, &[t])).sqrt(),
                0.0,
                x,
                1e-13,
            );
            assert!(
                (geom.arc(x) - direct).abs() < 1e-11,
                "arc({x}) = {} vs {direct}",
                geom.arc(x)
            );
        }
    }

    #[test]
    fn rows_shift_with_the_action() {
        let geom = geometry("parabolic-circle", 0.3, BasePoint::Circle { theta: 0.8 });
        let y = geom.model.act(&geom.base, &[1.3]);
        let row = geom.row_of(&y);
        assert!((row[0] - 1.3).abs() < 1e-12);
        let back = geom.point_at(&row);
        assert!(geom.model.base_distance(&back, &y) < 1e-12);
    }

    #[test]
    fn distance_triangle_inequality_on_sampled_triples() {
        let geom = geometry("parabolic-circle", 0.3, BasePoint::Circle { theta: 0.8 });
        let pts = [-1.9, -0.8, -0.1, 0.4, 1.2, 2.4];
        for &a in &pts {
            for &b in &pts {
                for &c in &pts {
                    let dab = geom.dist(&[a], &[b]).unwrap();
                    let dbc = geom.dist(&[b], &[c]).unwrap();
                    let dac = geom.dist(&[a], &[c]).unwrap();
                    assert!(dac <= dab + dbc + 1e-6);
                }
            }
        }
    }

    #[test]
    fn flat_sphere_fan_is_euclidean() {
        let geom = sphere_geometry(0.0);
        let fan = geom.fan_at(&[0.0, 0.0]).unwrap();
        let center = geom.snapped_row(&[0.0, 0.0]);
        for ray in 0..fan.rays {
            let omega = 2.0 * std::f64::consts::PI * ray as f64 / fan.rays as f64;
            for i in 0..fan.radial_nodes {
                let r = i as f64 * fan.radial_step;
                let expect = [center[0] + r * omega.cos(), center[1] + r * omega.sin()];
                assert!((fan.xi[ray][i][0] - expect[0]).abs() < 1e-9);
                assert!((fan.xi[ray][i][1] - expect[1]).abs() < 1e-9);
                assert!((fan.jacobi[ray][i] - r).abs() < 1e-9);
                assert!((fan.theta[ray][i] - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn curved_fan_rays_keep_unit_speed() {
        let geom = sphere_geometry(0.2);
        let row = [0.3, -0.2];
        let fan = geom.fan_at(&row).unwrap();
        let dr = fan.radial_step;
        for ray in (0..fan.rays).step_by(5) {
            for i in 2..fan.radial_nodes - 2 {
                // Centered difference of xi along the ray approximates the
                // velocity; the metric norm of the velocity must be 1.
                let v = [
                    (fan.xi[ray][i + 1][0] - fan.xi[ray][i - 1][0]) / (2.0 * dr),
                    (fan.xi[ray][i + 1][1] - fan.xi[ray][i - 1][1]) / (2.0 * dr),
                ];
                let h = geom.h_at(&[fan.xi[ray][i][0], fan.xi[ray][i][1]]);
                let speed = (h * (v[0] * v[0] + v[1] * v[1])).sqrt();
                assert!((speed - 1.0).abs() < 1e-4, "ray {ray} node {i}: speed {speed}");
            }
        }
    }

    #[test]
    fn inverse_exponential_round_trip() {
        let geom = sphere_geometry(0.2);
        let row = [0.25, 0.1];
        let fan = geom.fan_at(&row).unwrap();
        let center = geom.snapped_row(&row);
        let h_c = geom.h_at(&center);
        for &(r, w) in &[(0.11, 0.3), (0.31, 2.2), (0.47, 4.0), (0.52, 5.9), (0.03, 1.0)] {
            let p = fan.interp_xi(r, w);
            let (ri, wi) = fan
                .polar_of([center[0], center[1]], h_c, p)
                .expect("inside table");
            assert!((ri - r).abs() < 1e-8, "radius {ri} vs {r}");
            let dw = (wi - w).rem_euclid(2.0 * std::f64::consts::PI);
            let dw = dw.min(2.0 * std::f64::consts::PI - dw);
            assert!(dw < 1e-6 / r.max(0.05), "angle {wi} vs {w}");
        }
    }

    #[test]
    fn fiber_distance_is_symmetric_on_sphere_fibers() {
        let geom = sphere_geometry(0.2);
        let pairs = [([0.0, 0.0], [0.3, 0.2]), ([0.25, -0.1], [0.05, 0.3])];
        for (a, b) in pairs {
            let dab = geom.dist(&a, &b).unwrap();
            let dba = geom.dist(&b, &a).unwrap();
            // Both rows sit on the fan grid here, so the only asymmetry is
            // table and solver error.
            assert!((dab - dba).abs() < 1e-6, "d(a,b)={dab} d(b,a)={dba}");
        }
    }

    #[test]
    fn cylinder_fibers_are_rejected() {
        let model = build_model("cylinder-product", None).unwrap();
        let base = model.point_at_dist(0.9, 0.4);
        match FiberGeometry::new(&model, &base, &HeatOptions::default()) {
            Err(HeatError::UnsupportedFiber { q, .. }) => assert_eq!(q, 3),
            other => panic!("expected UnsupportedFiber, got {other:?}"),
        }
    }

    #[test]
    fn weight_is_square_root_of_metric_determinant() {
        let geom = geometry("parabolic-circle", 0.3, BasePoint::Circle { theta: 0.8 });
        for &x in &[-1.0, 0.0, 0.7] {
            let h = geom.h_at(&[x]);
            assert!((geom.weight(&[x]) - h.sqrt()).abs() < 1e-14);
        }
        let geom2 = sphere_geometry(0.2);
        let h = geom2.h_at(&[0.1, 0.2]);
        assert!((geom2.weight(&[0.1, 0.2]) - h).abs() < 1e-14);
    }
}
