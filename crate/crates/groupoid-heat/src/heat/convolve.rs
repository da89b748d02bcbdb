//! Reduced convolution of kernel factors over one fiber.
//!
//! In reduced form the groupoid convolution of `k0` against `k1` at the
//! arrow `(row, g)` is
//!
//! `(k0 * k1)(row, g) = int k0(row + s, g - s) k1(row, s) w(row + s) ds`
//!
//! with `w` the fiber density. The inner kernel keeps the outer row, so a
//! whole row of the product is one windowed quadrature against a fixed
//! slice of `k1`. Windows come from the factors' envelopes and supports;
//! the leftover tail is sized against the configured budget, and a window
//! that cannot fit the geometry tables is an error rather than a silent
//! truncation.
//!
//! Very short-time analytic left factors get a dedicated path: the
//! substitution `u(row + s) = u(row + g) - 2 sqrt(eps) x` turns the spike
//! into a Gauss-Hermite weight, with the smooth part of the parametrix
//! evaluated without its Gaussian. That keeps the late time nodes of the
//! series integrals exact long after a fixed grid stops resolving them.

use std::sync::Arc;

use crate::models::Arrow;
use crate::util::quad::{composite_gauss_legendre, gauss_hermite};

use super::geometry::FiberGeometry;
use super::parametrix::{ParametrixKernel, Part};
use super::{HeatError, HeatOptions};

/// A kernel factor in reduced form.
pub trait FiberMap: Sync {
    fn q(&self) -> usize;
    fn eval(&self, row: &[f64], g: &[f64]) -> f64;
    /// Envelope `(amp, four_t)`: the factor is bounded by
    /// `amp * exp(-d^2 / four_t)` in the fiber distance `d` to the unit.
    /// `four_t` may be infinite for flat envelopes.
    fn envelope(&self) -> (f64, f64);
    /// Metric support radius around the unit; infinite when unbounded.
    fn support(&self) -> f64;
}

/// Uniform symmetric offset grid (per axis).
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetGrid {
    pub lo: f64,
    pub step: f64,
    pub n: usize,
}

impl OffsetGrid {
    pub fn centered(radius: f64, step: f64) -> Self {
        let half = (radius / step).ceil() as usize;
        OffsetGrid { lo: -(half as f64) * step, step, n: 2 * half + 1 }
    }

    pub fn value(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step
    }

    pub fn extent(&self) -> f64 {
        (self.n - 1) as f64 * self.step / 2.0
    }

    /// Weights of local 6-point Lagrange interpolation at `x`; returns the
    /// starting index. `None` when `x` is outside the grid.
    fn lagrange6(&self, x: f64) -> Option<(usize, [f64; 6])> {
        let pos = (x - self.lo) / self.step;
        if pos < -0.5 || pos > (self.n - 1) as f64 + 0.5 {
            return None;
        }
        if self.n < 6 {
            return None;
        }
        let mut i0 = pos.floor() as isize - 2;
        i0 = i0.clamp(0, self.n as isize - 6);
        let i0 = i0 as usize;
        let mut w = [0.0; 6];
        for a in 0..6 {
            let xa = (i0 + a) as f64;
            let mut ell = 1.0;
            for b in 0..6 {
                if b != a {
                    let xb = (i0 + b) as f64;
                    ell *= (pos - xb) / (xa - xb);
                }
            }
            w[a] = ell;
        }
        Some((i0, w))
    }

    fn lagrange4(&self, x: f64) -> Option<(usize, [f64; 4])> {
        let pos = (x - self.lo) / self.step;
        if pos < -0.5 || pos > (self.n - 1) as f64 + 0.5 || self.n < 4 {
            return None;
        }
        let mut i0 = pos.floor() as isize - 1;
        i0 = i0.clamp(0, self.n as isize - 4);
        let i0 = i0 as usize;
        let mut w = [0.0; 4];
        for a in 0..4 {
            let xa = (i0 + a) as f64;
            let mut ell = 1.0;
            for b in 0..4 {
                if b != a {
                    let xb = (i0 + b) as f64;
                    ell *= (pos - xb) / (xa - xb);
                }
            }
            w[a] = ell;
        }
        Some((i0, w))
    }
}

/// A kernel slice over one row, sampled on an offset grid. Values between
/// nodes come from local Lagrange interpolation; outside the grid the
/// kernel is treated as zero.
#[derive(Debug, Clone)]
pub struct RowKernel {
    pub geom: Arc<FiberGeometry>,
    pub row: Vec<f64>,
    pub grid: OffsetGrid,
    /// q = 1: `values[i]`; q = 2: row-major `values[i * n + j]` with `i`
    /// indexing the first offset axis.
    pub values: Vec<f64>,
    /// Metric support bound, set by whoever assembles the kernel.
    pub support: f64,
}

impl RowKernel {
    pub fn zero(geom: Arc<FiberGeometry>, row: &[f64], grid: OffsetGrid) -> Self {
        let len = if geom.q == 1 { grid.n } else { grid.n * grid.n };
        RowKernel {
            geom,
            row: row.to_vec(),
            grid,
            values: vec![0.0; len],
            support: f64::INFINITY,
        }
    }

    pub fn from_map(
        geom: Arc<FiberGeometry>,
        row: &[f64],
        grid: OffsetGrid,
        map: &dyn FiberMap,
    ) -> Self {
        let mut out = RowKernel::zero(geom, row, grid);
        match out.geom.q {
            1 => {
                for i in 0..out.grid.n {
                    out.values[i] = map.eval(row, &[out.grid.value(i)]);
                }
            }
            _ => {
                for i in 0..out.grid.n {
                    for j in 0..out.grid.n {
                        out.values[i * out.grid.n + j] =
                            map.eval(row, &[out.grid.value(i), out.grid.value(j)]);
                    }
                }
            }
        }
        out.support = map.support();
        out
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Largest magnitude on the outermost two node layers; a healthy
    /// assembled kernel has decayed to noise there.
    pub fn edge_sup(&self) -> f64 {
        let n = self.grid.n;
        let mut m = 0.0f64;
        match self.geom.q {
            1 => {
                for i in [0, 1, n - 2, n - 1] {
                    m = m.max(self.values[i].abs());
                }
            }
            _ => {
                for i in 0..n {
                    for j in 0..n {
                        if i <= 1 || j <= 1 || i >= n - 2 || j >= n - 2 {
                            m = m.max(self.values[i * n + j].abs());
                        }
                    }
                }
            }
        }
        m
    }

    pub fn axpy(&mut self, c: f64, other: &RowKernel) {
        assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.values {
            *v *= c;
        }
    }
}

impl FiberMap for RowKernel {
    fn q(&self) -> usize {
        self.geom.q
    }

    fn eval(&self, _row: &[f64], g: &[f64]) -> f64 {
        match self.geom.q {
            1 => {
                let Some((i0, w)) = self.grid.lagrange6(g[0]) else {
                    return 0.0;
                };
                let mut acc = 0.0;
                for a in 0..6 {
                    acc += w[a] * self.values[i0 + a];
                }
                acc
            }
            _ => {
                let Some((i0, wi)) = self.grid.lagrange4(g[0]) else {
                    return 0.0;
                };
                let Some((j0, wj)) = self.grid.lagrange4(g[1]) else {
                    return 0.0;
                };
                let n = self.grid.n;
                let mut acc = 0.0;
                for a in 0..4 {
                    let base = (i0 + a) * n;
                    let mut inner = 0.0;
                    for b in 0..4 {
                        inner += wj[b] * self.values[base + j0 + b];
                    }
                    acc += wi[a] * inner;
                }
                acc
            }
        }
    }

    fn envelope(&self) -> (f64, f64) {
        (self.sup().max(1e-300), f64::INFINITY)
    }

    fn support(&self) -> f64 {
        let chart = self.grid.extent() * (self.geom.q as f64).sqrt();
        (chart * self.geom.h_max().sqrt()).min(self.support)
    }
}

/// One analytic factor of the parametrix at a fixed time.
#[derive(Debug, Clone)]
pub struct ParametrixPiece {
    pub kernel: Arc<ParametrixKernel>,
    pub t: f64,
    pub part: Part,
    amp: f64,
    four_t: f64,
}

impl ParametrixPiece {
    /// `probe_row` anchors the envelope measurement; any row of the working
    /// window does.
    pub fn new(kernel: Arc<ParametrixKernel>, t: f64, part: Part, probe_row: &[f64]) -> Self {
        let (amp, four_t) = kernel.envelope(probe_row, t, part);
        ParametrixPiece { kernel, t, part, amp, four_t }
    }
}

impl FiberMap for ParametrixPiece {
    fn q(&self) -> usize {
        self.kernel.geom.q
    }

    fn eval(&self, row: &[f64], g: &[f64]) -> f64 {
        self.kernel.eval_part(row, g, self.t, self.part)
    }

    fn envelope(&self) -> (f64, f64) {
        (self.amp, self.four_t)
    }

    fn support(&self) -> f64 {
        self.kernel.rho0
    }
}

/// Exact Gaussian in the fiber distance; the flat-case comparison kernel.
#[derive(Debug, Clone)]
pub struct GaussianKernel {
    pub geom: Arc<FiberGeometry>,
    pub t: f64,
}

impl FiberMap for GaussianKernel {
    fn q(&self) -> usize {
        self.geom.q
    }

    fn eval(&self, row: &[f64], g: &[f64]) -> f64 {
        let Some(d) = self.geom.dist_to_unit(row, g) else {
            return 0.0;
        };
        (4.0 * std::f64::consts::PI * self.t).powf(-(self.geom.q as f64) / 2.0)
            * (-d * d / (4.0 * self.t)).exp()
    }

    fn envelope(&self) -> (f64, f64) {
        (
            (4.0 * std::f64::consts::PI * self.t).powf(-(self.geom.q as f64) / 2.0),
            4.0 * self.t,
        )
    }

    fn support(&self) -> f64 {
        f64::INFINITY
    }
}

/// Smooth compactly supported test function, constant across rows.
#[derive(Debug, Clone)]
pub struct BumpKernel {
    pub geom: Arc<FiberGeometry>,
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

impl FiberMap for BumpKernel {
    fn q(&self) -> usize {
        self.geom.q
    }

    fn eval(&self, _row: &[f64], g: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for (gi, ci) in g.iter().zip(&self.center) {
            r2 += (gi - ci) * (gi - ci);
        }
        // cutoff(u) is 1 below 1/2; rescale so the bump peaks only at the
        // center and dies at `width`.
        let u = 0.5 + 0.5 * r2.sqrt() / self.width;
        self.amplitude * crate::util::cutoff::cutoff(u)
    }

    fn envelope(&self) -> (f64, f64) {
        (self.amplitude.abs(), f64::INFINITY)
    }

    fn support(&self) -> f64 {
        let c: f64 = self.center.iter().map(|x| x * x).sum::<f64>().sqrt();
        (c + self.width) * self.geom.h_max().sqrt()
    }
}

/// Integration window for the `s` integral, per axis, in chart coordinates.
fn window_half_width(
    geom: &FiberGeometry,
    left: &dyn FiberMap,
    right: &dyn FiberMap,
    opts: &HeatOptions,
) -> Result<f64, HeatError> {
    let (amp_l, _) = left.envelope();
    let (amp_r, four_t_r) = right.envelope();
    let h_min_sqrt = geom.h_min().sqrt();
    let supported = right.support() / h_min_sqrt;
    let metric_radius = if four_t_r.is_finite() {
        let scale = (amp_l * amp_r).max(1e-30) * geom.h_max() * 10.0;
        let x = (scale / opts.tail_budget).max(std::f64::consts::E).ln() + 2.0;
        (four_t_r * x).sqrt() / h_min_sqrt
    } else {
        f64::INFINITY
    };
    let hw = supported.min(metric_radius);
    if !hw.is_finite() {
        return Err(HeatError::TruncationTail { estimate: f64::INFINITY, budget: opts.tail_budget });
    }
    Ok(hw)
}

/// The geometry tables must cover every position the quadrature touches.
fn check_reach(
    geom: &FiberGeometry,
    row: &[f64],
    hw: f64,
    grid_reach: f64,
) -> Result<(), HeatError> {
    let row_abs = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let needed = row_abs + hw.max(grid_reach);
    let have = geom.span - 0.1;
    if needed > have {
        return Err(HeatError::BoxTooSmall { needed, have });
    }
    Ok(())
}

fn panel_width(left: &dyn FiberMap, right: &dyn FiberMap, hw: f64) -> f64 {
    let (_, ft_l) = left.envelope();
    let (_, ft_r) = right.envelope();
    let mut feature: f64 = 0.5;
    if ft_l.is_finite() {
        feature = feature.min(0.75 * (ft_l / 2.0).sqrt());
    }
    if ft_r.is_finite() {
        feature = feature.min(0.75 * (ft_r / 2.0).sqrt());
    }
    feature.clamp(hw / 96.0, 0.5).min(hw.max(1e-6))
}

/// Convolve `left * right` at one row for every node of `grid`.
pub fn convolve_grid(
    geom: &Arc<FiberGeometry>,
    left: &dyn FiberMap,
    right: &dyn FiberMap,
    row: &[f64],
    grid: &OffsetGrid,
    opts: &HeatOptions,
) -> Result<RowKernel, HeatError> {
    let hw = window_half_width(geom, left, right, opts)?;
    let grid_reach = grid.lo.abs().max(grid.value(grid.n - 1).abs());
    check_reach(geom, row, hw, grid_reach)?;
    let panel = panel_width(left, right, hw);
    let floor = opts.min_axis_nodes.max(opts.panel_nodes).div_ceil(opts.panel_nodes);
    let mut n_panels = ((2.0 * hw) / panel).ceil() as usize;
    n_panels = n_panels.max(floor).min(96.max(floor));
    let rule =
        composite_gauss_legendre(-hw, hw, 2.0 * hw / n_panels as f64, opts.panel_nodes);

    let mut out = RowKernel::zero(geom.clone(), row, grid.clone());
    match geom.q {
        1 => {
            let nodes = rule.nodes.len();
            let mut slice = Vec::with_capacity(nodes);
            let mut pos = Vec::with_capacity(nodes);
            for k in 0..nodes {
                let s = rule.nodes[k];
                let p = row[0] + s;
                let rv = right.eval(row, &[s]);
                slice.push(rule.weights[k] * rv * geom.weight(&[p]));
                pos.push(p);
            }
            for i in 0..grid.n {
                let g = grid.value(i);
                let mut acc = 0.0;
                for k in 0..nodes {
                    if slice[k] != 0.0 {
                        acc += slice[k] * left.eval(&[pos[k]], &[g - rule.nodes[k]]);
                    }
                }
                out.values[i] = acc;
            }
        }
        _ => {
            let nodes = rule.nodes.len();
            let mut slice = Vec::with_capacity(nodes * nodes);
            let mut pos = Vec::with_capacity(nodes * nodes);
            for a in 0..nodes {
                for b in 0..nodes {
                    let s = [rule.nodes[a], rule.nodes[b]];
                    let p = [row[0] + s[0], row[1] + s[1]];
                    let rv = right.eval(row, &s);
                    let w = rule.weights[a] * rule.weights[b];
                    slice.push(w * rv * geom.weight(&p));
                    pos.push((p, s));
                }
            }
            for i in 0..grid.n {
                for j in 0..grid.n {
                    let g = [grid.value(i), grid.value(j)];
                    let mut acc = 0.0;
                    for k in 0..slice.len() {
                        if slice[k] != 0.0 {
                            let (p, s) = pos[k];
                            acc += slice[k] * left.eval(&p, &[g[0] - s[0], g[1] - s[1]]);
                        }
                    }
                    out.values[i * grid.n + j] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Short-time left parametrix factor against an arbitrary right factor,
/// by Gauss-Hermite in the arc length of the left Gaussian. Only the
/// one-dimensional path exists; short left times on sphere fibers are
/// handled by the endpoint correction of the series integrals instead.
pub fn convolve_grid_hermite(
    geom: &Arc<FiberGeometry>,
    kernel: &Arc<ParametrixKernel>,
    eps: f64,
    part: Part,
    right: &dyn FiberMap,
    row: &[f64],
    grid: &OffsetGrid,
    opts: &HeatOptions,
) -> Result<RowKernel, HeatError> {
    assert_eq!(geom.q, 1, "hermite path is one-dimensional");
    let rule = gauss_hermite(opts.hermite_nodes);
    let mut out = RowKernel::zero(geom.clone(), row, grid.clone());
    let sq = eps.sqrt();
    for i in 0..grid.n {
        let g = grid.value(i);
        let u_target = geom.arc(row[0] + g);
        let mut acc = 0.0;
        for k in 0..rule.nodes.len() {
            let u_s = u_target - 2.0 * sq * rule.nodes[k];
            let s = geom.coord_of_arc(u_s, row[0] + g);
            let sg = s - row[0];
            let rv = right.eval(row, &[sg]);
            if rv != 0.0 {
                let lv = kernel.eval_part_nogauss(&[s], &[row[0] + g - s], eps, part);
                acc += rule.weights[k] * lv * rv;
            }
        }
        // ds = -2 sqrt(eps) dx / sqrt(h); the fiber weight sqrt(h) cancels.
        out.values[i] = acc * 2.0 * sq;
    }
    Ok(out)
}

/// Groupoid convolution of two kernel factors at a single arrow.
pub fn convolve(
    k0: &dyn FiberMap,
    k1: &dyn FiberMap,
    geom: &Arc<FiberGeometry>,
    a: &Arrow,
    opts: &HeatOptions,
) -> Result<f64, HeatError> {
    let row = geom.row_of(&a.source);
    let g = a.offset(geom.q);
    let grid = OffsetGrid { lo: 0.0, step: 1.0, n: 1 };
    // A one-node grid reuses the windowed path; the node is the offset.
    let mut shifted = grid;
    shifted.lo = g[0];
    if geom.q == 1 {
        let out = convolve_grid(geom, k0, k1, &row, &shifted, opts)?;
        Ok(out.values[0])
    } else {
        // Tensor grids are square; evaluate the 2d offset by direct
        // quadrature instead.
        let hw = window_half_width(geom, k0, k1, opts)?;
        check_reach(geom, &row, hw, g.iter().fold(0.0f64, |m, v| m.max(v.abs())))?;
        let panel = panel_width(k0, k1, hw);
        let floor = opts.min_axis_nodes.max(opts.panel_nodes).div_ceil(opts.panel_nodes);
        let mut n_panels = ((2.0 * hw) / panel).ceil() as usize;
        n_panels = n_panels.max(floor).min(96.max(floor));
        let rule =
            composite_gauss_legendre(-hw, hw, 2.0 * hw / n_panels as f64, opts.panel_nodes);
        let mut acc = 0.0;
        for a_i in 0..rule.nodes.len() {
            for b_i in 0..rule.nodes.len() {
                let s = [rule.nodes[a_i], rule.nodes[b_i]];
                let rv = k1.eval(&row, &s);
                if rv != 0.0 {
                    let p = [row[0] + s[0], row[1] + s[1]];
                    let lv = k0.eval(&p, &[g[0] - s[0], g[1] - s[1]]);
                    acc += rule.weights[a_i] * rule.weights[b_i] * lv * rv * geom.weight(&p);
                }
            }
        }
        Ok(acc)
    }
}
