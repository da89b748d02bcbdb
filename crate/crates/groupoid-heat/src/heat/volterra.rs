//! The alternating Volterra correction series on top of the parametrix.
//!
//! With `G` the truncated parametrix and `R = (d/dt + Lap) G` its remainder,
//! the corrected kernel is
//!
//! `H = G + sum_k (-1)^k Q^(k)`,   `Q^(k)(t) = int_0^t G(t-s) R^(k)(s) ds`,
//!
//! where `R^(1) = R` and `R^(k+1)(s) = int_0^s R(s-u) R^(k)(u) du`, all
//! products being the reduced fiber convolution. Everything is organised
//! per row: the left factor of every convolution is analytic, so rows never
//! talk to each other and the whole series is a pipeline of row-kernel
//! integrals over Gauss-Legendre time nodes. Stage values are kept at one
//! master set of time nodes; inner integrals interpolate the previous stage
//! in time, which is accurate because every stage is smooth and vanishes to
//! increasing order at `s = 0`.
//!
//! The telescoping identity `(d/dt + Lap) H = (-1)^K R^(K+1)` is what makes
//! the truncation honest: the next, uncomputed stage *is* the heat residual
//! of the sum, and it is returned alongside the kernel so the residual can
//! be checked by finite differences instead of trusted.
//!
//! Time endpoints get special handling because `G(eps)` degenerates into a
//! spike. One-dimensional fibers switch to the Gauss-Hermite path once
//! `eps` drops below what the offset grid resolves; sphere fibers clip the
//! integral at `t - eps0` and add the identity-action correction
//! `eps0 * R^(k)(t)`, which is the coarse-grid compromise.

use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::util::quad::{gauss_legendre_on, Rule};
use crate::util::stencil::{deriv1_c4, deriv2_c4};

use super::convolve::{
    convolve_grid, convolve_grid_hermite, FiberMap, OffsetGrid, ParametrixPiece, RowKernel,
};
use super::geometry::FiberGeometry;
use super::parametrix::{ParametrixKernel, Part};
use super::{HeatError, HeatOptions};

/// Convergence bookkeeping of one series summation.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraDiagnostics {
    pub t: f64,
    pub k_max: usize,
    /// `sup |Q^(k)|` over rows and offsets, k = 1..=k_max. Consecutive
    /// entries bound the alternating-sum truncation error.
    pub term_sups: Vec<f64>,
    /// `sup |R^(k)(t)|`, k = 1..=k_max+1; the last entry is the sup of the
    /// exact heat residual of the reported kernel.
    pub stage_sups: Vec<f64>,
    /// `term_sups[k-1] * k! / t^k`; a bounded sequence is the factorial
    /// convergence signature.
    pub factorial_diag: Vec<f64>,
    /// True when the last term dropped below the tail budget.
    pub converged: bool,
}

fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, v| acc * v as f64)
}

impl VolterraDiagnostics {
    fn from_sups(t: f64, k_max: usize, term_sups: Vec<f64>, stage_sups: Vec<f64>, budget: f64) -> Self {
        let factorial_diag = term_sups
            .iter()
            .enumerate()
            .map(|(i, &s)| s * factorial(i + 1) / t.powi(i as i32 + 1))
            .collect();
        let converged = term_sups.last().map(|&s| s < budget).unwrap_or(false);
        VolterraDiagnostics { t, k_max, term_sups, stage_sups, factorial_diag, converged }
    }
}

/// The corrected kernel at one time over a set of rows, plus everything
/// needed to audit it: optional time derivative and the next (uncomputed)
/// series stage, which is its exact heat residual up to sign.
#[derive(Debug, Clone)]
pub struct FiberKernel {
    pub geom: Arc<FiberGeometry>,
    pub t: f64,
    pub k_max: usize,
    pub grid: OffsetGrid,
    pub rows: Vec<Vec<f64>>,
    pub corrected: Vec<RowKernel>,
    pub time_derivative: Option<Vec<RowKernel>>,
    /// `R^(k_max+1)(t)` per row; `(d/dt + Lap) corrected = (-1)^k_max` times
    /// this.
    pub next_stage: Vec<RowKernel>,
    pub diagnostics: VolterraDiagnostics,
}

/// Cutover time below which the parametrix factor of a time slice is too
/// narrow for the offset grid and endpoint handling takes over.
fn spike_eps(geom: &FiberGeometry, opts: &HeatOptions) -> f64 {
    let s = 1.5 * opts.grid_step * geom.h_max().sqrt();
    s * s
}

/// Lagrange coefficients of the nodes at evaluation point `x`.
fn lagrange_coeffs(nodes: &[f64], x: f64) -> Vec<f64> {
    let n = nodes.len();
    let mut w = vec![1.0; n];
    for a in 0..n {
        for b in 0..n {
            if a != b {
                w[a] *= (x - nodes[b]) / (nodes[a] - nodes[b]);
            }
        }
    }
    w
}

/// Interpolate a stage (row kernels at the master time nodes) to time `x`.
fn interp_stage(stage: &[RowKernel], masters: &[f64], x: f64) -> RowKernel {
    let w = lagrange_coeffs(masters, x);
    let mut out = stage[0].clone();
    out.scale(w[0]);
    for m in 1..stage.len() {
        out.axpy(w[m], &stage[m]);
    }
    out.support = stage[0].support;
    out
}

struct SeriesContext<'a> {
    kernel: &'a Arc<ParametrixKernel>,
    geom: &'a Arc<FiberGeometry>,
    grid: &'a OffsetGrid,
    masters: &'a Rule,
    t: f64,
    /// Endpoint clip (zero on one-dimensional fibers, which use the
    /// Hermite path instead).
    clip: f64,
    eps_hermite: f64,
    k_max: usize,
    want_dt: bool,
    opts: &'a HeatOptions,
}

struct RowOutcome {
    corrected: RowKernel,
    dt: Option<RowKernel>,
    next_stage: RowKernel,
    term_sups: Vec<f64>,
    stage_sups: Vec<f64>,
}

/// Convolve an analytic parametrix factor at time `eps` against a right
/// factor, choosing the endpoint-safe path when `eps` is tiny.
fn slice_convolve(
    ctx: &SeriesContext,
    part: Part,
    eps: f64,
    right: &dyn FiberMap,
    row: &[f64],
) -> Result<RowKernel, HeatError> {
    if ctx.geom.q == 1 && eps < ctx.eps_hermite {
        convolve_grid_hermite(ctx.geom, ctx.kernel, eps, part, right, row, ctx.grid, ctx.opts)
    } else {
        let piece = ParametrixPiece::new(ctx.kernel.clone(), eps, part, row);
        convolve_grid(ctx.geom, &piece, right, row, ctx.grid, ctx.opts)
    }
}

/// The right factor of a series convolution: analytic for the first stage,
/// interpolated master values afterwards.
enum RightFactor {
    Piece(ParametrixPiece),
    Grid(RowKernel),
}

impl RightFactor {
    fn as_map(&self) -> &dyn FiberMap {
        match self {
            RightFactor::Piece(p) => p,
            RightFactor::Grid(g) => g,
        }
    }
}

fn stage_right(
    ctx: &SeriesContext,
    row: &[f64],
    k: usize,
    cur: &[RowKernel],
    tau: f64,
) -> RightFactor {
    if k == 1 {
        RightFactor::Piece(ParametrixPiece::new(
            ctx.kernel.clone(),
            tau,
            Part::Remainder,
            row,
        ))
    } else {
        RightFactor::Grid(interp_stage(cur, &ctx.masters.nodes, tau))
    }
}

/// `R^(k+1)(sigma) = int_0^sigma R(sigma - tau) R^(k)(tau) dtau` for one row.
fn build_stage_at(
    ctx: &SeriesContext,
    row: &[f64],
    k: usize,
    cur: &[RowKernel],
    sigma: f64,
) -> Result<RowKernel, HeatError> {
    let upper = sigma - ctx.clip;
    let mut out = RowKernel::zero(ctx.geom.clone(), row, ctx.grid.clone());
    out.support = ((k + 1) as f64 * ctx.kernel.rho0).min(1e300);
    if upper <= 0.0 {
        return Ok(out);
    }
    let rule = gauss_legendre_on(0.0, upper, ctx.opts.time_nodes);
    for (i, &tau) in rule.nodes.iter().enumerate() {
        let right = stage_right(ctx, row, k, cur, tau);
        let c = slice_convolve(ctx, Part::Remainder, sigma - tau, right.as_map(), row)?;
        out.axpy(rule.weights[i], &c);
    }
    Ok(out)
}

/// Run the series at one row.
fn correct_row(ctx: &SeriesContext, row: &[f64]) -> Result<RowOutcome, HeatError> {
    let sample = |part: Part, time: f64| -> RowKernel {
        let piece = ParametrixPiece::new(ctx.kernel.clone(), time, part, row);
        RowKernel::from_map(ctx.geom.clone(), row, ctx.grid.clone(), &piece)
    };

    let mut corrected = sample(Part::Value, ctx.t);
    corrected.support = f64::INFINITY;
    let mut dt = ctx.want_dt.then(|| {
        let mut k = sample(Part::TimeDerivative, ctx.t);
        k.support = f64::INFINITY;
        k
    });

    // Current stage: R^(k) at the master nodes (gridded only from k = 2;
    // the first stage is evaluated analytically wherever needed) and at t.
    let mut cur: Vec<RowKernel> = Vec::new();
    let mut cur_t = sample(Part::Remainder, ctx.t);
    let mut term_sups = Vec::with_capacity(ctx.k_max);
    let mut stage_sups = vec![cur_t.sup()];
    let mut sign = -1.0;

    for k in 1..=ctx.k_max {
        // Q^(k) = int_0^t G(t - sigma) R^(k)(sigma) dsigma.
        let mut qk = RowKernel::zero(ctx.geom.clone(), row, ctx.grid.clone());
        for (j, &sigma) in ctx.masters.nodes.iter().enumerate() {
            let right = stage_right(ctx, row, k, &cur, sigma);
            let c = slice_convolve(ctx, Part::Value, ctx.t - sigma, right.as_map(), row)?;
            qk.axpy(ctx.masters.weights[j], &c);
        }
        if ctx.clip > 0.0 {
            // int_{t-eps0}^t G(t-sigma) R^(k)(sigma) dsigma, with G acting
            // as the identity over the sliver.
            qk.axpy(ctx.clip, &cur_t);
        }
        term_sups.push(qk.sup());
        corrected.axpy(sign, &qk);

        if let Some(dt) = dt.as_mut() {
            // d/dt Q^(k) = R^(k)(t) + int_0^t dG/dt (t - sigma) R^(k)(sigma).
            let mut dqk = cur_t.clone();
            for (j, &sigma) in ctx.masters.nodes.iter().enumerate() {
                let right = stage_right(ctx, row, k, &cur, sigma);
                let c =
                    slice_convolve(ctx, Part::TimeDerivative, ctx.t - sigma, right.as_map(), row)?;
                dqk.axpy(ctx.masters.weights[j], &c);
            }
            dt.axpy(sign, &dqk);
        }

        // Next stage: at t always (it becomes the residual of the final
        // sum), at the masters only while further terms are coming.
        let next_t = build_stage_at(ctx, row, k, &cur, ctx.t)?;
        if k < ctx.k_max {
            let mut next = Vec::with_capacity(ctx.masters.nodes.len());
            for &sigma in &ctx.masters.nodes {
                next.push(build_stage_at(ctx, row, k, &cur, sigma)?);
            }
            cur = next;
        }
        cur_t = next_t;
        stage_sups.push(cur_t.sup());
        sign = -sign;
    }

    Ok(RowOutcome {
        corrected,
        dt,
        next_stage: cur_t,
        term_sups,
        stage_sups,
    })
}

/// Sum the correction series at time `t` over the given rows.
///
/// `want_dt` also assembles the analytic time derivative of the sum, which
/// the finite-difference residual check needs. Rows are independent and run
/// in parallel; results are deterministic regardless of thread count.
pub fn volterra_sum(
    kernel: &Arc<ParametrixKernel>,
    rows: &[Vec<f64>],
    t: f64,
    k_max: usize,
    want_dt: bool,
    opts: &HeatOptions,
) -> Result<FiberKernel, HeatError> {
    assert!(k_max >= 1, "the series needs at least one correction term");
    let geom = kernel.geom.clone();
    let grid = OffsetGrid::centered(opts.box_radius(), opts.grid_step);
    let clip = if geom.q == 1 { 0.0 } else { spike_eps(&geom, opts) };
    assert!(t > 2.0 * clip, "time {t} too short for the endpoint clip {clip}");
    let masters = gauss_legendre_on(0.0, t - clip, opts.time_nodes);
    let ctx = SeriesContext {
        kernel,
        geom: &geom,
        grid: &grid,
        masters: &masters,
        t,
        clip,
        eps_hermite: spike_eps(&geom, opts),
        k_max,
        want_dt,
        opts,
    };

    let outcomes: Vec<RowOutcome> = rows
        .par_iter()
        .map(|row| correct_row(&ctx, row))
        .collect::<Result<Vec<_>, HeatError>>()?;

    let mut term_sups = vec![0.0f64; k_max];
    let mut stage_sups = vec![0.0f64; k_max + 1];
    for o in &outcomes {
        for (a, &b) in term_sups.iter_mut().zip(&o.term_sups) {
            *a = a.max(b);
        }
        for (a, &b) in stage_sups.iter_mut().zip(&o.stage_sups) {
            *a = a.max(b);
        }
    }
    let diagnostics =
        VolterraDiagnostics::from_sups(t, k_max, term_sups, stage_sups, opts.tail_budget);

    let mut corrected = Vec::with_capacity(outcomes.len());
    let mut next_stage = Vec::with_capacity(outcomes.len());
    let mut dts = want_dt.then(Vec::new);
    for o in outcomes {
        corrected.push(o.corrected);
        next_stage.push(o.next_stage);
        if let (Some(list), Some(d)) = (dts.as_mut(), o.dt) {
            list.push(d);
        }
    }

    Ok(FiberKernel {
        geom,
        t,
        k_max,
        grid,
        rows: rows.to_vec(),
        corrected,
        time_derivative: dts,
        next_stage,
        diagnostics,
    })
}

/// Row-interpolating view of a [`FiberKernel`], usable as a left factor in
/// further convolutions (semigroup checks, initial-condition tests). Rows
/// must be uniformly spaced; one-dimensional fibers only.
pub struct FiberKernelFamily<'a> {
    kernel: &'a FiberKernel,
    row0: f64,
    row_step: f64,
    amp: f64,
    four_t: f64,
}

impl<'a> FiberKernelFamily<'a> {
    fn new(kernel: &'a FiberKernel) -> Self {
        assert_eq!(kernel.geom.q, 1, "row families are one-dimensional");
        assert!(kernel.rows.len() >= 4, "row interpolation needs at least 4 rows");
        let row0 = kernel.rows[0][0];
        let row_step = kernel.rows[1][0] - row0;
        for (m, r) in kernel.rows.iter().enumerate() {
            let expect = row0 + m as f64 * row_step;
            assert!(
                (r[0] - expect).abs() < 1e-9,
                "rows must be uniformly spaced for interpolation"
            );
        }
        let four_t = 8.0 * kernel.t;
        let mut amp = 1e-300f64;
        for (r, rk) in kernel.rows.iter().zip(&kernel.corrected) {
            for i in 0..rk.grid.n {
                let g = rk.grid.value(i);
                let v = rk.values[i];
                if v != 0.0 {
                    if let Some(d) = kernel.geom.dist_to_unit(r, &[g]) {
                        let w = v.abs().ln() + d * d / four_t;
                        if w < 700.0 {
                            amp = amp.max(w.exp());
                        }
                    }
                }
            }
        }
        FiberKernelFamily { kernel, row0, row_step, amp: 1.3 * amp, four_t }
    }
}

impl FiberMap for FiberKernelFamily<'_> {
    fn q(&self) -> usize {
        1
    }

    fn eval(&self, row: &[f64], g: &[f64]) -> f64 {
        let n = self.kernel.rows.len();
        let pos = (row[0] - self.row0) / self.row_step;
        let mut m0 = pos.floor() as isize - 1;
        m0 = m0.clamp(0, n as isize - 4);
        let m0 = m0 as usize;
        let mut acc = 0.0;
        for a in 0..4 {
            let xa = (m0 + a) as f64;
            let mut ell = 1.0;
            for b in 0..4 {
                if b != a {
                    let xb = (m0 + b) as f64;
                    ell *= (pos - xb) / (xa - xb);
                }
            }
            acc += ell * self.kernel.corrected[m0 + a].eval(row, g);
        }
        acc
    }

    fn envelope(&self) -> (f64, f64) {
        (self.amp, self.four_t)
    }

    fn support(&self) -> f64 {
        let chart = self.kernel.grid.extent();
        chart * self.kernel.geom.h_max().sqrt()
    }
}

fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> io::Result<()> {
    for &x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> io::Result<Vec<f64>> {
    let mut buf = [0u8; 8];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

const KERNEL_MAGIC: &[u8; 8] = b"GHFKv01\0";

impl FiberKernel {
    pub fn row_index(&self, row: &[f64]) -> Option<usize> {
        self.rows.iter().position(|r| {
            r.iter().zip(row).all(|(a, b)| (a - b).abs() < 1e-12)
        })
    }

    /// Kernel value at a stored row and arbitrary offset.
    pub fn value(&self, row_idx: usize, g: &[f64]) -> f64 {
        self.corrected[row_idx].eval(&self.rows[row_idx], g)
    }

    /// Row-interpolating view for use as a convolution factor.
    pub fn family(&self) -> FiberKernelFamily<'_> {
        FiberKernelFamily::new(self)
    }

    /// Measured heat residual `(d/dt + Lap) H` on the offset grid of one
    /// row, with the Laplacian taken by fourth-order stencils of width
    /// `stride` grid steps. Boundary nodes are NaN. Requires the time
    /// derivative.
    pub fn residual_row(&self, row_idx: usize, stride: usize) -> Vec<f64> {
        let dt = self
            .time_derivative
            .as_ref()
            .expect("residual check needs the assembled time derivative")
            [row_idx]
            .values
            .clone();
        let vals = &self.corrected[row_idx].values;
        let row = &self.rows[row_idx];
        let n = self.grid.n;
        let s = stride;
        let step = self.grid.step * s as f64;
        let mut out = vec![f64::NAN; vals.len()];
        match self.geom.q {
            1 => {
                for i in 2 * s..n - 2 * s {
                    let w = [
                        vals[i - 2 * s],
                        vals[i - s],
                        vals[i],
                        vals[i + s],
                        vals[i + 2 * s],
                    ];
                    let f1 = deriv1_c4(&w, step);
                    let f2 = deriv2_c4(&w, step);
                    let y = row[0] + self.grid.value(i);
                    let h = self.geom.h_at(&[y]);
                    let fd = 1e-4;
                    let mut hy = [0.0; 5];
                    for (j, off) in (-2i32..=2).enumerate() {
                        hy[j] = self.geom.h_at(&[y + off as f64 * fd]);
                    }
                    let dh = deriv1_c4(&hy, fd);
                    let lap = -f2 / h + dh * f1 / (2.0 * h * h);
                    out[i] = dt[i] + lap;
                }
            }
            _ => {
                for i in 2 * s..n - 2 * s {
                    for j in 2 * s..n - 2 * s {
                        let at = |a: usize, b: usize| vals[a * n + b];
                        let wx = [
                            at(i - 2 * s, j),
                            at(i - s, j),
                            at(i, j),
                            at(i + s, j),
                            at(i + 2 * s, j),
                        ];
                        let wy = [
                            at(i, j - 2 * s),
                            at(i, j - s),
                            at(i, j),
                            at(i, j + s),
                            at(i, j + 2 * s),
                        ];
                        let y = [row[0] + self.grid.value(i), row[1] + self.grid.value(j)];
                        let h = self.geom.h_at(&y);
                        let lap = -(deriv2_c4(&wx, step) + deriv2_c4(&wy, step)) / h;
                        out[i * n + j] = dt[i * n + j] + lap;
                    }
                }
            }
        }
        out
    }

    /// Sup over interior nodes of `|measured residual - expected|` together
    /// with the sup of the expected residual, where expected is the
    /// telescoped next stage with its alternating sign.
    pub fn residual_mismatch(&self, row_idx: usize, stride: usize) -> (f64, f64) {
        let res = self.residual_row(row_idx, stride);
        let sign = if self.k_max % 2 == 0 { 1.0 } else { -1.0 };
        let expect = &self.next_stage[row_idx].values;
        let mut err = 0.0f64;
        let mut scale = 0.0f64;
        for (r, e) in res.iter().zip(expect) {
            if r.is_finite() {
                err = err.max((r - sign * e).abs());
                scale = scale.max(e.abs());
            }
        }
        (err, scale)
    }

    pub fn write_binary(&self, path: &Path) -> io::Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(KERNEL_MAGIC)?;
        let name = self.geom.model.id.name().as_bytes();
        write_u64(&mut w, name.len() as u64)?;
        w.write_all(name)?;
        write_u64(&mut w, self.geom.q as u64)?;
        write_u64(&mut w, self.k_max as u64)?;
        write_f64s(&mut w, &[self.t, self.grid.lo, self.grid.step])?;
        write_u64(&mut w, self.grid.n as u64)?;
        write_u64(&mut w, self.rows.len() as u64)?;
        w.write_all(&[
            u8::from(self.time_derivative.is_some()),
            u8::from(self.diagnostics.converged),
        ])?;
        write_u64(&mut w, self.diagnostics.term_sups.len() as u64)?;
        write_f64s(&mut w, &self.diagnostics.term_sups)?;
        write_u64(&mut w, self.diagnostics.stage_sups.len() as u64)?;
        write_f64s(&mut w, &self.diagnostics.stage_sups)?;
        for row in &self.rows {
            write_f64s(&mut w, row)?;
        }
        for rk in &self.corrected {
            write_f64s(&mut w, &rk.values)?;
        }
        for rk in &self.next_stage {
            write_f64s(&mut w, &rk.values)?;
        }
        if let Some(dts) = &self.time_derivative {
            for rk in dts {
                write_f64s(&mut w, &rk.values)?;
            }
        }
        w.flush()
    }

    /// Read a kernel written by [`FiberKernel::write_binary`]. The geometry
    /// is rebuilt by the caller (it is a deterministic function of the run
    /// configuration) and cross-checked against the stored model name.
    pub fn read_binary(geom: Arc<FiberGeometry>, path: &Path) -> io::Result<FiberKernel> {
        let bad = |what: &str| io::Error::new(io::ErrorKind::InvalidData, what.to_string());
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != KERNEL_MAGIC {
            return Err(bad("not a fiber kernel file"));
        }
        let name_len = read_u64(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        if name != geom.model.id.name().as_bytes() {
            return Err(bad("kernel was written for a different model"));
        }
        let q = read_u64(&mut r)? as usize;
        if q != geom.q {
            return Err(bad("kernel was written for a different fiber dimension"));
        }
        let k_max = read_u64(&mut r)? as usize;
        let head = read_f64s(&mut r, 3)?;
        let (t, lo, step) = (head[0], head[1], head[2]);
        let n = read_u64(&mut r)? as usize;
        let n_rows = read_u64(&mut r)? as usize;
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let term_len = read_u64(&mut r)? as usize;
        let term_sups = read_f64s(&mut r, term_len)?;
        let stage_len = read_u64(&mut r)? as usize;
        let stage_sups = read_f64s(&mut r, stage_len)?;
        let grid = OffsetGrid { lo, step, n };
        let values_len = if q == 1 { n } else { n * n };
        let mut rows = Vec::with_capacity(n_rows);
        for _ in 0..n_rows {
            rows.push(read_f64s(&mut r, q)?);
        }
        let mut read_bank = |rows: &[Vec<f64>]| -> io::Result<Vec<RowKernel>> {
            let mut bank = Vec::with_capacity(n_rows);
            for row in rows {
                let mut rk = RowKernel::zero(geom.clone(), row, grid.clone());
                rk.values = read_f64s(&mut r, values_len)?;
                bank.push(rk);
            }
            Ok(bank)
        };
        let corrected = read_bank(&rows)?;
        let next_stage = read_bank(&rows)?;
        let time_derivative = if flags[0] != 0 { Some(read_bank(&rows)?) } else { None };
        let mut diagnostics = VolterraDiagnostics::from_sups(t, k_max, term_sups, stage_sups, 0.0);
        diagnostics.converged = flags[1] != 0;
        Ok(FiberKernel {
            geom,
            t,
            k_max,
            grid,
            rows,
            corrected,
            time_derivative,
            next_stage,
            diagnostics,
        })
    }
}
