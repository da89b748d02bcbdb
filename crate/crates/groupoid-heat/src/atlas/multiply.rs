//! Multiplication by exponentials in chart coordinates.
//!
//! Left multiplying a charted arrow by exp(t Y_i) (or exp(t X_i')) moves
//! its coordinates along the flow of the i-th column of v = w^{-1}:
//!
//! ```text
//!   dpsi_j/dt  = v_{j,c}(x, phi, psi),   psi(0) = tau,
//!   dphi_j'/dt = v_{q+j',c}(x, phi, psi), phi(0) = mu,
//! ```
//!
//! with c the driven column. Over the stratum v = I, so psi_c advances at
//! unit speed and everything else is frozen; off it the coordinates drift
//! at rate O(rho). Differentiating the system in the source point adjoins
//! linear blocks with zero initial data, which is how base regularity of
//! the multiplication map is measured.

use std::cell::RefCell;

use super::certify::CertifiedChart;
use super::registry::EstimateFit;
use super::{AtlasError, AtlasOptions, ExpChart};
use crate::flows::variational::base_frame;
use crate::models::BasePoint;
use crate::util::fit::{fit_exp_upper, FitOptions};
use crate::util::linalg;
use crate::util::ode::integrate;
use crate::util::rng::stream;

/// Which exponential multiplies from the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Drive {
    /// exp(t Y_i): drives coordinate column i.
    Isotropy(usize),
    /// exp(t X_i'): drives coordinate column q + i'.
    Tangential(usize),
}

impl Drive {
    fn column(&self, q: usize) -> usize {
        match *self {
            Drive::Isotropy(i) => i,
            Drive::Tangential(i) => q + i,
        }
    }
}

/// Coordinate trajectories of a multiplication flow on a uniform time grid.
#[derive(Debug, Clone)]
pub struct MultiplicationSolution {
    pub drive: Drive,
    pub t_grid: Vec<f64>,
    /// psi[n] has q entries.
    pub psi: Vec<Vec<f64>>,
    /// phi[n] has p entries.
    pub phi: Vec<Vec<f64>>,
    /// Base derivatives per node, row major n_dirs x (q + p): first the
    /// psi block, then the phi block.
    pub d_base: Option<Vec<Vec<f64>>>,
    pub n_dirs: usize,
    /// Worst |v w - I| seen among the right hand side evaluations.
    pub vw_defect: f64,
    /// First grid time at which the trajectory left T(r, M), if any.
    pub truncated_at: Option<f64>,
}

impl MultiplicationSolution {
    pub fn final_psi(&self) -> &[f64] {
        self.psi.last().unwrap()
    }

    pub fn final_phi(&self) -> &[f64] {
        self.phi.last().unwrap()
    }
}

const GRID_NODES: usize = 50;

/// Integrate the multiplication flow for `exp(t drive)` applied to the
/// arrow with coordinates (x, mu, tau), up to t_end. With
/// `with_base_derivative` the source derivatives along the orthonormal
/// base frame at x are adjoined.
pub fn multiply_exp(
    chart: &ExpChart,
    x: &BasePoint,
    mu: &[f64],
    tau: &[f64],
    drive: Drive,
    t_end: f64,
    with_base_derivative: bool,
    opts: &AtlasOptions,
) -> Result<MultiplicationSolution, AtlasError> {
    let model = &chart.model;
    let q = chart.q();
    let p = chart.p();
    let nc = q + p;
    let col = drive.column(q);
    assert!(col < nc);
    let dirs = if with_base_derivative { base_frame(model, x) } else { Vec::new() };
    let n_dirs = dirs.len();
    let dim = nc + n_dirs * nc;

    let inner_err: RefCell<Option<AtlasError>> = RefCell::new(None);
    let defect = RefCell::new(0.0f64);

    // Driven column of v at source point `pt` and packed coordinates `y`.
    let v_column = |pt: &BasePoint, y: &[f64]| -> Result<(Vec<f64>, f64), AtlasError> {
        let st = chart.state(pt, &y[q..nc], &y[..q], opts)?;
        let v = st.v()?;
        let vw = linalg::matmul(&v, &st.w, nc, nc, nc);
        let mut dev = 0.0f64;
        for i in 0..nc {
            for j in 0..nc {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((vw[i * nc + j] - target).abs());
            }
        }
        Ok(((0..nc).map(|i| v[i * nc + col]).collect(), dev))
    };

    let fd = 1e-5;
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        if inner_err.borrow().is_some() {
            dy.fill(0.0);
            return;
        }
        let run = || -> Result<Vec<f64>, AtlasError> {
            let mut out = vec![0.0; dim];
            let (vc, dev) = v_column(x, &y[..nc])?;
            {
                let mut d = defect.borrow_mut();
                *d = d.max(dev);
            }
            out[..nc].copy_from_slice(&vc);
            for (k, dir) in dirs.iter().enumerate() {
                let block = &y[nc + k * nc..nc + (k + 1) * nc];
                let mut yp = y[..nc].to_vec();
                let mut ym = y[..nc].to_vec();
                for i in 0..nc {
                    yp[i] += fd * block[i];
                    ym[i] -= fd * block[i];
                }
                let (vp, _) = v_column(&model.shift(x, dir, fd), &yp)?;
                let (vm, _) = v_column(&model.shift(x, dir, -fd), &ym)?;
                for i in 0..nc {
                    out[nc + k * nc + i] = (vp[i] - vm[i]) / (2.0 * fd);
                }
            }
            Ok(out)
        };
        match run() {
            Ok(v) => dy.copy_from_slice(&v),
            Err(e) => {
                *inner_err.borrow_mut() = Some(e);
                dy.fill(0.0);
            }
        }
    };

    let mut y0 = vec![0.0; dim];
    y0[..q].copy_from_slice(tau);
    y0[q..nc].copy_from_slice(mu);
    // The right hand side carries the integration noise of the transports,
    // and the derivative blocks also the finite difference noise; asking
    // the controller for more accuracy than that stalls it.
    let mut ode = opts.flow.ode;
    if with_base_derivative {
        ode.abs_tol = ode.abs_tol.max(3e-6);
        ode.rel_tol = ode.rel_tol.max(3e-6);
    } else {
        ode.abs_tol = ode.abs_tol.max(1e-10);
        ode.rel_tol = ode.rel_tol.max(1e-10);
    }
    ode.max_steps = ode.max_steps.min(20_000);
    let sol = integrate(rhs, 0.0, t_end, &y0, &ode);
    if let Some(e) = inner_err.into_inner() {
        return Err(e);
    }
    let sol = sol.map_err(crate::flows::FlowError::from)?;

    let rho = model.rho(x);
    let mut t_grid = Vec::with_capacity(GRID_NODES);
    let mut psi = Vec::with_capacity(GRID_NODES);
    let mut phi = Vec::with_capacity(GRID_NODES);
    let mut d_base = if with_base_derivative { Some(Vec::with_capacity(GRID_NODES)) } else { None };
    let mut truncated_at = None;
    for n in 0..GRID_NODES {
        let t = t_end * n as f64 / (GRID_NODES - 1) as f64;
        let y = sol.eval_vec(t);
        t_grid.push(t);
        psi.push(y[..q].to_vec());
        phi.push(y[q..nc].to_vec());
        if let Some(d) = d_base.as_mut() {
            d.push(y[nc..].to_vec());
        }
        if truncated_at.is_none() {
            let l1: f64 = y[..q].iter().map(|v| v.abs()).sum();
            if rho >= chart.r * (-chart.m_rate * l1).exp() {
                truncated_at = Some(t);
            }
        }
    }

    Ok(MultiplicationSolution {
        drive,
        t_grid,
        psi,
        phi,
        d_base,
        n_dirs,
        vw_defect: defect.into_inner(),
        truncated_at,
    })
}

/// Deterministic certified states for the fit drivers: (chart index,
/// source, mu, tau) tuples drawn inside each chart's certified domain.
pub fn sample_states(
    charts: &[CertifiedChart],
    n: usize,
    seed: u64,
    label: &str,
) -> Vec<(usize, BasePoint, Vec<f64>, Vec<f64>)> {
    let mut out = Vec::with_capacity(n);
    for (idx, cc) in charts.iter().enumerate() {
        let mut rng =
            stream(seed, &format!("{}/{}/{}", label, cc.chart.model.describe(), cc.chart.id));
        let per = n / charts.len() + usize::from(idx < n % charts.len());
        for _ in 0..per {
            let (x, mu, tau) =
                super::certify::draw_sample(&mut rng, &cc.chart, cc.cert.r, cc.cert.m_rate);
            out.push((idx, x, mu, tau));
        }
    }
    out
}

/// Samples (||tau||_1, |v - I| / rho) at certified states, the raw
/// material of the coefficient drift envelope.
pub fn mult_coeff_drift_samples(
    charts: &[CertifiedChart],
    n: usize,
    seed: u64,
    label: &str,
    opts: &AtlasOptions,
) -> Result<Vec<(f64, f64)>, AtlasError> {
    let mut out = Vec::new();
    for (idx, x, mu, tau) in sample_states(charts, n, seed, label) {
        let chart = &charts[idx].chart;
        let st = chart.state(&x, &mu, &tau, opts)?;
        let v = st.v()?;
        let nc = chart.n_coords();
        let mut dev = 0.0f64;
        for i in 0..nc {
            for j in 0..nc {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((v[i * nc + j] - target).abs());
            }
        }
        out.push((tau.iter().map(|t| t.abs()).sum(), dev / chart.model.rho(&x)));
    }
    Ok(out)
}

/// Report of the literal coordinate estimate check: every trajectory
/// component must obey
/// `|psi_j(t) - delta_jc t - tau_j| <= rho (q r)^{-1} exp(M2 (||tau|| + q C2 r t))`
/// (and the same bound for |phi - mu|), with (C2, M2) a published drift fit.
#[derive(Debug, Clone)]
pub struct CoordEstReport {
    pub states: usize,
    pub checked: usize,
    pub violations: usize,
    /// Worst deviation / bound ratio.
    pub max_ratio: f64,
}

pub fn coord_est_check(
    charts: &[CertifiedChart],
    drift: &EstimateFit,
    n: usize,
    t_end: f64,
    seed: u64,
    label: &str,
    opts: &AtlasOptions,
) -> Result<CoordEstReport, AtlasError> {
    let mut report = CoordEstReport { states: 0, checked: 0, violations: 0, max_ratio: 0.0 };
    for (idx, x, mu, tau) in sample_states(charts, n, seed, label) {
        let chart = &charts[idx].chart;
        let q = chart.q();
        let rho = chart.model.rho(&x);
        let tau_l1: f64 = tau.iter().map(|t| t.abs()).sum();
        let qr = (q as f64) * chart.r;
        report.states += 1;
        for drive_col in 0..q {
            let sol =
                multiply_exp(chart, &x, &mu, &tau, Drive::Isotropy(drive_col), t_end, false, opts)?;
            let t_stop = sol.truncated_at.unwrap_or(f64::INFINITY);
            for (node, &t) in sol.t_grid.iter().enumerate() {
                if t >= t_stop {
                    break;
                }
                let bound =
                    rho / qr * (drift.rate * (tau_l1 + q as f64 * drift.coeff * chart.r * t)).exp();
                for j in 0..q {
                    let shift = if j == drive_col { t } else { 0.0 };
                    let dev = (sol.psi[node][j] - shift - tau[j]).abs();
                    report.checked += 1;
                    report.max_ratio = report.max_ratio.max(dev / bound);
                    if dev > bound {
                        report.violations += 1;
                    }
                }
                for j in 0..chart.p() {
                    let dev = (sol.phi[node][j] - mu[j]).abs();
                    report.checked += 1;
                    report.max_ratio = report.max_ratio.max(dev / bound);
                    if dev > bound {
                        report.violations += 1;
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Per-state envelope of the fiber pushforward ratios
/// `|d(exp t Y_i) d_tau_k| / |d_tau_k|`, measured in the fiber metric, and
/// their spread across states. The claim under test is that one envelope
/// C exp(M t) works for every state, so the envelopes evaluated at the far
/// end of the time window must agree closely.
#[derive(Debug, Clone)]
pub struct FiberPushforwardReport {
    pub states: usize,
    pub coeff: f64,
    pub rate: f64,
    /// (max - min) / mean of the per-state envelope values at t_end.
    pub spread: f64,
    pub max_ratio: f64,
}

pub fn pushforward_fiber_report(
    charts: &[CertifiedChart],
    n: usize,
    t_end: f64,
    seed: u64,
    label: &str,
    opts: &AtlasOptions,
) -> Result<FiberPushforwardReport, AtlasError> {
    let delta = 1e-5;
    let mut envelopes = Vec::new();
    let mut max_ratio = 0.0f64;
    let mut worst = (0.0, 0.0);
    for (idx, x, mu, tau) in sample_states(charts, n, seed, label) {
        let chart = &charts[idx].chart;
        let q = chart.q();
        let nc = chart.n_coords();
        let drive = Drive::Isotropy(0);
        let base = multiply_exp(chart, &x, &mu, &tau, drive, t_end, false, opts)?;
        for k in 0..q {
            let mut tp = tau.to_vec();
            let mut tm = tau.to_vec();
            tp[k] += delta;
            tm[k] -= delta;
            let sp = multiply_exp(chart, &x, &mu, &tp, drive, t_end, false, opts)?;
            let sm = multiply_exp(chart, &x, &mu, &tm, drive, t_end, false, opts)?;
            let st0 = chart.state(&x, &mu, &tau, opts)?;
            let mut e_k = vec![0.0; nc];
            e_k[k] = 1.0;
            let denom = st0.vertical_norm(&e_k);
            let mut ts = Vec::new();
            let mut ratios = Vec::new();
            for (node, &t) in base.t_grid.iter().enumerate() {
                let mut jcol = vec![0.0; nc];
                for j in 0..q {
                    jcol[j] = (sp.psi[node][j] - sm.psi[node][j]) / (2.0 * delta);
                }
                for j in 0..chart.p() {
                    jcol[q + j] = (sp.phi[node][j] - sm.phi[node][j]) / (2.0 * delta);
                }
                let st = chart.state(&x, &base.phi[node], &base.psi[node], opts)?;
                let ratio = st.vertical_norm(&jcol) / denom;
                ts.push(t);
                ratios.push(ratio);
                max_ratio = max_ratio.max(ratio);
            }
            let env = fit_exp_upper(&ts, &ratios, FitOptions { min_rate: Some(0.0), max_rate: None });
            let value = env.coeff * (env.rate * t_end).exp();
            if value > worst.0 {
                worst = (value, env.rate);
            }
            envelopes.push((env.coeff, env.rate, value));
        }
    }
    let states = envelopes.len();
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, 0.0f64, 0.0);
    for &(_, _, v) in &envelopes {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
    }
    let mean = sum / states.max(1) as f64;
    let spread = if mean > 0.0 { (hi - lo) / mean } else { 0.0 };
    Ok(FiberPushforwardReport {
        states,
        coeff: worst.0 / (worst.1 * t_end).exp(),
        rate: worst.1,
        spread,
        max_ratio,
    })
}

/// Samples (||tau||_1 + |t|, |X|) where X is the vertical correction in
/// `d(exp t Y_i) d_x = d_x + X`, measured through the adjoined base
/// derivative blocks of the multiplication flow.
pub fn pushforward_base_samples(
    charts: &[CertifiedChart],
    n: usize,
    t_end: f64,
    seed: u64,
    label: &str,
    opts: &AtlasOptions,
) -> Result<Vec<(f64, f64)>, AtlasError> {
    let mut out = Vec::new();
    for (idx, x, mu, tau) in sample_states(charts, n, seed, label) {
        let chart = &charts[idx].chart;
        let nc = chart.n_coords();
        let tau_l1: f64 = tau.iter().map(|t| t.abs()).sum();
        let sol = multiply_exp(chart, &x, &mu, &tau, Drive::Isotropy(0), t_end, true, opts)?;
        let blocks = sol.d_base.as_ref().unwrap();
        let t_stop = sol.truncated_at.unwrap_or(f64::INFINITY);
        for (node, &t) in sol.t_grid.iter().enumerate() {
            if node % 7 != 0 || t >= t_stop {
                continue;
            }
            let st = chart.state(&x, &sol.phi[node], &sol.psi[node], opts)?;
            let mut x_norm = 0.0f64;
            for k in 0..sol.n_dirs {
                let block = &blocks[node][k * nc..(k + 1) * nc];
                x_norm = x_norm.max(st.vertical_norm(block));
            }
            out.push((tau_l1 + t.abs(), x_norm));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::certify::{certified_atlas, CertifyGrid};
    use crate::models::{Model, ModelId};
    use approx::assert_abs_diff_eq;

    fn opts() -> AtlasOptions {
        AtlasOptions::default()
    }

    fn charts(id: ModelId) -> Vec<CertifiedChart> {
        certified_atlas(&Model::with_defaults(id), &CertifyGrid::fast(), &opts()).unwrap()
    }

    #[test]
    fn circle_multiplication_is_a_unit_speed_shift() {
        let cc = &charts(ModelId::ParabolicCircle)[0];
        let x = cc.chart.model.point_at_dist(0.05, 0.0);
        let sol =
            multiply_exp(&cc.chart, &x, &[], &[0.4], Drive::Isotropy(0), 1.2, true, &opts()).unwrap();
        for (node, &t) in sol.t_grid.iter().enumerate() {
            assert_abs_diff_eq!(sol.psi[node][0], 0.4 + t, epsilon = 1e-9);
            // psi does not depend on the source point.
            assert!(sol.d_base.as_ref().unwrap()[node][0].abs() < 1e-8);
        }
        assert!(sol.vw_defect < 1e-12);
        assert!(sol.truncated_at.is_none());
    }

    #[test]
    fn trajectories_match_chart_inversion_of_the_product() {
        for id in [ModelId::StereoSphere, ModelId::CylinderProduct] {
            for cc in &charts(id) {
                let chart = &cc.chart;
                let model = &chart.model;
                let x = model.point_at_dist(0.04, 1.7);
                let (mu, tau) = match chart.p() {
                    0 => (vec![], vec![0.5, -0.3]),
                    _ => (vec![0.2], vec![0.5, -0.3]),
                };
                let t_end = 0.7;
                let drive = Drive::Isotropy(1);
                let sol = multiply_exp(chart, &x, &mu, &tau, drive, t_end, false, &opts()).unwrap();
                assert!(sol.vw_defect < 1e-10);

                // Oracle: continue the charted arrow by the exponential and
                // invert the product in the same chart.
                let a = chart.forward(&x, &mu, &tau, &opts()).unwrap();
                let y = model.target(&a);
                let sec = &chart.y_sections[1];
                let ext =
                    crate::flows::groupoid_exp_field(model, &y, sec, t_end, &opts().flow).unwrap();
                let product = model
                    .compose(&crate::models::Arrow { source: y, g: ext.g }, &a)
                    .unwrap();
                let inv = chart
                    .invert(&product, Some((&mu, sol.final_psi())), &opts())
                    .unwrap();
                for j in 0..chart.q() {
                    assert_abs_diff_eq!(inv.tau[j], sol.final_psi()[j], epsilon = 1e-7);
                }
                for j in 0..chart.p() {
                    assert_abs_diff_eq!(inv.mu[j], sol.final_phi()[j], epsilon = 1e-7);
                }
            }
        }
    }

    #[test]
    fn coordinate_drift_is_of_order_rho() {
        let cc = &charts(ModelId::CylinderProduct)[0];
        let chart = &cc.chart;
        for &d in &[1e-3, 1e-2] {
            let x = chart.model.point_at_dist(d, 0.9);
            let rho = chart.model.rho(&x);
            let (mu, tau) = (vec![0.1], vec![0.6, -0.2]);
            let sol =
                multiply_exp(chart, &x, &mu, &tau, Drive::Isotropy(0), 1.0, false, &opts()).unwrap();
            for (node, &t) in sol.t_grid.iter().enumerate() {
                let dev = (sol.psi[node][0] - tau[0] - t)
                    .abs()
                    .max((sol.psi[node][1] - tau[1]).abs())
                    .max((sol.phi[node][0] - mu[0]).abs());
                assert!(
                    dev <= rho * 5.0 * (2.0f64).exp() * (t + 0.05),
                    "drift {:.3e} too large for rho {:.1e} at t {:.2}",
                    dev,
                    rho,
                    t
                );
            }
        }
    }

    #[test]
    fn base_derivative_blocks_match_finite_differences() {
        let cc = &charts(ModelId::CylinderProduct)[0];
        let chart = &cc.chart;
        let model = &chart.model;
        let x = model.point_at_dist(0.05, 2.3);
        let (mu, tau) = (vec![0.15], vec![0.4, 0.3]);
        let t_end = 0.6;
        let sol =
            multiply_exp(chart, &x, &mu, &tau, Drive::Isotropy(0), t_end, true, &opts()).unwrap();
        let dirs = base_frame(model, &x);
        let h = 1e-4;
        let nc = chart.n_coords();
        for (k, dir) in dirs.iter().enumerate() {
            let xp = model.shift(&x, dir, h);
            let xm = model.shift(&x, dir, -h);
            let sp =
                multiply_exp(chart, &xp, &mu, &tau, Drive::Isotropy(0), t_end, false, &opts())
                    .unwrap();
            let sm =
                multiply_exp(chart, &xm, &mu, &tau, Drive::Isotropy(0), t_end, false, &opts())
                    .unwrap();
            let last = sol.t_grid.len() - 1;
            let block = &sol.d_base.as_ref().unwrap()[last][k * nc..(k + 1) * nc];
            for j in 0..chart.q() {
                let fd = (sp.psi[last][j] - sm.psi[last][j]) / (2.0 * h);
                assert_abs_diff_eq!(block[j], fd, epsilon = 1e-5);
            }
            for j in 0..chart.p() {
                let fd = (sp.phi[last][j] - sm.phi[last][j]) / (2.0 * h);
                assert_abs_diff_eq!(block[chart.q() + j], fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn leaving_the_certified_domain_is_flagged() {
        let cc = &charts(ModelId::StereoSphere)[0];
        let chart = &cc.chart;
        // Start close to the domain edge at tau = 0 and let psi grow.
        let x = chart.model.point_at_dist(0.9 * chart.r, 0.4);
        let sol =
            multiply_exp(chart, &x, &[], &[0.0, 0.0], Drive::Isotropy(0), 3.0, false, &opts())
                .unwrap();
        let t = sol.truncated_at.expect("trajectory must leave T(r, M)");
        assert!(t > 0.0 && t < 3.0);
    }

    #[test]
    fn tangential_drive_moves_mu_on_the_cylinder() {
        let cc = &charts(ModelId::CylinderProduct)[0];
        let chart = &cc.chart;
        let x = BasePoint::Cylinder { phi: 0.7, p: [0.0, 0.0, 1.0] };
        let sol =
            multiply_exp(chart, &x, &[0.0], &[0.3, 0.1], Drive::Tangential(0), 0.5, false, &opts())
                .unwrap();
        let last = sol.t_grid.len() - 1;
        // Over the stratum the tilde system is also unit speed.
        assert_abs_diff_eq!(sol.phi[last][0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.psi[last][0], 0.3, epsilon = 1e-9);
        assert_abs_diff_eq!(sol.psi[last][1], 0.1, epsilon = 1e-9);
    }

    #[test]
    fn drift_samples_and_coord_est_have_no_violations() {
        let all = charts(ModelId::CylinderProduct);
        let samples = mult_coeff_drift_samples(&all, 12, 7, "test/drift", &opts()).unwrap();
        assert_eq!(samples.len(), 12);
        let env = fit_exp_upper(
            &samples.iter().map(|s| s.0).collect::<Vec<_>>(),
            &samples.iter().map(|s| s.1).collect::<Vec<_>>(),
            FitOptions { min_rate: Some(0.0), max_rate: Some(8.0) },
        );
        let drift = EstimateFit {
            label: "test".into(),
            form: crate::atlas::registry::BoundForm::ExpArg,
            coeff: env.coeff * 1.25,
            rate: env.rate,
            samples: samples.len(),
            max_residual: 0.0,
            violations: 0,
        };
        let report = coord_est_check(&all, &drift, 6, 0.8, 11, "test/coord-est", &opts()).unwrap();
        assert!(report.checked > 0);
        assert_eq!(report.violations, 0, "max ratio {:.3}", report.max_ratio);
    }

    #[test]
    fn fiber_pushforward_envelopes_are_tight_across_states() {
        let all = charts(ModelId::StereoSphere);
        let report = pushforward_fiber_report(&all, 6, 1.0, 13, "test/fiber", &opts()).unwrap();
        assert!(report.states > 0);
        assert!(report.max_ratio.is_finite());
        assert!(
            report.spread < 0.10,
            "envelope spread {:.3} with max ratio {:.3}",
            report.spread,
            report.max_ratio
        );
    }

    #[test]
    fn base_pushforward_samples_scale_with_rho() {
        let all = charts(ModelId::CylinderProduct);
        let samples = pushforward_base_samples(&all, 6, 0.8, 17, "test/base", &opts()).unwrap();
        assert!(!samples.is_empty());
        assert!(samples.iter().all(|(_, x)| x.is_finite() && *x < 0.5));
    }
}
