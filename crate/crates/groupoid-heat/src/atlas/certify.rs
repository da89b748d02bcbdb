//! Chart domain certification.
//!
//! A chart is usable on T(r, M) = {rho(x) < r exp(-M ||tau||_1)} once the
//! data backs that up. Certification measures how fast w drifts from the
//! identity, picks (r, M) so the drift stays below 1/2 on the whole domain,
//! then verifies on a fresh grid: w deviation, Jacobian determinants
//! cross-checked against finite differences of the forward map, exactness
//! of w = I over the stratum, injectivity by randomized collision search,
//! and inversion round trips. Every verified grid is hashed so certificates
//! are comparable across runs.

use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::{AtlasError, AtlasOptions, ExpChart};
use crate::models::{BasePoint, Model};
use crate::util::fit::{fit_exp_upper, FitOptions};
use crate::util::linalg;
use crate::util::rng::{stream, DEFAULT_SEED};

/// Sampling plan for certification. `standard` is the reporting
/// resolution; `fast` keeps unit tests quick.
#[derive(Debug, Clone, Copy)]
pub struct CertifyGrid {
    pub seed: u64,
    /// Lattice stops per isotropy direction (denser when q = 1).
    pub tau_stops: usize,
    /// Lattice stops per tangential direction.
    pub mu_stops: usize,
    /// Log-spaced distances to the stratum.
    pub dist_stops: usize,
    /// Azimuth samples per distance.
    pub aux_stops: usize,
    pub collision_draws: usize,
    pub roundtrip_draws: usize,
    /// The tau lattice spans [-tau_span, tau_span].
    pub tau_span: f64,
}

impl CertifyGrid {
    pub fn standard() -> CertifyGrid {
        CertifyGrid {
            seed: DEFAULT_SEED,
            tau_stops: 5,
            mu_stops: 3,
            dist_stops: 6,
            aux_stops: 2,
            collision_draws: 450,
            roundtrip_draws: 40,
            tau_span: 1.2,
        }
    }

    pub fn fast() -> CertifyGrid {
        CertifyGrid {
            seed: DEFAULT_SEED,
            tau_stops: 3,
            mu_stops: 2,
            dist_stops: 4,
            aux_stops: 1,
            collision_draws: 120,
            roundtrip_draws: 10,
            tau_span: 1.2,
        }
    }

    fn tau_lattice(&self, q: usize) -> Vec<Vec<f64>> {
        let stops = if q == 1 { 2 * self.tau_stops + 3 } else { self.tau_stops };
        lattice_power(stops, self.tau_span, q)
    }

    fn mu_lattice(&self, p: usize, eps: f64) -> Vec<Vec<f64>> {
        lattice_power(self.mu_stops, 0.9 * eps, p)
    }

    fn auxes(&self) -> Vec<f64> {
        (0..self.aux_stops).map(|k| 0.37 + 2.399963 * k as f64).collect()
    }
}

fn lattice_power(stops: usize, span: f64, dim: usize) -> Vec<Vec<f64>> {
    let line: Vec<f64> = if stops <= 1 {
        vec![0.0]
    } else {
        (0..stops).map(|i| -span + 2.0 * span * i as f64 / (stops - 1) as f64).collect()
    };
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..dim {
        let mut next = Vec::with_capacity(out.len() * line.len());
        for prefix in &out {
            for &v in &line {
                let mut w = prefix.clone();
                w.push(v);
                next.push(w);
            }
        }
        out = next;
    }
    out
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi <= lo {
        return vec![hi.min(lo)];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|t| t.abs()).sum()
}

/// Everything a certificate vouches for, with the measurements behind it.
#[derive(Debug, Clone, Serialize)]
pub struct DomainCertificate {
    pub chart_id: usize,
    pub model: String,
    pub r: f64,
    pub m_rate: f64,
    pub eps: f64,
    /// Envelope |w - I| <= rho * dev_coeff * exp(dev_rate ||tau||_1)
    /// fitted on the provisional samples.
    pub dev_coeff: f64,
    pub dev_rate: f64,
    pub dev_samples: usize,
    /// Times r was halved before the verification grid passed.
    pub halvings: usize,
    pub grid_points: usize,
    pub grid_hash: String,
    pub max_w_dev: f64,
    pub min_abs_det: f64,
    /// min over the checked subset of |det_fd| - 10 |det_fd - det|.
    pub min_det_margin: f64,
    pub max_m1_dev: f64,
    pub collision_draws: usize,
    pub collision_pairs: usize,
    /// Smallest realization distance among coordinate-distinct pairs.
    pub min_separation: f64,
    pub roundtrip_draws: usize,
    pub max_roundtrip_err: f64,
}

/// A chart whose (r, M) have been certified. The stored chart carries the
/// certified values, not the candidates it was built with.
#[derive(Debug, Clone)]
pub struct CertifiedChart {
    pub chart: ExpChart,
    pub cert: DomainCertificate,
}

impl CertifiedChart {
    pub fn contains(&self, x: &BasePoint, mu: &[f64], tau: &[f64], margin: f64) -> bool {
        self.chart.contains(x, mu, tau, margin)
    }
}

struct VerifyPass {
    grid_points: usize,
    max_w_dev: f64,
    min_abs_det: f64,
    min_det_margin: f64,
    hash: String,
}

fn verify_grid(
    chart: &ExpChart,
    grid: &CertifyGrid,
    r: f64,
    m_rate: f64,
    opts: &AtlasOptions,
) -> Result<Result<VerifyPass, String>, AtlasError> {
    let model = &chart.model;
    let nc = chart.n_coords();
    let mut hasher = Sha256::new();
    hasher.update(model.describe().as_bytes());
    hasher.update(format!("chart={} r={:.17e} m={:.17e}", chart.id, r, m_rate).as_bytes());

    let mut pass = VerifyPass {
        grid_points: 0,
        max_w_dev: 0.0,
        min_abs_det: f64::INFINITY,
        min_det_margin: f64::INFINITY,
        hash: String::new(),
    };
    let fd_h = 1e-6;
    for tau in chart.tau_lattice_for(grid) {
        let bound = r * (-m_rate * l1(&tau)).exp();
        let hi = 0.97 * bound;
        let lo = (1e-4f64).min(hi * 1e-3);
        for &d in &log_spaced(lo, hi, grid.dist_stops) {
            for &aux in &grid.auxes() {
                let x = model.point_at_dist(d, aux);
                for mu in grid.mu_lattice(chart.p(), chart.eps) {
                    for v in [&[d, aux][..], &mu, &tau].concat() {
                        hasher.update(v.to_le_bytes());
                    }
                    let st = chart.state(&x, &mu, &tau, opts)?;
                    pass.grid_points += 1;
                    pass.max_w_dev = pass.max_w_dev.max(st.w_deviation());
                    if pass.max_w_dev > 0.5 {
                        return Ok(Err(format!(
                            "|w - I| = {:.3} at rho {:.3e}, tau {:?}",
                            pass.max_w_dev, d, tau
                        )));
                    }
                    let det = linalg::det(&st.jac, nc).abs();
                    pass.min_abs_det = pass.min_abs_det.min(det);
                    if det == 0.0 {
                        return Ok(Err(format!("singular Jacobian at rho {:.3e}", d)));
                    }
                    if pass.grid_points % 7 == 0 {
                        let mut fd = vec![0.0; nc * nc];
                        for c in 0..nc {
                            let shift = |s: f64| -> Result<[f64; 3], AtlasError> {
                                let mut mu2 = mu.clone();
                                let mut tau2 = tau.clone();
                                if c < chart.q() {
                                    tau2[c] += s;
                                } else {
                                    mu2[c - chart.q()] += s;
                                }
                                Ok(chart.forward(&x, &mu2, &tau2, opts)?.g)
                            };
                            let gp = shift(fd_h)?;
                            let gm = shift(-fd_h)?;
                            for i in 0..nc {
                                fd[i * nc + c] = (gp[i] - gm[i]) / (2.0 * fd_h);
                            }
                        }
                        let det_fd = linalg::det(&fd, nc).abs();
                        let margin = det_fd - 10.0 * (det_fd - det).abs();
                        pass.min_det_margin = pass.min_det_margin.min(margin);
                        if margin <= 0.0 {
                            return Ok(Err(format!(
                                "determinant uncertain: fd {:.6e} vs transport {:.6e}",
                                det_fd, det
                            )));
                        }
                    }
                }
            }
        }
    }
    pass.hash = format!("{:x}", hasher.finalize());
    Ok(Ok(pass))
}

impl ExpChart {
    fn tau_lattice_for(&self, grid: &CertifyGrid) -> Vec<Vec<f64>> {
        grid.tau_lattice(self.q())
    }
}

/// Draw a coordinate tuple inside (-0.9 eps)^p x T(0.97 r, M).
pub(crate) fn draw_sample<R: Rng>(
    rng: &mut R,
    chart: &ExpChart,
    r: f64,
    m_rate: f64,
) -> (BasePoint, Vec<f64>, Vec<f64>) {
    let tau: Vec<f64> = (0..chart.q()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mu: Vec<f64> =
        (0..chart.p()).map(|_| rng.gen_range(-0.9 * chart.eps..0.9 * chart.eps)).collect();
    let hi = 0.97 * r * (-m_rate * l1(&tau)).exp();
    let lo = (1e-4f64).min(hi * 1e-3);
    let d = (lo.ln() + rng.gen_range(0.0..1.0) * (hi.ln() - lo.ln())).exp();
    let aux = rng.gen_range(0.0..6.28);
    (chart.model.point_at_dist(d, aux), mu, tau)
}

/// Certify one chart. The returned certificate fixes (r, M); the chart's
/// own candidate values are ignored except as an upper bound on r.
pub fn certify_domain(
    chart: &ExpChart,
    grid: &CertifyGrid,
    opts: &AtlasOptions,
) -> Result<DomainCertificate, AtlasError> {
    let model = &chart.model;
    let reject = |reason: String| AtlasError::Rejected { chart: chart.id, reason };

    // Provisional sweep: measure |w - I| / rho against ||tau||_1 without
    // any domain restriction, out to half the collar.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let r_cap = model.params.collar * 0.5;
    for tau in chart.tau_lattice_for(grid) {
        for &d in &log_spaced(1e-4, r_cap, grid.dist_stops) {
            for &aux in &grid.auxes() {
                let x = model.point_at_dist(d, aux);
                let rho = model.rho(&x);
                for mu in grid.mu_lattice(chart.p(), chart.eps) {
                    let st = chart.state(&x, &mu, &tau, opts)?;
                    xs.push(l1(&tau));
                    ys.push(st.w_deviation() / rho);
                }
            }
        }
    }
    let dev = fit_exp_upper(&xs, &ys, FitOptions { min_rate: Some(0.0), max_rate: Some(8.0) });

    let m_rate = dev.rate + 0.5;
    let mut r = if dev.coeff > 1e-9 { (0.45 / dev.coeff).min(r_cap) } else { r_cap };

    // Exactness over the stratum, at generic coordinates.
    let mut max_m1_dev = 0.0f64;
    let mut rng = stream(grid.seed, &format!("certify/m1/{}/{}", model.describe(), chart.id));
    for aux in grid.auxes() {
        let x = model.point_at_dist(0.0, aux);
        for _ in 0..3 {
            let tau: Vec<f64> = (0..chart.q()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mu: Vec<f64> = (0..chart.p())
                .map(|_| rng.gen_range(-0.9 * chart.eps..0.9 * chart.eps))
                .collect();
            let st = chart.state(&x, &mu, &tau, opts)?;
            max_m1_dev = max_m1_dev.max(st.w_deviation());
        }
    }
    if max_m1_dev >= 1e-9 {
        return Err(reject(format!("w deviates from I over the stratum: {:.3e}", max_m1_dev)));
    }

    // Verification grid, halving r until it passes.
    let mut halvings = 0;
    let pass = loop {
        match verify_grid(chart, grid, r, m_rate, opts)? {
            Ok(pass) => break pass,
            Err(reason) => {
                halvings += 1;
                if halvings > 8 {
                    return Err(reject(reason));
                }
                r *= 0.5;
            }
        }
    };

    // Collision search: distinct coordinates must realize distinct arrows.
    let mut rng =
        stream(grid.seed, &format!("certify/collisions/{}/{}", model.describe(), chart.id));
    let mut draws = Vec::with_capacity(grid.collision_draws);
    for _ in 0..grid.collision_draws {
        let (x, mu, tau) = draw_sample(&mut rng, chart, r, m_rate);
        let a = chart.forward(&x, &mu, &tau, opts)?;
        draws.push((x, mu, tau, a.g));
    }
    let mut pairs = 0usize;
    let mut min_separation = f64::INFINITY;
    for i in 0..draws.len() {
        for j in (i + 1)..draws.len() {
            pairs += 1;
            let (xa, mua, taua, ga) = &draws[i];
            let (xb, mub, taub, gb) = &draws[j];
            let base = model.base_distance(xa, xb);
            let coord_dist = base
                + mua.iter().zip(mub).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
                + taua.iter().zip(taub).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if coord_dist <= 1e-3 {
                continue;
            }
            let real_dist =
                base + ga.iter().zip(gb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            min_separation = min_separation.min(real_dist);
            if real_dist < 1e-6 {
                return Err(reject(format!(
                    "coordinate collision: separation {:.3e} at coordinate distance {:.3e}",
                    real_dist, coord_dist
                )));
            }
        }
    }

    // Inversion round trips on fresh draws.
    let mut rng =
        stream(grid.seed, &format!("certify/roundtrip/{}/{}", model.describe(), chart.id));
    let mut max_roundtrip_err = 0.0f64;
    for _ in 0..grid.roundtrip_draws {
        let (x, mu, tau) = draw_sample(&mut rng, chart, r, m_rate);
        let a = chart.forward(&x, &mu, &tau, opts)?;
        let inv = chart.invert(&a, None, opts)?;
        for (got, want) in inv.tau.iter().zip(&tau).chain(inv.mu.iter().zip(&mu)) {
            max_roundtrip_err = max_roundtrip_err.max((got - want).abs());
        }
    }
    if max_roundtrip_err > 1e-8 {
        return Err(reject(format!("round trip error {:.3e}", max_roundtrip_err)));
    }

    Ok(DomainCertificate {
        chart_id: chart.id,
        model: model.id.name().to_string(),
        r,
        m_rate,
        eps: chart.eps,
        dev_coeff: dev.coeff,
        dev_rate: dev.rate,
        dev_samples: dev.samples,
        halvings,
        grid_points: pass.grid_points,
        grid_hash: pass.hash,
        max_w_dev: pass.max_w_dev,
        min_abs_det: pass.min_abs_det,
        min_det_margin: pass.min_det_margin,
        max_m1_dev,
        collision_draws: grid.collision_draws,
        collision_pairs: pairs,
        min_separation,
        roundtrip_draws: grid.roundtrip_draws,
        max_roundtrip_err,
    })
}

/// Certify every builtin chart of a model.
pub fn certified_atlas(
    model: &Model,
    grid: &CertifyGrid,
    opts: &AtlasOptions,
) -> Result<Vec<CertifiedChart>, AtlasError> {
    super::builtin_atlas(model)
        .into_iter()
        .map(|mut chart| {
            let cert = certify_domain(&chart, grid, opts)?;
            chart.r = cert.r;
            chart.m_rate = cert.m_rate;
            Ok(CertifiedChart { chart, cert })
        })
        .collect()
}

/// Samples (||tau||_1, max |d w / d x|) for the base-derivative envelope of
/// a chart, taken on a thinned certification grid.
pub fn w_base_derivative_samples(
    chart: &ExpChart,
    grid: &CertifyGrid,
    r: f64,
    m_rate: f64,
    opts: &AtlasOptions,
) -> Result<Vec<(f64, f64)>, AtlasError> {
    let model = &chart.model;
    let delta = 1e-5;
    let mut out = Vec::new();
    for (k, tau) in chart.tau_lattice_for(grid).into_iter().enumerate() {
        if k % 2 == 1 {
            continue;
        }
        let bound = 0.9 * r * (-m_rate * l1(&tau)).exp();
        for &d in &log_spaced((1e-4f64).min(bound * 1e-3), bound, 3) {
            for &aux in &grid.auxes() {
                let x = model.point_at_dist(d, aux);
                for mu in grid.mu_lattice(chart.p(), chart.eps) {
                    let dirs = crate::flows::variational::base_frame(model, &x);
                    let mut grad = 0.0f64;
                    for dir in &dirs {
                        let xp = model.shift(&x, dir, delta);
                        let xm = model.shift(&x, dir, -delta);
                        let wp = chart.state(&xp, &mu, &tau, opts)?.w;
                        let wm = chart.state(&xm, &mu, &tau, opts)?.w;
                        for (a, b) in wp.iter().zip(&wm) {
                            grad = grad.max(((a - b) / (2.0 * delta)).abs());
                        }
                    }
                    out.push((l1(&tau), grad));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Model, ModelId};

    fn opts() -> AtlasOptions {
        AtlasOptions::default()
    }

    #[test]
    fn circle_certificate_keeps_the_full_collar() {
        let model = Model::with_defaults(ModelId::ParabolicCircle);
        let chart = &super::super::builtin_atlas(&model)[0];
        let cert = certify_domain(chart, &CertifyGrid::fast(), &opts()).unwrap();
        assert_eq!(cert.halvings, 0);
        assert!((cert.r - 0.25).abs() < 1e-12);
        assert!(cert.max_m1_dev < 1e-9);
        assert!(cert.max_w_dev < 1e-9);
        assert!(cert.min_abs_det > 0.5);
        assert!(cert.max_roundtrip_err < 1e-8);
        assert!(cert.min_separation > 1e-6);
    }

    #[test]
    fn sphere_and_cylinder_charts_certify() {
        for id in [ModelId::StereoSphere, ModelId::CylinderProduct] {
            let model = Model::with_defaults(id);
            for cc in certified_atlas(&model, &CertifyGrid::fast(), &opts()).unwrap() {
                assert!(cc.cert.max_w_dev <= 0.5);
                assert!(cc.cert.min_abs_det > 0.0);
                assert!(cc.cert.min_det_margin > 0.0);
                assert!(cc.cert.max_m1_dev < 1e-9);
                assert!(cc.cert.max_roundtrip_err < 1e-8);
                assert_eq!(cc.chart.r, cc.cert.r);
            }
        }
    }

    #[test]
    fn certification_is_deterministic() {
        let model = Model::with_defaults(ModelId::StereoSphere);
        let chart = &super::super::builtin_atlas(&model)[0];
        let a = certify_domain(chart, &CertifyGrid::fast(), &opts()).unwrap();
        let b = certify_domain(chart, &CertifyGrid::fast(), &opts()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn duplicate_sections_are_rejected() {
        let model = Model::with_defaults(ModelId::StereoSphere);
        let mut chart = super::super::builtin_atlas(&model)[0].clone();
        chart.y_sections[1] = chart.y_sections[0];
        match certify_domain(&chart, &CertifyGrid::fast(), &opts()) {
            Err(AtlasError::Rejected { .. }) | Err(AtlasError::Linalg(_)) => {}
            other => panic!("expected rejection, got {:?}", other.map(|c| c.grid_hash)),
        }
    }

    #[test]
    fn base_derivative_samples_are_finite_and_positive_somewhere() {
        let model = Model::with_defaults(ModelId::CylinderProduct);
        let chart = &super::super::builtin_atlas(&model)[0];
        let cert = certify_domain(chart, &CertifyGrid::fast(), &opts()).unwrap();
        let samples =
            w_base_derivative_samples(chart, &CertifyGrid::fast(), cert.r, cert.m_rate, &opts())
                .unwrap();
        assert!(!samples.is_empty());
        assert!(samples.iter().all(|(_, g)| g.is_finite()));
        assert!(samples.iter().any(|&(_, g)| g > 1e-4));
    }
}
