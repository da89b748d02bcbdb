//! Exponential coordinate charts on the arrow space.
//!
//! A chart labels the arrow
//!
//! ```text
//!   exp(tau_q Y_q) ... exp(tau_1 Y_1) . exp(mu_p X_p) ... exp(mu_1 X_1)
//!       . exp(Z_|I|) ... exp(Z_1) (x)
//! ```
//!
//! by (x, mu, tau). Factors are groupoid exponentials chained left to
//! right: each starts from the target of the partial product, and the group
//! offsets add. The isotropy sections Y are fixed per model; the tangential
//! sections X and the auxiliary word Z vary per chart.
//!
//! The coordinate differentials come from the fiber transports of the
//! factors: d(total offset)/d(flow time of factor k) is the section value
//! at the point reached after factor k, pushed through the transports of
//! every later factor. Expressing those columns in the orthonormal section
//! frame at the final target yields the w matrix. Over the stratum every
//! section field is constant along M1 (h is constant there and the cylinder
//! tilts vanish), so all transports are the identity and w = I exactly;
//! nearby, w - I is of order rho. The inverse v = w^{-1} drives the
//! multiplication ODEs, and the Jacobian d(offset)/d(coords) doubles as the
//! exact Newton matrix for chart inversion.

pub mod certify;
pub mod chain;
pub mod coords;
pub mod multiply;
pub mod registry;

use thiserror::Error;

use crate::flows::{groupoid_exp_field, FlowError, FlowOptions, SectionField};
use crate::flows::variational::transport_field;
use crate::models::{Arrow, BasePoint, Model, ModelError, ModelId};
use crate::util::linalg::{self, LinalgError};

#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("flow integration failed: {0}")]
    Flow(#[from] FlowError),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("linear algebra failed: {0}")]
    Linalg(#[from] LinalgError),
    #[error("chart inversion stalled after {iters} iterations (residual {residual:.3e})")]
    Inversion { iters: usize, residual: f64 },
    #[error("chart {chart} rejected: {reason}")]
    Rejected { chart: usize, reason: String },
    #[error("arrow outside the domain of chart {chart}: rho {rho:.3e} >= bound {bound:.3e}")]
    OutsideDomain { chart: usize, rho: f64, bound: f64 },
    #[error("no chart accepts the arrow with the required margin")]
    NoChart,
    #[error("fit registry already holds the label {0}")]
    DuplicateLabel(String),
}

/// Default tilts of the cylinder isotropy sections. Nonzero tilts couple
/// the isotropy and pair directions away from the stratum, so coordinate
/// changes and w matrices are dense there; on M1 the coupling vanishes.
pub const CYLINDER_TILTS: [f64; 2] = [0.25, -0.15];

/// Tilts of the word sections. Different from the chart tilts on purpose:
/// a word built from the chart's own tangential section would merge with
/// the mu factor by the flow group property and every transition would be
/// exactly rigid. With distinct tilts the word agrees with the tangential
/// section only over the stratum, so transitions are rigid there and drift
/// at order rho off it.
pub const CYLINDER_WORD_TILTS: [f64; 2] = [-0.2, 0.3];

/// One chart section: a g_A-orthonormal coefficient field in the
/// translation frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChartSection {
    kind: SectionKind,
    sign: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SectionKind {
    /// h^{-1/2} times a fixed translation frame axis.
    Axis(usize),
    /// One row of the tilted cylinder frame: Gram-Schmidt of
    /// {e_1 + l_1 e_0, e_2 + l_2 e_0} with l_i = tilt_i (1 - Z), followed
    /// by the orthogonal completion. Rows 0 and 1 are the isotropy
    /// members, row 2 the completion; all carry the h^{-1/2} scaling.
    Tilted { row: usize, tilts: [f64; 2] },
}

impl ChartSection {
    pub fn axis(i: usize) -> ChartSection {
        ChartSection { kind: SectionKind::Axis(i), sign: 1.0 }
    }

    pub fn tilted(row: usize, tilts: [f64; 2]) -> ChartSection {
        ChartSection { kind: SectionKind::Tilted { row, tilts }, sign: 1.0 }
    }

    /// Same line, reversed orientation; still orthonormal.
    pub fn flipped(self) -> ChartSection {
        ChartSection { sign: -self.sign, ..self }
    }
}

fn norm3(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Orthonormal coefficient frame of the tilted cylinder sections at height
/// Z = z, rows (isotropy 1, isotropy 2, completion), columns (arc, sphere
/// 1, sphere 2). At z = 1 this is exactly the permuted standard frame.
pub fn tilted_frame(tilts: [f64; 2], z: f64) -> [[f64; 3]; 3] {
    let l = [tilts[0] * (1.0 - z), tilts[1] * (1.0 - z)];
    let mut u1 = [l[0], 1.0, 0.0];
    let n1 = norm3(&u1);
    for c in &mut u1 {
        *c /= n1;
    }
    let mut u2 = [l[1], 0.0, 1.0];
    let d21 = dot3(&u2, &u1);
    for i in 0..3 {
        u2[i] -= d21 * u1[i];
    }
    let n2 = norm3(&u2);
    for c in &mut u2 {
        *c /= n2;
    }
    let mut u0 = [1.0, 0.0, 0.0];
    let d01 = dot3(&u0, &u1);
    let d02 = dot3(&u0, &u2);
    for i in 0..3 {
        u0[i] -= d01 * u1[i] + d02 * u2[i];
    }
    let n0 = norm3(&u0);
    for c in &mut u0 {
        *c /= n0;
    }
    [u1, u2, u0]
}

impl SectionField for ChartSection {
    fn coeffs_at(&self, model: &Model, y: &BasePoint) -> [f64; 3] {
        let f = self.sign * model.h(y).powf(-0.5);
        let mut out = [0.0; 3];
        match self.kind {
            SectionKind::Axis(i) => out[i] = f,
            SectionKind::Tilted { row, tilts } => {
                let z = match y {
                    BasePoint::Cylinder { p, .. } => p[2],
                    _ => panic!("tilted sections require a cylinder base point"),
                };
                let u = tilted_frame(tilts, z)[row];
                for i in 0..3 {
                    out[i] = f * u[i];
                }
            }
        }
        out
    }
}

/// Options shared by every atlas operation.
#[derive(Debug, Clone, Copy)]
pub struct AtlasOptions {
    pub flow: FlowOptions,
    pub newton_tol: f64,
    pub newton_max_iters: usize,
}

impl Default for AtlasOptions {
    fn default() -> Self {
        AtlasOptions { flow: FlowOptions::default(), newton_tol: 1e-10, newton_max_iters: 50 }
    }
}

/// An exponential coordinate chart. `word` entries are (section, flow
/// time) pairs applied before the coordinate factors.
#[derive(Debug, Clone)]
pub struct ExpChart {
    pub id: usize,
    pub model: Model,
    pub y_sections: Vec<ChartSection>,
    pub x_sections: Vec<ChartSection>,
    pub word: Vec<(ChartSection, f64)>,
    /// Half width of the mu range.
    pub eps: f64,
    /// Domain T(r, M): rho(x) < r exp(-M ||tau||_1). Candidate values
    /// until certified.
    pub r: f64,
    pub m_rate: f64,
}

/// Frame data of a chart at one coordinate point.
#[derive(Debug, Clone)]
pub struct ChartState {
    pub arrow: Arrow,
    pub end: BasePoint,
    /// d(total offset)/d(tau_1..tau_q, mu_1..mu_p), row major g_dim x (q+p).
    pub jac: Vec<f64>,
    /// Coordinate fields in the section frame at the end point: rows
    /// Y_1..Y_q, X_1..X_p, columns tau_1..tau_q, mu_1..mu_p.
    pub w: Vec<f64>,
}

impl ChartState {
    pub fn dim(&self) -> usize {
        (self.w.len() as f64).sqrt().round() as usize
    }

    pub fn v(&self) -> Result<Vec<f64>, AtlasError> {
        let n = self.dim();
        Ok(linalg::invert(&self.w, n)?)
    }

    /// Max |w - I| over the entries.
    pub fn w_deviation(&self) -> f64 {
        let n = self.dim();
        let mut dev = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((self.w[i * n + j] - target).abs());
            }
        }
        dev
    }

    /// g_A norm of a vertical vector with chart coefficients
    /// (c_tau, c_mu): the section frame is orthonormal, so the norm is the
    /// Euclidean length of w c.
    pub fn vertical_norm(&self, c: &[f64]) -> f64 {
        let n = self.dim();
        assert_eq!(c.len(), n);
        let mut s = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.w[i * n + j] * c[j];
            }
            s += row * row;
        }
        s.sqrt()
    }
}

/// Result of a chart inversion.
#[derive(Debug, Clone)]
pub struct Inverse {
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    pub iters: usize,
    pub residual: f64,
}

impl ExpChart {
    pub fn q(&self) -> usize {
        self.y_sections.len()
    }

    pub fn p(&self) -> usize {
        self.x_sections.len()
    }

    pub fn n_coords(&self) -> usize {
        self.q() + self.p()
    }

    /// The factor ladder in application order: word, then mu, then tau
    /// factors. Coordinate factors carry their packed coordinate index
    /// (tau_j -> j, mu_j -> q + j).
    fn factors<'a>(&'a self, mu: &[f64], tau: &[f64]) -> Vec<(&'a ChartSection, f64, Option<usize>)> {
        assert_eq!(mu.len(), self.p());
        assert_eq!(tau.len(), self.q());
        let mut out = Vec::with_capacity(self.word.len() + self.n_coords());
        for (sec, t) in &self.word {
            out.push((sec, *t, None));
        }
        for (j, sec) in self.x_sections.iter().enumerate() {
            out.push((sec, mu[j], Some(self.q() + j)));
        }
        for (j, sec) in self.y_sections.iter().enumerate() {
            out.push((sec, tau[j], Some(j)));
        }
        out
    }

    /// Forward map: the arrow with source x labelled by (mu, tau).
    pub fn forward(
        &self,
        x: &BasePoint,
        mu: &[f64],
        tau: &[f64],
        opts: &AtlasOptions,
    ) -> Result<Arrow, AtlasError> {
        let mut y = *x;
        let mut g = [0.0; 3];
        for (sec, t, _) in self.factors(mu, tau) {
            let a = groupoid_exp_field(&self.model, &y, sec, t, &opts.flow)?;
            for i in 0..3 {
                g[i] += a.g[i];
            }
            y = self.model.act(&y, &a.g);
        }
        Ok(Arrow { source: *x, g })
    }

    /// Forward map with the coordinate differentials: runs one fiber
    /// transport per factor and assembles the Jacobian columns through the
    /// suffix transport products.
    pub fn state(
        &self,
        x: &BasePoint,
        mu: &[f64],
        tau: &[f64],
        opts: &AtlasOptions,
    ) -> Result<ChartState, AtlasError> {
        let model = &self.model;
        let d = model.g_dim();
        let nc = self.n_coords();
        assert_eq!(nc, d, "chart coordinates must parametrize the whole fiber");

        let factors = self.factors(mu, tau);
        let n_factors = factors.len();
        let mut y = *x;
        let mut g_total = [0.0; 3];
        let mut transports: Vec<Vec<f64>> = Vec::with_capacity(n_factors);
        // (coordinate index, factor index, section value after the factor).
        let mut cols: Vec<(usize, usize, [f64; 3])> = Vec::with_capacity(nc);
        for (k, (sec, t, coord)) in factors.iter().enumerate() {
            let tr = transport_field(model, &y, *sec, *t, &opts.flow)?;
            for i in 0..3 {
                g_total[i] += tr.arrow.g[i];
            }
            y = model.act(&y, &tr.arrow.g);
            if let Some(c) = coord {
                cols.push((*c, k, sec.coeffs_at(model, &y)));
            }
            transports.push(tr.matrix);
        }

        // after[k] = E_last ... E_{k+1} (identity for the last factor).
        let eye: Vec<f64> = {
            let mut m = vec![0.0; d * d];
            for i in 0..d {
                m[i * d + i] = 1.0;
            }
            m
        };
        let mut after = vec![eye.clone(); n_factors.max(1)];
        for k in (0..n_factors.saturating_sub(1)).rev() {
            after[k] = linalg::matmul(&after[k + 1], &transports[k + 1], d, d, d);
        }

        let mut jac = vec![0.0; d * nc];
        for (c, k, u) in &cols {
            for i in 0..d {
                let mut s = 0.0;
                for j in 0..d {
                    s += after[*k][i * d + j] * u[j];
                }
                jac[i * nc + c] = s;
            }
        }

        // Section frame at the end point, columns ordered Y then X.
        let mut frame = vec![0.0; d * d];
        for (r, sec) in self.y_sections.iter().chain(self.x_sections.iter()).enumerate() {
            let u = sec.coeffs_at(model, &y);
            for i in 0..d {
                frame[i * d + r] = u[i];
            }
        }
        let mut w = jac.clone();
        linalg::solve_many(&frame, &mut w, d, nc)?;

        let mut g = [0.0; 3];
        g[..3].copy_from_slice(&g_total);
        Ok(ChartState { arrow: Arrow { source: *x, g }, end: y, jac, w })
    }

    /// T(r, M) bound for the base point at the given tau.
    pub fn domain_bound(&self, tau: &[f64]) -> f64 {
        let l1: f64 = tau.iter().map(|t| t.abs()).sum();
        self.r * (-self.m_rate * l1).exp()
    }

    /// Membership in (-eps, eps)^p x T(r, M), with an optional relative
    /// margin (0 = boundary, 0.1 = 10% inside).
    pub fn contains(&self, x: &BasePoint, mu: &[f64], tau: &[f64], margin: f64) -> bool {
        let rho = self.model.rho(x);
        if rho >= (1.0 - margin) * self.domain_bound(tau) {
            return false;
        }
        mu.iter().all(|m| m.abs() < (1.0 - margin) * self.eps)
    }

    /// Newton inversion with the transport Jacobian. The seed defaults to
    /// zero coordinates; the damped iteration stops at `newton_tol` on the
    /// offset residual.
    pub fn invert(
        &self,
        arrow: &Arrow,
        seed: Option<(&[f64], &[f64])>,
        opts: &AtlasOptions,
    ) -> Result<Inverse, AtlasError> {
        let d = self.model.g_dim();
        let nc = self.n_coords();
        let x = arrow.source;
        let (mut mu, mut tau) = match seed {
            Some((m, t)) => (m.to_vec(), t.to_vec()),
            None => (vec![0.0; self.p()], vec![0.0; self.q()]),
        };

        let res_norm = |g: &[f64; 3]| -> f64 {
            let mut n = 0.0f64;
            for i in 0..d {
                n = n.max((g[i] - arrow.g[i]).abs());
            }
            n
        };

        let mut residual = f64::INFINITY;
        for iter in 0..opts.newton_max_iters {
            let st = self.state(&x, &mu, &tau, opts)?;
            residual = res_norm(&st.arrow.g);
            if residual <= opts.newton_tol {
                return Ok(Inverse { mu, tau, iters: iter, residual });
            }
            let mut step = vec![0.0; nc];
            for i in 0..d {
                step[i] = st.arrow.g[i] - arrow.g[i];
            }
            linalg::solve(&st.jac, &mut step, nc)?;

            // Damped update: retry with half steps while the cheap forward
            // residual fails to decrease.
            let mut lambda = 1.0;
            loop {
                let mut tau_new = tau.clone();
                let mut mu_new = mu.clone();
                for j in 0..self.q() {
                    tau_new[j] -= lambda * step[j];
                }
                for j in 0..self.p() {
                    mu_new[j] -= lambda * step[self.q() + j];
                }
                let probe = self.forward(&x, &mu_new, &tau_new, opts)?;
                if res_norm(&probe.g) < residual || lambda < 1.0 / 256.0 {
                    tau = tau_new;
                    mu = mu_new;
                    break;
                }
                lambda *= 0.5;
            }
        }
        Err(AtlasError::Inversion { iters: opts.newton_max_iters, residual })
    }
}

/// The builtin atlas of a model. The isotropy sections are shared by all
/// charts; only the tangential sections and words differ. For p = 0 the
/// charts coincide (the overlap map is the identity), so two copies are
/// kept purely to exercise the chart plumbing; the cylinder gets three
/// genuinely different charts.
pub fn builtin_atlas(model: &Model) -> Vec<ExpChart> {
    let r = model.params.collar * 0.5;
    let m_rate = 1.0;
    let chart = |id: usize,
                 y: Vec<ChartSection>,
                 x: Vec<ChartSection>,
                 word: Vec<(ChartSection, f64)>,
                 eps: f64| ExpChart {
        id,
        model: model.clone(),
        y_sections: y,
        x_sections: x,
        word,
        eps,
        r,
        m_rate,
    };
    match model.id {
        ModelId::ParabolicCircle => {
            let y = vec![ChartSection::axis(0)];
            vec![
                chart(0, y.clone(), vec![], vec![], 0.0),
                chart(1, y, vec![], vec![], 0.0),
            ]
        }
        ModelId::StereoSphere => {
            let y = vec![ChartSection::axis(0), ChartSection::axis(1)];
            vec![
                chart(0, y.clone(), vec![], vec![], 0.0),
                chart(1, y, vec![], vec![], 0.0),
            ]
        }
        ModelId::CylinderProduct => {
            let y = vec![
                ChartSection::tilted(0, CYLINDER_TILTS),
                ChartSection::tilted(1, CYLINDER_TILTS),
            ];
            let x = ChartSection::tilted(2, CYLINDER_TILTS);
            let z = ChartSection::tilted(2, CYLINDER_WORD_TILTS);
            let eps = 0.4;
            vec![
                chart(0, y.clone(), vec![x], vec![], eps),
                chart(1, y.clone(), vec![x], vec![(z, 0.35)], eps),
                chart(2, y, vec![x.flipped()], vec![(z.flipped(), 0.2)], eps),
            ]
        }
    }
}
