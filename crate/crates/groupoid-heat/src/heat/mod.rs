//! Fiberwise heat kernels: exact fiber geometry, Levi parametrix, and the
//! Volterra correction series.
//!
//! Everything here works in the reduced picture. A kernel on the action
//! stratum restricted to one orbit closure is a function `K(row, g)` where
//! `row` locates the arrow's source along a reference fiber (in the global
//! translation chart) and `g` is the group offset. Right invariance of the
//! groupoid convolution is then automatic: composing against a kernel only
//! ever shifts rows, so each row can be corrected independently. The left
//! factor of every convolution the series needs (`G_N` against something,
//! `R_N` against something) is analytic in the row, which is what makes the
//! per-row scheme closed.
//!
//! Module layout:
//! * [`geometry`]: arc-length tables, geodesic fans, fiber distance.
//! * [`reference`]: dense Crank-Nicolson solver used as the independent
//!   check on the parametrix coefficients and the corrected kernel.
//! * [`parametrix`]: transport coefficients and the `G_N`/`R_N` evaluators.
//! * [`convolve`]: reduced convolution of kernel factors over one fiber.
//! * [`volterra`]: the alternating correction series and its diagnostics.

use crate::models::ModelError;
use crate::util::linalg::LinalgError;
use crate::util::ode::{OdeError, OdeOptions};
use thiserror::Error;

pub mod convolve;
pub mod geometry;
pub mod parametrix;
pub mod reference;
pub mod volterra;

pub use convolve::{convolve, FiberMap, GaussianKernel, OffsetGrid, RowKernel};
pub use geometry::FiberGeometry;
pub use parametrix::{heat_coefficients, HeatCoefficients, ParametrixKernel};
pub use reference::{extract_leading_coefficient, reference_heat_kernel, ReferenceSolution};
pub use volterra::{volterra_sum, FiberKernel, VolterraDiagnostics};

#[derive(Debug, Error)]
pub enum HeatError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("fiber heat flow not implemented for `{model}` (fiber dimension {q})")]
    UnsupportedFiber { model: &'static str, q: usize },
    #[error("parametrix order {order} too low for fiber dimension {q}; need order > q/2")]
    OrderTooLow { order: usize, q: usize },
    #[error("geodesic ray {ray} left the coordinate box at radius {radius:.3e}")]
    GeodesicEscape { ray: usize, radius: f64 },
    #[error("quadrature tail estimate {estimate:.3e} exceeds budget {budget:.3e}")]
    TruncationTail { estimate: f64, budget: f64 },
    #[error("offset grid spans {have:.3} but the kernel stack needs {needed:.3}")]
    BoxTooSmall { needed: f64, have: f64 },
    #[error("point outside the invertible range of the exponential table: {what}")]
    OutsideTable { what: &'static str },
}

/// Tuning knobs for the parametrix and Volterra stages. Defaults are sized
/// for the circle fibers (q = 1); sphere runs override the grid to something
/// coarser because every row there carries its own geodesic fan.
#[derive(Debug, Clone)]
pub struct HeatOptions {
    /// Cutoff scale: the parametrix lives on fiber distance < `rho0` and is
    /// untouched below `rho0 / 2`.
    pub rho0: f64,
    /// Number of transport coefficients beyond the leading one.
    pub order: usize,
    /// Offset grid step; also the stencil step for every finite difference
    /// taken on kernel grids.
    pub grid_step: f64,
    /// Half-width of the offset window. Zero means: size it from `t_max`.
    pub box_radius: f64,
    /// Largest time the kernel will be asked for.
    pub t_max: f64,
    /// Gauss-Legendre nodes for the time integrals of the series.
    pub time_nodes: usize,
    /// Nodes per panel in composite position quadrature.
    pub panel_nodes: usize,
    /// Minimum total position nodes per axis.
    pub min_axis_nodes: usize,
    /// Gauss-Hermite nodes for the short-time endpoint of time integrals.
    pub hermite_nodes: usize,
    /// Rays in the geodesic fan (q = 2 only).
    pub rays: usize,
    /// Radial table step. Zero means: half the grid step.
    pub radial_step: f64,
    /// Tail budget for truncated position integrals.
    pub tail_budget: f64,
    pub ode: OdeOptions,
}

impl Default for HeatOptions {
    fn default() -> Self {
        HeatOptions {
            rho0: 0.5,
            order: 3,
            grid_step: 0.025,
            box_radius: 0.0,
            t_max: 0.2,
            time_nodes: 24,
            panel_nodes: 8,
            min_axis_nodes: 32,
            hermite_nodes: 20,
            rays: 32,
            radial_step: 0.0,
            tail_budget: 1e-8,
            ode: OdeOptions { dense: false, ..OdeOptions::default() },
        }
    }
}

impl HeatOptions {
    pub fn radial_step(&self) -> f64 {
        if self.radial_step > 0.0 {
            self.radial_step
        } else {
            0.5 * self.grid_step
        }
    }

    pub fn box_radius(&self) -> f64 {
        if self.box_radius > 0.0 {
            self.box_radius
        } else {
            (6.0 * self.t_max.sqrt()).max(2.0 * self.rho0)
        }
    }

    /// Coarse preset for sphere fibers: geodesic fans per row are expensive,
    /// and the q = 2 run is a qualitative check, not a tolerance race.
    pub fn coarse_q2(mut self) -> Self {
        self.grid_step = 0.1;
        self.time_nodes = 12;
        self.panel_nodes = 6;
        self.min_axis_nodes = 18;
        self.rays = 24;
        self.radial_step = 0.025;
        self
    }
}
