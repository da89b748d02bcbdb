//! Shared numerical building blocks.
//!
//! Everything here is model independent: quadrature rules, a Runge-Kutta
//! integrator with dense output, smooth cutoff functions, exponential and
//! power-law envelope fits, small dense linear algebra, finite difference
//! stencils, and deterministic random streams.

pub mod cutoff;
pub mod fit;
pub mod linalg;
pub mod newton;
pub mod ode;
pub mod quad;
pub mod rng;
pub mod spline;
pub mod stencil;
