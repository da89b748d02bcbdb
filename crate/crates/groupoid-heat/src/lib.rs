//! Numerical laboratory for boundary groupoids and their fiberwise heat kernels.
//!
//! The crate builds three concrete groupoid models (a parabolic vector field on
//! the circle, a translation action on the sphere in stereographic coordinates,
//! and a cylinder product), equips them with exponential coordinate atlases,
//! runs fiberwise heat parametrices with Volterra corrections, and measures the
//! quantitative behaviour of all of it: degeneracy rates, chart certificates,
//! kernel quality, and transverse regularity of the resulting kernels.
//!
//! Layout:
//! * [`util`]: quadrature, ODE integration, cutoffs, fits, small linear algebra.
//! * [`models`]: the three groupoid realizations and degeneracy measurements.
//! * [`flows`]: exponential transport of sections and flow identities.
//! * [`atlas`]: exponential charts, certification, multiplication in charts.
//! * [`heat`]: fiber geometry, parametrix coefficients, Volterra correction.
//! * [`regularity`]: kernel views, derivative pairings, transverse smoothness.
//! * [`config`], [`report`], [`verification`]: run configuration and artifacts.

pub mod atlas;
pub mod flows;
pub mod heat;
pub mod models;
pub mod util;
