//! Flows of algebroid sections: the base flow of the anchor field, the
//! groupoid exponential along the right invariant lift, and their
//! variational transports.
//!
//! The two flows are computed independently. `base_flow` integrates the
//! anchor field in intrinsic base coordinates; `groupoid_exp` integrates
//! the right invariant field in the group offset of the arrow. Since the
//! target of an offset is an exact closed form, agreement of
//! `target(groupoid_exp(...))` with the base flow endpoint is a genuine
//! two-route consistency check, and the tests pin it at 1e-9.

pub mod distance;
pub mod identities;
pub mod variational;

use thiserror::Error;

use crate::models::{Arrow, BasePoint, Model, SectionCombo};
use crate::util::ode::{integrate, OdeError, OdeOptions, OdeSolution};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("flow integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error("geodesic shooting failed: {0}")]
    Shooting(#[from] crate::util::newton::NewtonError),
}

/// Integration options for every flow in this module. Tight tolerances by
/// default: downstream checks ask for 1e-8 end to end.
#[derive(Debug, Clone, Copy)]
pub struct FlowOptions {
    pub ode: OdeOptions,
}

impl Default for FlowOptions {
    fn default() -> Self {
        let ode = OdeOptions { abs_tol: 1e-12, rel_tol: 1e-11, ..OdeOptions::default() };
        FlowOptions { ode }
    }
}

/// A coefficient field on the algebroid: the value at a base point is a
/// velocity vector in the translation frame. `SectionCombo` is the constant
/// coefficient case (with optional g_A normalization); the atlas charts
/// supply genuinely position dependent frames.
pub trait SectionField {
    fn coeffs_at(&self, model: &Model, y: &BasePoint) -> [f64; 3];
}

impl SectionField for SectionCombo {
    fn coeffs_at(&self, model: &Model, y: &BasePoint) -> [f64; 3] {
        let factor = if self.normalized { model.h(y).powf(-0.5) } else { 1.0 };
        let mut out = [0.0; 3];
        for i in 0..model.g_dim() {
            out[i] = factor * self.coeffs[i];
        }
        out
    }
}

/// Result of a base flow: endpoint plus the dense trajectory.
#[derive(Debug)]
pub struct BaseFlow {
    pub end: BasePoint,
    pub solution: OdeSolution,
}

impl BaseFlow {
    /// Trajectory point at intermediate time (clamped to the solved span).
    pub fn at(&self, model: &Model, t: f64) -> BasePoint {
        model.point_from_coords(&self.solution.eval_vec(t))
    }
}

/// Flow of the anchor field nu(X) from x for time t.
pub fn base_flow(
    model: &Model,
    x: &BasePoint,
    combo: &SectionCombo,
    t: f64,
    opts: &FlowOptions,
) -> Result<BaseFlow, FlowError> {
    let y0 = model.coords(x);
    let rhs = |_t: f64, c: &[f64], dc: &mut [f64]| {
        let p = model.point_from_coords(c);
        let v = model.base_velocity(&p, combo);
        dc.copy_from_slice(&v);
    };
    let sol = integrate(rhs, 0.0, t, &y0, &opts.ode)?;
    let end = model.point_from_coords(&sol.y_end);
    Ok(BaseFlow { end, solution: sol })
}

/// Exponential of a coefficient field: the time-t flow of the right
/// invariant lift from the unit at x, returned as an arrow with source x.
pub fn groupoid_exp_field<F: SectionField + ?Sized>(
    model: &Model,
    x: &BasePoint,
    field: &F,
    t: f64,
    opts: &FlowOptions,
) -> Result<Arrow, FlowError> {
    let dim = model.g_dim();
    let y0 = vec![0.0; dim];
    let rhs = |_t: f64, g: &[f64], dg: &mut [f64]| {
        let v = field.coeffs_at(model, &model.act(x, g));
        dg.copy_from_slice(&v[..dim]);
    };
    let sol = integrate(rhs, 0.0, t, &y0, &opts.ode)?;
    let mut g = [0.0; 3];
    g[..dim].copy_from_slice(&sol.y_end);
    Ok(Arrow { source: *x, g })
}

/// Exponential of a section with constant coefficients.
pub fn groupoid_exp(
    model: &Model,
    x: &BasePoint,
    combo: &SectionCombo,
    t: f64,
    opts: &FlowOptions,
) -> Result<Arrow, FlowError> {
    groupoid_exp_field(model, x, combo, t, opts)
}

/// Exponential evaluated along a dense time span, for variational and
/// multiplication systems that need intermediate arrows.
pub struct ExpPath {
    source: BasePoint,
    dim: usize,
    solution: OdeSolution,
}

impl ExpPath {
    pub fn at(&self, t: f64) -> Arrow {
        let v = self.solution.eval_vec(t);
        let mut g = [0.0; 3];
        g[..self.dim].copy_from_slice(&v);
        Arrow { source: self.source, g }
    }

    pub fn end(&self) -> Arrow {
        self.at(self.solution.t_end)
    }
}

pub fn groupoid_exp_path_field<F: SectionField + ?Sized>(
    model: &Model,
    x: &BasePoint,
    field: &F,
    t: f64,
    opts: &FlowOptions,
) -> Result<ExpPath, FlowError> {
    let dim = model.g_dim();
    let y0 = vec![0.0; dim];
    let rhs = |_t: f64, g: &[f64], dg: &mut [f64]| {
        let v = field.coeffs_at(model, &model.act(x, g));
        dg.copy_from_slice(&v[..dim]);
    };
    let sol = integrate(rhs, 0.0, t, &y0, &opts.ode)?;
    Ok(ExpPath { source: *x, dim, solution: sol })
}

pub fn groupoid_exp_path(
    model: &Model,
    x: &BasePoint,
    combo: &SectionCombo,
    t: f64,
    opts: &FlowOptions,
) -> Result<ExpPath, FlowError> {
    groupoid_exp_path_field(model, x, combo, t, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Model, ModelId};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn opts() -> FlowOptions {
        FlowOptions::default()
    }

    #[test]
    fn circle_base_flow_obeys_the_cot_oracle() {
        // Flow of (1 - cos theta) d/dtheta: cot(theta_t/2) = cot(theta_0/2) - t.
        let model = Model::with_defaults(ModelId::ParabolicCircle);
        let combo = SectionCombo::frame(0);
        for &theta0 in &[PI / 4.0, PI / 2.0, PI, 3.0 * PI / 2.0] {
            for k in -8..=8 {
                let t = 0.25 * k as f64;
                let flow =
                    base_flow(&model, &BasePoint::Circle { theta: theta0 }, &combo, t, &opts())
                        .unwrap();
                let theta_t = match flow.end {
                    BasePoint::Circle { theta } => theta,
                    _ => unreachable!(),
                };
                let lhs = 1.0 / (theta_t / 2.0).tan();
                let rhs = 1.0 / (theta0 / 2.0).tan() - t;
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn circle_base_flow_hits_the_worked_value() {
        let model = Model::with_defaults(ModelId::ParabolicCircle);
        let combo = SectionCombo::frame(0);
        let flow =
            base_flow(&model, &BasePoint::Circle { theta: PI }, &combo, 1.0, &opts()).unwrap();
        assert_abs_diff_eq!(
            model.base_distance(&flow.end, &BasePoint::Circle { theta: 3.0 * PI / 2.0 }),
            0.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn base_flow_agrees_with_exact_action_for_frame_sections() {
        // For unnormalized frame sections the flow is translation by t in
        // the action coordinate, available in closed form.
        for id in [ModelId::ParabolicCircle, ModelId::StereoSphere, ModelId::CylinderProduct] {
            let model = Model::with_defaults(id);
            for axis in 0..model.g_dim() {
                let combo = SectionCombo::frame(axis);
                let x = model.point_at_dist(0.9, 1.3);
                let t = 0.8;
                let flow = base_flow(&model, &x, &combo, t, &opts()).unwrap();
                let mut g = [0.0; 3];
                g[axis] = t;
                let exact = model.act(&x, &g);
                assert!(
                    model.base_distance(&flow.end, &exact) < 1e-9,
                    "{} axis {axis}",
                    model.id.name()
                );
            }
        }
    }

    #[test]
    fn exp_target_matches_base_flow_for_normalized_combos() {
        for id in [ModelId::ParabolicCircle, ModelId::StereoSphere, ModelId::CylinderProduct] {
            let model = Model::with_defaults(id);
            let mut combo = SectionCombo::frame_normalized(0);
            combo.coeffs[model.g_dim() - 1] = -0.6;
            for &(d, t) in &[(0.4, 0.7), (1.2, -1.1), (2.0, 1.5)] {
                let x = model.point_at_dist(d, 0.8);
                let arrow = groupoid_exp(&model, &x, &combo, t, &opts()).unwrap();
                assert_eq!(arrow.source, x);
                let flow = base_flow(&model, &x, &combo, t, &opts()).unwrap();
                assert!(
                    model.base_distance(&model.target(&arrow), &flow.end) < 1e-9,
                    "{}: exp/flow mismatch",
                    model.id.name()
                );
            }
        }
    }

    #[test]
    fn exp_is_a_one_parameter_family() {
        let model = Model::with_defaults(ModelId::StereoSphere);
        let combo = SectionCombo { coeffs: [0.5, -0.8, 0.0], normalized: true };
        let x = model.point_at_dist(1.1, 0.3);
        let a_full = groupoid_exp(&model, &x, &combo, 1.0, &opts()).unwrap();
        let a_half = groupoid_exp(&model, &x, &combo, 0.5, &opts()).unwrap();
        let mid = model.target(&a_half);
        let a_rest = groupoid_exp(&model, &mid, &combo, 0.5, &opts()).unwrap();
        let composed = model.compose(&a_rest, &a_half).unwrap();
        for i in 0..model.g_dim() {
            assert_abs_diff_eq!(composed.g[i], a_full.g[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn exp_path_dense_output_is_consistent() {
        let model = Model::with_defaults(ModelId::ParabolicCircle);
        let combo = SectionCombo::frame_normalized(0);
        let x = BasePoint::Circle { theta: 1.0 };
        let path = groupoid_exp_path(&model, &x, &combo, 2.0, &opts()).unwrap();
        let direct = groupoid_exp(&model, &x, &combo, 1.3, &opts()).unwrap();
        assert_abs_diff_eq!(path.at(1.3).g[0], direct.g[0], epsilon = 1e-9);
    }

    #[test]
    fn m1_points_are_fixed_and_exp_is_linear_there() {
        // On the stratum the target never moves, so the group velocity is
        // constant and exp t X = t * coefficients exactly.
        for id in [ModelId::ParabolicCircle, ModelId::StereoSphere] {
            let model = Model::with_defaults(id);
            let x = model.point_at_dist(0.0, 0.0);
            let combo = SectionCombo { coeffs: [0.7, -0.4, 0.0], normalized: true };
            let arrow = groupoid_exp(&model, &x, &combo, 2.0, &opts()).unwrap();
            let scale = model.h(&x).powf(-0.5);
            for i in 0..model.g_dim() {
                assert_abs_diff_eq!(arrow.g[i], 2.0 * combo.coeffs[i] * scale, epsilon = 1e-10);
            }
            assert_eq!(model.target(&arrow), x);
        }
    }
}
