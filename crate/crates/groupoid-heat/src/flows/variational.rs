//! Variational flows: derivatives of the base flow and the induced
//! transport on the algebroid.
//!
//! Two systems are integrated here.
//!
//! * `variational_flow` adjoins the matrix equation J' = Dv J to the base
//!   flow and reports d(E^nu_{tX}) in orthonormal frames of (TM, g-bar).
//! * `transport` computes E_{tX} : A_x -> A_{end} in the translation frame
//!   through the fiber variational system: with beta the group offset of
//!   exp tX and xi the action coordinate of the start point, E = I + K where
//!   K = d(beta)/d(xi). This form stays regular across M1, where the action
//!   coordinate itself blows up; there E = I exactly.
//!
//! Off the stratum the two routes are related by conjugation with the
//! anchor, which the tests exercise as a two-route consistency check.

use super::{FlowError, FlowOptions, SectionField};
use crate::models::{sphere, Arrow, BasePoint, Model, ModelId, SectionCombo};
use crate::util::ode::integrate;

/// Endpoint and base frame Jacobian of a base flow.
#[derive(Debug, Clone)]
pub struct VariationalBase {
    pub end: BasePoint,
    /// Row major base_dim x base_dim matrix in orthonormal frames.
    pub jacobian: Vec<f64>,
}

/// Endpoint arrow and translation frame transport of an exponential.
#[derive(Debug, Clone)]
pub struct Transport {
    pub arrow: Arrow,
    /// Row major g_dim x g_dim matrix: E_{tX} in the translation frame.
    pub matrix: Vec<f64>,
}

const FD_STEP: f64 = 1e-6;

/// Orthonormal frame of (T_x M, g-bar) as intrinsic coordinate vectors.
pub fn base_frame(model: &Model, x: &BasePoint) -> Vec<Vec<f64>> {
    match (model.id, x) {
        (ModelId::ParabolicCircle, _) => vec![vec![1.0]],
        (ModelId::StereoSphere, BasePoint::Sphere { p }) => {
            let [e1, e2] = sphere::tangent_basis(*p);
            vec![e1.to_vec(), e2.to_vec()]
        }
        (ModelId::CylinderProduct, BasePoint::Cylinder { p, .. }) => {
            let [e1, e2] = sphere::tangent_basis(*p);
            vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, e1[0], e1[1], e1[2]],
                vec![0.0, e2[0], e2[1], e2[2]],
            ]
        }
        _ => panic!("base point does not belong to model {}", model.id.name()),
    }
}

/// Base flow with the adjoined variational system.
pub fn variational_flow(
    model: &Model,
    x: &BasePoint,
    combo: &SectionCombo,
    t: f64,
    opts: &FlowOptions,
) -> Result<VariationalBase, FlowError> {
    let m = model.coords(x).len();
    let mut y0 = model.coords(x);
    // Identity in intrinsic coordinates.
    for i in 0..m {
        for j in 0..m {
            y0.push(if i == j { 1.0 } else { 0.0 });
        }
    }
    let velocity = |c: &[f64]| -> Vec<f64> {
        model.base_velocity(&model.point_from_coords(c), combo)
    };
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let c = &y[..m];
        let v = velocity(c);
        dy[..m].copy_from_slice(&v);
        // Dv by central differences, then J' = Dv J.
        let mut dv = vec![0.0; m * m];
        for j in 0..m {
            let h = FD_STEP * c[j].abs().max(1.0);
            let mut cp = c.to_vec();
            let mut cm = c.to_vec();
            cp[j] += h;
            cm[j] -= h;
            let vp = velocity(&cp);
            let vm = velocity(&cm);
            for i in 0..m {
                dv[i * m + j] = (vp[i] - vm[i]) / (2.0 * h);
            }
        }
        for i in 0..m {
            for j in 0..m {
                let mut s = 0.0;
                for k in 0..m {
                    s += dv[i * m + k] * y[m + k * m + j];
                }
                dy[m + i * m + j] = s;
            }
        }
    };
    let sol = integrate(rhs, 0.0, t, &y0, &opts.ode)?;
    let end = model.point_from_coords(&sol.y_end[..m]);
    let j_raw = &sol.y_end[m..];

    let frame_start = base_frame(model, x);
    let frame_end = base_frame(model, &end);
    let dim = frame_start.len();
    let mut jacobian = vec![0.0; dim * dim];
    for (col, ej) in frame_start.iter().enumerate() {
        // Push e_j through J, then project on the end frame.
        let mut w = vec![0.0; m];
        for i in 0..m {
            for k in 0..m {
                w[i] += j_raw[i * m + k] * ej[k];
            }
        }
        for (row, ei) in frame_end.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..m {
                s += ei[i] * w[i];
            }
            jacobian[row * dim + col] = s;
        }
    }
    Ok(VariationalBase { end, jacobian })
}

/// Exponential with the adjoined fiber variational system: returns the
/// arrow exp tX at x and the transport E_{tX} in the translation frame.
pub fn transport_field<F: SectionField + ?Sized>(
    model: &Model,
    x: &BasePoint,
    field: &F,
    t: f64,
    opts: &FlowOptions,
) -> Result<Transport, FlowError> {
    let d = model.g_dim();
    // State: beta (d), then K = d(beta)/d(xi_0) row major (d x d), K(0) = 0.
    let y0 = vec![0.0; d + d * d];
    // Frame coefficients of X at x . (shift + beta), as a function of the
    // translation offset shift applied to the start point.
    let coeff = |shift: &[f64], beta: &[f64]| -> [f64; 3] {
        let mut g = [0.0; 3];
        for i in 0..d {
            g[i] = shift[i] + beta[i];
        }
        field.coeffs_at(model, &model.act(x, &g[..d]))
    };
    let zero_shift = vec![0.0; d];
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let beta = &y[..d];
        let c = coeff(&zero_shift, beta);
        dy[..d].copy_from_slice(&c[..d]);
        // dc/d(xi) by central differences in the shift.
        let mut dc = vec![0.0; d * d];
        for j in 0..d {
            let mut sp = vec![0.0; d];
            let mut sm = vec![0.0; d];
            sp[j] = FD_STEP;
            sm[j] = -FD_STEP;
            let cp = coeff(&sp, beta);
            let cm = coeff(&sm, beta);
            for i in 0..d {
                dc[i * d + j] = (cp[i] - cm[i]) / (2.0 * FD_STEP);
            }
        }
        // K' = dc (I + K).
        for i in 0..d {
            for j in 0..d {
                let mut s = dc[i * d + j];
                for k in 0..d {
                    s += dc[i * d + k] * y[d + k * d + j];
                }
                dy[d + i * d + j] = s;
            }
        }
    };
    let sol = integrate(rhs, 0.0, t, &y0, &opts.ode)?;
    let mut g = [0.0; 3];
    g[..d].copy_from_slice(&sol.y_end[..d]);
    let mut matrix = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            matrix[i * d + j] =
                sol.y_end[d + i * d + j] + if i == j { 1.0 } else { 0.0 };
        }
    }
    Ok(Transport { arrow: Arrow { source: *x, g }, matrix })
}

pub fn transport(
    model: &Model,
    x: &BasePoint,
    combo: &SectionCombo,
    t: f64,
    opts: &FlowOptions,
) -> Result<Transport, FlowError> {
    transport_field(model, x, combo, t, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelId;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn opts() -> FlowOptions {
        FlowOptions::default()
    }

    #[test]
    fn circle_variational_matches_the_worked_value() {
        // Flow of (1 - cos theta) d/dtheta from theta = pi for time 1:
        // d(flow)/d(theta_0) = (1 - cos theta_t) / (1 - cos theta_0) = 1/2.
        let model = Model::with_defaults(ModelId::ParabolicCircle);
        let combo = SectionCombo::frame(0);
        let out =
            variational_flow(&model, &BasePoint::Circle { theta: PI }, &combo, 1.0, &opts())
                .unwrap();
        assert_abs_diff_eq!(out.jacobian[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(
            model.base_distance(&out.end, &BasePoint::Circle { theta: 3.0 * PI / 2.0 }),
            0.0,
            epsilon = 1e-9
        );
    }

    #[test]
    fn circle_variational_matches_the_closed_form_elsewhere() {
        let model = Model::with_defaults(ModelId::ParabolicCircle);
        let combo = SectionCombo::frame(0);
        for &(theta0, t) in &[(0.7, 0.5), (2.0, -1.2), (4.5, 2.0)] {
            let out = variational_flow(
                &model,
                &BasePoint::Circle { theta: theta0 },
                &combo,
                t,
                &opts(),
            )
            .unwrap();
            let theta_t = match out.end {
                BasePoint::Circle { theta } => theta,
                _ => unreachable!(),
            };
            let expect = (1.0 - theta_t.cos()) / (1.0 - theta0.cos());
            assert_abs_diff_eq!(out.jacobian[0], expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn frame_sections_transport_trivially() {
        // Unnormalized frame sections have constant group velocity, so the
        // fiber variational system vanishes identically.
        for id in [ModelId::ParabolicCircle, ModelId::StereoSphere, ModelId::CylinderProduct] {
            let model = Model::with_defaults(id);
            let combo = SectionCombo::frame(model.g_dim() - 1);
            let x = model.point_at_dist(0.8, 0.9);
            let out = transport(&model, &x, &combo, 1.3, &opts()).unwrap();
            let d = model.g_dim();
            for i in 0..d {
                for j in 0..d {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(out.matrix[i * d + j], expect, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn transport_is_exactly_identity_on_the_stratum() {
        for id in [ModelId::ParabolicCircle, ModelId::StereoSphere] {
            let model = Model::with_defaults(id);
            let x = model.point_at_dist(0.0, 0.3);
            let combo = SectionCombo { coeffs: [0.8, -0.5, 0.0], normalized: true };
            let out = transport(&model, &x, &combo, 1.0, &opts()).unwrap();
            let d = model.g_dim();
            for i in 0..d {
                for j in 0..d {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_eq!(out.matrix[i * d + j], expect);
                }
            }
        }
    }

    #[test]
    fn fiber_and_base_routes_agree_off_the_stratum() {
        // E in the translation frame, computed from the base Jacobian by
        // conjugating with the anchor columns, must match the fiber route.
        let model = Model::with_defaults(ModelId::StereoSphere);
        let combo = SectionCombo { coeffs: [0.6, 0.3, 0.0], normalized: true };
        let x = model.point_at_dist(1.4, 0.7);
        let t = 0.9;
        let fiber = transport(&model, &x, &combo, t, &opts()).unwrap();
        let base = variational_flow(&model, &x, &combo, t, &opts()).unwrap();

        // Reassemble the ambient Jacobian action on anchor columns from the
        // frame representation.
        let start_frame = base_frame(&model, &x);
        let end_frame = base_frame(&model, &base.end);
        let vx = sphere::anchor_fields(match x {
            BasePoint::Sphere { p } => p,
            _ => unreachable!(),
        });
        let vy = sphere::anchor_fields(match base.end {
            BasePoint::Sphere { p } => p,
            _ => unreachable!(),
        });
        let dim = 2;
        for j in 0..dim {
            // Coordinates of V_j(x) in the start frame.
            let mut cj = [0.0; 2];
            for (r, e) in start_frame.iter().enumerate() {
                cj[r] = (0..3).map(|k| e[k] * vx[j][k]).sum();
            }
            // Push through the frame Jacobian.
            let mut w_frame = [0.0; 2];
            for r in 0..dim {
                for k in 0..dim {
                    w_frame[r] += base.jacobian[r * dim + k] * cj[k];
                }
            }
            // Back to ambient, then expand in V(end).
            let mut w = [0.0; 3];
            for (r, e) in end_frame.iter().enumerate() {
                for k in 0..3 {
                    w[k] += w_frame[r] * e[k];
                }
            }
            for i in 0..dim {
                let norm2_end: f64 = (0..3).map(|k| vy[i][k] * vy[i][k]).sum();
                let dot: f64 = (0..3).map(|k| w[k] * vy[i][k]).sum();
                let via_base = dot / norm2_end;
                assert_abs_diff_eq!(via_base, fiber.matrix[i * dim + j], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn transport_endpoint_agrees_with_plain_exp() {
        let model = Model::with_defaults(ModelId::CylinderProduct);
        let combo = SectionCombo { coeffs: [0.4, -0.3, 0.5], normalized: true };
        let x = model.point_at_dist(0.7, 1.2);
        let via_transport = transport(&model, &x, &combo, 1.1, &opts()).unwrap();
        let direct = super::super::groupoid_exp(&model, &x, &combo, 1.1, &opts()).unwrap();
        for i in 0..model.g_dim() {
            assert_abs_diff_eq!(via_transport.arrow.g[i], direct.g[i], epsilon = 1e-10);
        }
    }
}
