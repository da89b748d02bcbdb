//! The three built-in boundary groupoid realizations.
//!
//! Each model realizes G = (M0 x M0) u (M1 x M1 x R^q) through an explicit
//! translation action: a global "action coordinate" on M0 in which the
//! degenerate sections flow by straight translation. Arrows are stored as
//! (source point, group offset); source, target, multiplication and inverse
//! are then exact closed forms, which keeps the groupoid axioms tight to
//! machine precision and pushes all numerical error into flows and kernels
//! where it can be controlled.
//!
//! * `parabolic-circle`: M = S^1, one section with anchor (1 - cos t)d/dt,
//!   M1 = {t = 0}, p = 0, q = 1.
//! * `stereo-sphere`: M = S^2, two sections pulling back the plane
//!   translations under stereographic projection from the north pole N,
//!   M1 = {N}, p = 0, q = 2.
//! * `cylinder-product`: pair groupoid of S^1 times stereo-sphere,
//!   M1 = S^1 x {N}, p = 1, q = 2.

pub mod circle;
pub mod cylinder;
pub mod degeneracy;
pub mod sphere;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::cutoff::{smooth_step_jet, Jet2};

/// Tolerance for the composability check s(a) = t(b) in the realization.
pub const COMPOSE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown model name `{0}`")]
    UnknownModel(String),
    #[error("model parameter `{name}` must be positive, got {value}")]
    NonPositiveParam { name: &'static str, value: f64 },
    #[error("arrows not composable: target/source gap {gap:.3e}")]
    NotComposable { gap: f64 },
    #[error("arrows lie on different fibers (source gap {gap:.3e})")]
    DifferentFibers { gap: f64 },
}

/// Identifier of a built-in model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    ParabolicCircle,
    StereoSphere,
    CylinderProduct,
}

impl ModelId {
    pub fn parse(name: &str) -> Result<ModelId, ModelError> {
        match name {
            "parabolic-circle" => Ok(ModelId::ParabolicCircle),
            "stereo-sphere" => Ok(ModelId::StereoSphere),
            "cylinder-product" => Ok(ModelId::CylinderProduct),
            other => Err(ModelError::UnknownModel(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelId::ParabolicCircle => "parabolic-circle",
            ModelId::StereoSphere => "stereo-sphere",
            ModelId::CylinderProduct => "cylinder-product",
        }
    }
}

/// Tunable model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Amplitude of the conformal factor h in the fiber metric g_A = h I.
    pub h_amplitude: f64,
    /// Collar radius: rho equals the distance to M1 for distance below
    /// collar/2 and saturates to 1 beyond the collar.
    pub collar: f64,
    /// Overall scale multiplying the anchor map. The degenerate value 0 is
    /// allowed (it produces a bundle of groups) and is used to exercise the
    /// `neither` branch of the degeneracy classification.
    pub anchor_scale: f64,
}

impl ModelParams {
    pub fn defaults(id: ModelId) -> ModelParams {
        let h_amplitude = match id {
            ModelId::ParabolicCircle => 0.3,
            ModelId::StereoSphere => 0.2,
            ModelId::CylinderProduct => 0.15,
        };
        ModelParams { h_amplitude, collar: 0.5, anchor_scale: 1.0 }
    }

    fn validate(&self, id: ModelId) -> Result<(), ModelError> {
        if !(self.collar > 0.0) {
            return Err(ModelError::NonPositiveParam { name: "collar", value: self.collar });
        }
        if self.anchor_scale < 0.0 {
            return Err(ModelError::NonPositiveParam {
                name: "anchor_scale",
                value: self.anchor_scale,
            });
        }
        // h = 1 + amplitude * shape with |shape| <= 1 must stay positive.
        let floor = 1.0 - self.h_amplitude.abs();
        if floor <= 0.0 {
            return Err(ModelError::NonPositiveParam { name: "h (metric factor)", value: floor });
        }
        let _ = id;
        Ok(())
    }
}

/// A point of the base manifold M.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasePoint {
    Circle { theta: f64 },
    Sphere { p: [f64; 3] },
    Cylinder { phi: f64, p: [f64; 3] },
}

/// An arrow of G in the explicit realization: a source point together with
/// a group offset. Layout of `g` by model:
/// * circle: `g[0]` = action parameter, rest unused;
/// * sphere: `g[0..2]` = plane translation, rest unused;
/// * cylinder: `g[0]` = pair groupoid arc (target minus source angle, as a
///   real number), `g[1..3]` = sphere translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrow {
    pub source: BasePoint,
    pub g: [f64; 3],
}

impl Arrow {
    pub fn offset(&self, dim: usize) -> &[f64] {
        &self.g[..dim]
    }
}

/// A constant coefficient combination of the model's frame sections.
///
/// With `normalized = false` the coefficients multiply the declared frame
/// directly (the translation sections, in which g_A = h I); with
/// `normalized = true` they multiply the orthonormalized frame h^{-1/2} T_i
/// used by exponential charts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionCombo {
    pub coeffs: [f64; 3],
    pub normalized: bool,
}

impl SectionCombo {
    pub fn frame(i: usize) -> SectionCombo {
        let mut coeffs = [0.0; 3];
        coeffs[i] = 1.0;
        SectionCombo { coeffs, normalized: false }
    }

    pub fn frame_normalized(i: usize) -> SectionCombo {
        let mut coeffs = [0.0; 3];
        coeffs[i] = 1.0;
        SectionCombo { coeffs, normalized: true }
    }

    pub fn scaled(&self, factor: f64) -> SectionCombo {
        let mut coeffs = self.coeffs;
        for c in &mut coeffs {
            *c *= factor;
        }
        SectionCombo { coeffs, normalized: self.normalized }
    }

    pub fn negated(&self) -> SectionCombo {
        self.scaled(-1.0)
    }

    pub fn norm_sup(&self, dim: usize) -> f64 {
        self.coeffs[..dim].iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }
}

/// A built-in groupoid model. Immutable after construction; all methods are
/// pure and safe to call concurrently.
#[derive(Debug, Clone)]
pub struct Model {
    pub id: ModelId,
    pub params: ModelParams,
}

/// Build a model by name with parameter overrides.
pub fn build_model(name: &str, params: Option<ModelParams>) -> Result<Model, ModelError> {
    let id = ModelId::parse(name)?;
    let params = params.unwrap_or_else(|| ModelParams::defaults(id));
    params.validate(id)?;
    Ok(Model { id, params })
}

impl Model {
    pub fn with_defaults(id: ModelId) -> Model {
        Model { id, params: ModelParams::defaults(id) }
    }

    /// Number of isotropy directions (rank of the degenerate part).
    pub fn q(&self) -> usize {
        match self.id {
            ModelId::ParabolicCircle => 1,
            ModelId::StereoSphere | ModelId::CylinderProduct => 2,
        }
    }

    /// Dimension of M1.
    pub fn p(&self) -> usize {
        match self.id {
            ModelId::CylinderProduct => 1,
            _ => 0,
        }
    }

    /// Dimension of the base manifold (= p + q).
    pub fn base_dim(&self) -> usize {
        self.p() + self.q()
    }

    /// Dimension of the group offset stored in an arrow (= p + q).
    pub fn g_dim(&self) -> usize {
        self.p() + self.q()
    }

    /// The conformal factor h > 0 of the fiber metric g_A = h I.
    pub fn h(&self, x: &BasePoint) -> f64 {
        let amp = self.params.h_amplitude;
        match (self.id, x) {
            (ModelId::ParabolicCircle, BasePoint::Circle { theta }) => 1.0 + amp * theta.sin(),
            (ModelId::StereoSphere, BasePoint::Sphere { p }) => 1.0 + amp * p[2],
            // Constant (= 1) along the stratum circle, coupled in phi and Z
            // away from it.
            (ModelId::CylinderProduct, BasePoint::Cylinder { phi, p }) => {
                1.0 + amp * 0.5 * (1.0 - p[2]) * (1.0 + 0.6 * phi.sin())
            }
            _ => panic!("base point does not belong to model {}", self.id.name()),
        }
    }

    /// Right action of the group offset on a base point (exact closed form).
    pub fn act(&self, x: &BasePoint, g: &[f64]) -> BasePoint {
        let s = self.params.anchor_scale;
        match (self.id, x) {
            (ModelId::ParabolicCircle, BasePoint::Circle { theta }) => {
                BasePoint::Circle { theta: circle::translate(*theta, s * g[0]) }
            }
            (ModelId::StereoSphere, BasePoint::Sphere { p }) => {
                BasePoint::Sphere { p: sphere::translate(*p, [s * g[0], s * g[1]]) }
            }
            (ModelId::CylinderProduct, BasePoint::Cylinder { phi, p }) => BasePoint::Cylinder {
                phi: wrap_angle(phi + g[0]),
                p: sphere::translate(*p, [s * g[1], s * g[2]]),
            },
            _ => panic!("base point does not belong to model {}", self.id.name()),
        }
    }

    pub fn unit(&self, x: &BasePoint) -> Arrow {
        Arrow { source: *x, g: [0.0; 3] }
    }

    pub fn source(&self, a: &Arrow) -> BasePoint {
        a.source
    }

    pub fn target(&self, a: &Arrow) -> BasePoint {
        self.act(&a.source, &a.g)
    }

    /// Compose arrows: `a * b` requires s(a) = t(b) and has source s(b).
    pub fn compose(&self, a: &Arrow, b: &Arrow) -> Result<Arrow, ModelError> {
        let gap = self.base_distance(&self.source(a), &self.target(b));
        if gap > COMPOSE_TOL {
            return Err(ModelError::NotComposable { gap });
        }
        let mut g = b.g;
        for i in 0..3 {
            g[i] += a.g[i];
        }
        Ok(Arrow { source: b.source, g })
    }

    pub fn inverse(&self, a: &Arrow) -> Arrow {
        let mut g = a.g;
        for v in &mut g {
            *v = -*v;
        }
        Arrow { source: self.target(a), g }
    }

    /// Geodesic distance on (M, g-bar): arc length on circle factors, great
    /// circle distance on sphere factors, product combination for cylinder.
    pub fn base_distance(&self, x: &BasePoint, y: &BasePoint) -> f64 {
        match (x, y) {
            (BasePoint::Circle { theta: a }, BasePoint::Circle { theta: b }) => angle_dist(*a, *b),
            (BasePoint::Sphere { p: a }, BasePoint::Sphere { p: b }) => sphere::distance(*a, *b),
            (
                BasePoint::Cylinder { phi: f1, p: p1 },
                BasePoint::Cylinder { phi: f2, p: p2 },
            ) => {
                let dphi = angle_dist(*f1, *f2);
                let dp = sphere::distance(*p1, *p2);
                (dphi * dphi + dp * dp).sqrt()
            }
            _ => panic!("base points from different models"),
        }
    }

    /// Distance to the singular stratum M1.
    pub fn dist_m1(&self, x: &BasePoint) -> f64 {
        match (self.id, x) {
            (ModelId::ParabolicCircle, BasePoint::Circle { theta }) => {
                angle_dist(*theta, 0.0)
            }
            (ModelId::StereoSphere, BasePoint::Sphere { p }) => sphere::polar_angle(*p),
            (ModelId::CylinderProduct, BasePoint::Cylinder { p, .. }) => sphere::polar_angle(*p),
            _ => panic!("base point does not belong to model {}", self.id.name()),
        }
    }

    /// Defining function rho: equal to dist(x, M1) inside half the collar,
    /// blended smoothly to the constant 1 past the collar.
    pub fn rho(&self, x: &BasePoint) -> f64 {
        self.rho_of_dist(self.dist_m1(x))
    }

    /// The blend profile as a function of the distance to M1.
    pub fn rho_of_dist(&self, d: f64) -> f64 {
        let sigma = self.collar_step(d).value;
        sigma * d + (1.0 - sigma) * 1.0
    }

    /// d(rho)/d(dist), for analytic gradients of rho.
    pub fn rho_of_dist_d1(&self, d: f64) -> f64 {
        let jet = self.collar_step(d);
        jet.value + jet.d1 * (d - 1.0)
    }

    /// Smooth weight: 1 for d <= collar/2, 0 for d >= collar.
    fn collar_step(&self, d: f64) -> Jet2 {
        let c = self.params.collar;
        // Map [collar/2, collar] onto the unit step's [1, 0] transition.
        let s = smooth_step_jet(2.0 - 2.0 * d / c);
        Jet2 { value: s.value, d1: -2.0 / c * s.d1, d2: 4.0 / (c * c) * s.d2 }
    }

    /// Gradient of rho at x, expressed in an orthonormal frame of (TM, g-bar).
    /// Frame layout: circle `[d/dtheta]`; sphere: ambient tangent 3-vector;
    /// cylinder: `[d/dphi, ambient tangent 3-vector]`.
    pub fn grad_rho(&self, x: &BasePoint) -> Vec<f64> {
        let d = self.dist_m1(x);
        let slope = self.rho_of_dist_d1(d);
        match (self.id, x) {
            (ModelId::ParabolicCircle, BasePoint::Circle { theta }) => {
                // dist = min(theta, 2 pi - theta); sign of d(dist)/d(theta).
                let t = wrap_angle(*theta);
                let sign = if t <= std::f64::consts::PI { 1.0 } else { -1.0 };
                vec![slope * sign]
            }
            (ModelId::StereoSphere, BasePoint::Sphere { p }) => {
                let dir = sphere::polar_direction(*p);
                vec![slope * dir[0], slope * dir[1], slope * dir[2]]
            }
            (ModelId::CylinderProduct, BasePoint::Cylinder { p, .. }) => {
                let dir = sphere::polar_direction(*p);
                vec![0.0, slope * dir[0], slope * dir[1], slope * dir[2]]
            }
            _ => panic!("base point does not belong to model {}", self.id.name()),
        }
    }

    /// Anchor matrix of the declared frame sections in a g-bar orthonormal
    /// frame of TM. Columns are sections; row layout matches [`Model::grad_rho`].
    pub fn nu_matrix(&self, x: &BasePoint) -> (Vec<f64>, usize, usize) {
        let s = self.params.anchor_scale;
        match (self.id, x) {
            (ModelId::ParabolicCircle, BasePoint::Circle { theta }) => {
                (vec![s * (1.0 - theta.cos())], 1, 1)
            }
            (ModelId::StereoSphere, BasePoint::Sphere { p }) => {
                let v = sphere::anchor_fields(*p);
                let mut m = vec![0.0; 6];
                for row in 0..3 {
                    m[row * 2] = s * v[0][row];
                    m[row * 2 + 1] = s * v[1][row];
                }
                (m, 3, 2)
            }
            (ModelId::CylinderProduct, BasePoint::Cylinder { p, .. }) => {
                let v = sphere::anchor_fields(*p);
                // Rows: phi then ambient sphere; columns: T_phi, T_1, T_2.
                let mut m = vec![0.0; 12];
                m[0] = 1.0;
                for row in 0..3 {
                    m[(row + 1) * 3 + 1] = s * v[0][row];
                    m[(row + 1) * 3 + 2] = s * v[1][row];
                }
                (m, 4, 3)
            }
            _ => panic!("base point does not belong to model {}", self.id.name()),
        }
    }

    /// Velocity of the base flow of nu(X) at x, in intrinsic coordinates
    /// (circle: d theta; sphere: ambient dP; cylinder: (d phi, dP)).
    pub fn base_velocity(&self, x: &BasePoint, combo: &SectionCombo) -> Vec<f64> {
        let factor = if combo.normalized { self.h(x).powf(-0.5) } else { 1.0 };
        let s = self.params.anchor_scale;
        match (self.id, x) {
            (ModelId::ParabolicCircle, BasePoint::Circle { theta }) => {
                vec![factor * s * combo.coeffs[0] * (1.0 - theta.cos())]
            }
            (ModelId::StereoSphere, BasePoint::Sphere { p }) => {
                let v = sphere::anchor_fields(*p);
                (0..3)
                    .map(|row| {
                        factor * s * (combo.coeffs[0] * v[0][row] + combo.coeffs[1] * v[1][row])
                    })
                    .collect()
            }
            (ModelId::CylinderProduct, BasePoint::Cylinder { p, .. }) => {
                let v = sphere::anchor_fields(*p);
                let mut out = vec![factor * combo.coeffs[0]];
                for row in 0..3 {
                    out.push(
                        factor * s * (combo.coeffs[1] * v[0][row] + combo.coeffs[2] * v[1][row]),
                    );
                }
                out
            }
            _ => panic!("base point does not belong to model {}", self.id.name()),
        }
    }

    /// Group velocity of the right invariant field X^r at the arrow (x, g):
    /// the frame coefficients of X at the target, in the translation frame.
    pub fn group_velocity(&self, x: &BasePoint, g: &[f64], combo: &SectionCombo) -> Vec<f64> {
        let target = self.act(x, g);
        let factor = if combo.normalized { self.h(&target).powf(-0.5) } else { 1.0 };
        combo.coeffs[..self.g_dim()].iter().map(|c| factor * c).collect()
    }

    /// Whether x lies on the singular stratum (exactly, in coordinates).
    pub fn on_m1(&self, x: &BasePoint) -> bool {
        self.dist_m1(x) == 0.0
    }

    /// Intrinsic coordinates of a base point, for generic ODE state packing.
    pub fn coords(&self, x: &BasePoint) -> Vec<f64> {
        match x {
            BasePoint::Circle { theta } => vec![*theta],
            BasePoint::Sphere { p } => p.to_vec(),
            BasePoint::Cylinder { phi, p } => vec![*phi, p[0], p[1], p[2]],
        }
    }

    pub fn point_from_coords(&self, c: &[f64]) -> BasePoint {
        match self.id {
            ModelId::ParabolicCircle => BasePoint::Circle { theta: c[0] },
            ModelId::StereoSphere => {
                BasePoint::Sphere { p: sphere::renormalize([c[0], c[1], c[2]]) }
            }
            ModelId::CylinderProduct => BasePoint::Cylinder {
                phi: c[0],
                p: sphere::renormalize([c[1], c[2], c[3]]),
            },
        }
    }

    /// Shift x by delta along an intrinsic coordinate direction. Sphere
    /// parts are renormalized, so finite differences stay on the manifold.
    pub fn shift(&self, x: &BasePoint, dir: &[f64], delta: f64) -> BasePoint {
        let mut c = self.coords(x);
        for (ci, di) in c.iter_mut().zip(dir) {
            *ci += delta * di;
        }
        self.point_from_coords(&c)
    }

    /// Coordinates of x in the global action (translation) chart of M0.
    /// Valid only off M1.
    pub fn action_coords(&self, x: &BasePoint) -> Vec<f64> {
        match x {
            BasePoint::Circle { theta } => vec![circle::xi(*theta)],
            BasePoint::Sphere { p } => sphere::xi(*p).to_vec(),
            BasePoint::Cylinder { phi, p } => {
                let s = sphere::xi(*p);
                vec![*phi, s[0], s[1]]
            }
        }
    }

    /// A deterministic sample point at prescribed distance from M1.
    pub fn point_at_dist(&self, d: f64, aux: f64) -> BasePoint {
        match self.id {
            ModelId::ParabolicCircle => BasePoint::Circle { theta: wrap_angle(d) },
            ModelId::StereoSphere => BasePoint::Sphere { p: sphere::from_polar(d, aux) },
            ModelId::CylinderProduct => BasePoint::Cylinder {
                phi: wrap_angle(aux * 2.7),
                p: sphere::from_polar(d, aux),
            },
        }
    }

    /// Hash-friendly canonical description, used in manifests.
    pub fn describe(&self) -> String {
        format!(
            "{} h_amplitude={:.17e} collar={:.17e} anchor_scale={:.17e}",
            self.id.name(),
            self.params.h_amplitude,
            self.params.collar,
            self.params.anchor_scale
        )
    }
}

/// Wrap an angle into [0, 2 pi).
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let t = theta.rem_euclid(two_pi);
    if t == two_pi {
        0.0
    } else {
        t
    }
}

/// Distance between angles on the unit circle.
pub fn angle_dist(a: f64, b: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let d = (a - b).rem_euclid(two_pi);
    d.min(two_pi - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn all_models() -> Vec<Model> {
        vec![
            Model::with_defaults(ModelId::ParabolicCircle),
            Model::with_defaults(ModelId::StereoSphere),
            Model::with_defaults(ModelId::CylinderProduct),
        ]
    }

    fn sample_point(model: &Model, seed: f64) -> BasePoint {
        model.point_at_dist(0.3 + 2.0 * (seed.sin().abs()), seed * 1.7)
    }

    #[test]
    fn build_model_validates_names_and_params() {
        assert!(build_model("parabolic-circle", None).is_ok());
        assert!(matches!(build_model("moebius", None), Err(ModelError::UnknownModel(_))));
        let bad = ModelParams { h_amplitude: 1.5, collar: 0.5, anchor_scale: 1.0 };
        assert!(matches!(
            build_model("parabolic-circle", Some(bad)),
            Err(ModelError::NonPositiveParam { .. })
        ));
    }

    #[test]
    fn circle_anchor_magnitudes() {
        let model = Model::with_defaults(ModelId::ParabolicCircle);
        let (nu_pi, _, _) = model.nu_matrix(&BasePoint::Circle { theta: std::f64::consts::PI });
        assert_abs_diff_eq!(nu_pi[0], 2.0, epsilon = 1e-15);
        let (nu_0, _, _) = model.nu_matrix(&BasePoint::Circle { theta: 0.0 });
        assert_eq!(nu_0[0], 0.0);
    }

    #[test]
    fn rho_is_distance_inside_half_collar_and_capped_outside() {
        for model in all_models() {
            let x = model.point_at_dist(0.1, 0.4);
            assert_abs_diff_eq!(model.rho(&x), 0.1, epsilon = 1e-12);
            let far = model.point_at_dist(1.5, 0.4);
            assert_abs_diff_eq!(model.rho(&far), 1.0, epsilon = 1e-12);
            let mid = model.point_at_dist(0.35, 0.4);
            let r = model.rho(&mid);
            assert!(r > 0.3 && r < 1.0, "blend value {r}");
        }
    }

    #[test]
    fn rho_blend_is_smooth_in_the_transition() {
        let model = Model::with_defaults(ModelId::ParabolicCircle);
        // Compare the analytic d(rho)/d(dist) with finite differences across
        // the blend window, including its edges.
        for &d in &[0.24, 0.26, 0.3, 0.4, 0.45, 0.49, 0.51] {
            let h = 1e-5;
            let fd = (model.rho_of_dist(d + h) - model.rho_of_dist(d - h)) / (2.0 * h);
            assert_abs_diff_eq!(model.rho_of_dist_d1(d), fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn grad_rho_matches_finite_differences_on_the_circle() {
        let model = Model::with_defaults(ModelId::ParabolicCircle);
        for &theta in &[0.1, 0.3, 0.45, 1.0, 4.0, 6.0] {
            let h = 1e-6;
            let fd = (model.rho(&BasePoint::Circle { theta: theta + h })
                - model.rho(&BasePoint::Circle { theta: theta - h }))
                / (2.0 * h);
            assert_abs_diff_eq!(model.grad_rho(&BasePoint::Circle { theta })[0], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn grad_rho_matches_finite_differences_on_the_sphere() {
        let model = Model::with_defaults(ModelId::StereoSphere);
        for &(r, az) in &[(0.1, 0.0), (0.3, 1.2), (0.45, 2.0)] {
            let grad = model.grad_rho(&BasePoint::Sphere { p: sphere::from_polar(r, az) });
            // Directional derivative along the polar direction.
            let h = 1e-6;
            let fd = (model.rho(&BasePoint::Sphere { p: sphere::from_polar(r + h, az) })
                - model.rho(&BasePoint::Sphere { p: sphere::from_polar(r - h, az) }))
                / (2.0 * h);
            let dir = sphere::polar_direction(sphere::from_polar(r, az));
            let along: f64 = (0..3).map(|i| grad[i] * dir[i]).sum();
            assert_abs_diff_eq!(along, fd, epsilon = 1e-6);
            // No component orthogonal to the polar direction.
            let norm: f64 = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(norm, along.abs(), epsilon = 1e-9);
        }
    }

    #[test]
    fn h_stays_positive_everywhere_sampled() {
        for model in all_models() {
            for i in 0..200 {
                let x = sample_point(&model, i as f64 * 0.37);
                assert!(model.h(&x) > 0.5, "h not positive at {x:?}");
            }
        }
    }

    #[test]
    fn units_and_inverses() {
        for model in all_models() {
            for i in 0..50 {
                let x = sample_point(&model, i as f64 * 0.61);
                let mut g = [0.0; 3];
                for (j, slot) in g.iter_mut().enumerate().take(model.g_dim()) {
                    *slot = ((i + j) as f64 * 0.3).sin();
                }
                let a = Arrow { source: x, g };
                let u = model.unit(&model.source(&a));
                let a_again = model.compose(&a, &u).unwrap();
                assert_eq!(a_again, a);
                let inv = model.inverse(&a);
                let id = model.compose(&inv, &a).unwrap();
                assert_abs_diff_eq!(
                    model.base_distance(&model.target(&id), &model.source(&id)),
                    0.0,
                    epsilon = 1e-9
                );
                for v in id.offset(model.g_dim()) {
                    assert_abs_diff_eq!(*v, 0.0, epsilon = 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn composition_is_associative(
            seed in 0.0f64..10.0,
            g1 in proptest::array::uniform3(-1.5f64..1.5),
            g2 in proptest::array::uniform3(-1.5f64..1.5),
            g3 in proptest::array::uniform3(-1.5f64..1.5),
        ) {
            for model in all_models() {
                let x = sample_point(&model, seed);
                let c = Arrow { source: x, g: g3 };
                let b = Arrow { source: model.target(&c), g: g2 };
                let a = Arrow { source: model.target(&b), g: g1 };
                let ab_c = model.compose(&model.compose(&a, &b).unwrap(), &c).unwrap();
                let a_bc = model.compose(&a, &model.compose(&b, &c).unwrap()).unwrap();
                prop_assert!(model.base_distance(&ab_c.source, &a_bc.source) < 1e-9);
                for i in 0..model.g_dim() {
                    prop_assert!((ab_c.g[i] - a_bc.g[i]).abs() < 1e-9);
                }
            }
        }

        #[test]
        fn source_target_stay_in_strata(
            seed in 0.0f64..10.0,
            g in proptest::array::uniform3(-2.0f64..2.0),
        ) {
            for model in all_models() {
                // Interior points stay interior.
                let x = sample_point(&model, seed);
                let a = Arrow { source: x, g };
                prop_assert!(model.dist_m1(&model.target(&a)) > 0.0);
                // M1 points are fixed by the action.
                let m1 = model.point_at_dist(0.0, seed);
                let b = Arrow { source: m1, g };
                prop_assert!(model.dist_m1(&model.target(&b)) < 1e-12);
            }
        }
    }

    #[test]
    fn action_coords_translate_exactly() {
        for model in all_models() {
            let x = sample_point(&model, 1.3);
            let mut g = [0.0; 3];
            for (j, slot) in g.iter_mut().enumerate().take(model.g_dim()) {
                *slot = 0.4 + 0.2 * j as f64;
            }
            let before = model.action_coords(&x);
            let after = model.action_coords(&model.act(&x, &g));
            for i in 0..model.g_dim() {
                let mut diff = after[i] - before[i] - g[i];
                if model.id == ModelId::CylinderProduct && i == 0 {
                    // The pair coordinate is an angle; compare on the circle.
                    diff = (diff + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
                        - std::f64::consts::PI;
                }
                assert_abs_diff_eq!(diff, 0.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn anchor_scale_zero_freezes_the_action() {
        let params = ModelParams { anchor_scale: 0.0, ..ModelParams::defaults(ModelId::ParabolicCircle) };
        let model = build_model("parabolic-circle", Some(params)).unwrap();
        let x = BasePoint::Circle { theta: 1.0 };
        let moved = model.act(&x, &[5.0]);
        assert_eq!(moved, x);
        let (nu, _, _) = model.nu_matrix(&x);
        assert_eq!(nu[0], 0.0);
    }
}
