//! Distance inside a source fiber, and the fiber-to-base distance estimate.
//!
//! The source fiber over x is the group offset space with the right
//! invariant metric: an offset velocity w at the arrow (x, z) translates to
//! the algebroid element with frame coefficients w at the arrow's target,
//! so the fiber metric is conformally flat,
//!
//!   m(z) = h(x . z) I.
//!
//! One dimensional fibers integrate sqrt(h) directly. Higher dimensional
//! ones solve the geodesic boundary value problem by shooting: Newton on
//! the initial velocity, with the length read off the conserved speed
//! sqrt(H(z(0))) |z'(0)|. Shooting returns the length of an actual path
//! between the endpoints, so any convergence to a non minimizing geodesic
//! only overestimates the distance; the estimate checked below stays valid.

use rand::Rng;

use super::{FlowError, FlowOptions};
use crate::models::{BasePoint, Model};
use crate::util::newton::{solve_damped, NewtonOptions};
use crate::util::ode::integrate;
use crate::util::quad::adaptive_simpson;
use crate::util::rng::stream;

/// Central difference step for the conformal factor gradient.
const GRAD_EPS: f64 = 1e-6;

/// Additive slack absorbing quadrature, shooting, and rho roundoff.
const DEST_SLACK: f64 = 1e-9;

/// Below this offset separation the metric is constant to roundoff and the
/// midpoint rule is exact; shooting residuals would be all noise.
const SHORT_CUT: f64 = 1e-8;

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Geodesic distance between offsets ga and gb in the fiber over x.
pub fn fiber_distance(
    model: &Model,
    x: &BasePoint,
    ga: &[f64],
    gb: &[f64],
    opts: &FlowOptions,
) -> Result<f64, FlowError> {
    let dim = model.g_dim();
    assert_eq!(ga.len(), dim);
    assert_eq!(gb.len(), dim);
    let diff: Vec<f64> = (0..dim).map(|i| gb[i] - ga[i]).collect();
    let sep = euclid(&diff);
    if sep < SHORT_CUT {
        let mid: Vec<f64> = (0..dim).map(|i| 0.5 * (ga[i] + gb[i])).collect();
        return Ok(model.h(&model.act(x, &mid)).sqrt() * sep);
    }
    if dim == 1 {
        return Ok(line_distance(model, x, ga[0], gb[0]));
    }
    shooting_distance(model, x, ga, gb, opts)
}

/// One dimensional fiber: |integral of sqrt(h(x . s)) ds| from ga to gb.
fn line_distance(model: &Model, x: &BasePoint, ga: f64, gb: f64) -> f64 {
    let mut f = |s: f64| model.h(&model.act(x, &[s])).sqrt();
    adaptive_simpson(&mut f, ga, gb, 1e-12).abs()
}

/// Geodesic shooting for the conformal metric H(z) I, H(z) = h(x . z).
///
/// The geodesic system is
///
///   z'' = -(1/H) [ <grad H, z'> z' - |z'|^2 grad H / 2 ],
///
/// integrated over [0, 1]; Newton adjusts z'(0) until z(1) hits gb. The
/// conformal factor stays within the amplitude band of h, so geodesics are
/// mild perturbations of straight lines and the straight seed converges.
fn shooting_distance(
    model: &Model,
    x: &BasePoint,
    ga: &[f64],
    gb: &[f64],
    opts: &FlowOptions,
) -> Result<f64, FlowError> {
    let dim = model.g_dim();
    let grad_h = |z: &[f64], out: &mut [f64]| {
        let mut zp = z.to_vec();
        for k in 0..dim {
            zp[k] = z[k] + GRAD_EPS;
            let hp = model.h(&model.act(x, &zp));
            zp[k] = z[k] - GRAD_EPS;
            let hm = model.h(&model.act(x, &zp));
            zp[k] = z[k];
            out[k] = (hp - hm) / (2.0 * GRAD_EPS);
        }
    };
    let rhs = |_t: f64, y: &[f64], dy: &mut [f64]| {
        let (z, v) = y.split_at(dim);
        let mut grad = vec![0.0; dim];
        grad_h(z, &mut grad);
        let h = model.h(&model.act(x, z));
        let dot: f64 = (0..dim).map(|k| grad[k] * v[k]).sum();
        let speed2: f64 = v.iter().map(|c| c * c).sum();
        for k in 0..dim {
            dy[k] = v[k];
            dy[dim + k] = -(dot * v[k] - 0.5 * speed2 * grad[k]) / h;
        }
    };
    let shoot = |v0: &[f64]| -> Result<Vec<f64>, FlowError> {
        let mut y0 = ga.to_vec();
        y0.extend_from_slice(v0);
        let sol = integrate(rhs, 0.0, 1.0, &y0, &opts.ode)?;
        Ok(sol.y_end[..dim].to_vec())
    };

    let mut inner_err: Option<FlowError> = None;
    let residual = |v: &[f64], r: &mut [f64]| match shoot(v) {
        Ok(end) => {
            for k in 0..dim {
                r[k] = end[k] - gb[k];
            }
        }
        Err(e) => {
            if inner_err.is_none() {
                inner_err = Some(e);
            }
            r.fill(f64::NAN);
        }
    };
    let seed: Vec<f64> = (0..dim).map(|i| gb[i] - ga[i]).collect();
    let newton = NewtonOptions { tol: 1e-10, max_iters: 40, fd_step: 1e-6 };
    let solved = solve_damped(residual, &seed, &newton);
    if let Some(e) = inner_err {
        return Err(e);
    }
    let v0 = solved?;
    Ok(model.h(&model.act(x, ga)).sqrt() * euclid(&v0))
}

/// Outcome of sampling the fiber-to-base estimate
///
///   |log(rho(t(b)) / rho(t(a)))| <= omega d(a, b)
///
/// over random same-source arrow pairs.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DistanceEstimateReport {
    pub model: String,
    pub omega: f64,
    pub pairs: usize,
    pub violations: usize,
    /// sup over pairs of |log rho ratio| / (omega d); below one everywhere
    /// when the estimate holds with margin.
    pub max_ratio: f64,
    /// Largest log ratio seen, a measure of how deep the sweep reached.
    pub max_log_ratio: f64,
    pub max_fiber_distance: f64,
}

/// Sample the distance estimate on random same-source pairs. Sources are
/// drawn with log spaced distances to the degenerate stratum so that both
/// the collar and the capped region contribute; offsets fill [-2, 2]^dim.
pub fn check_distance_estimate(
    model: &Model,
    omega: f64,
    pairs: usize,
    seed: u64,
    opts: &FlowOptions,
) -> Result<DistanceEstimateReport, FlowError> {
    let dim = model.g_dim();
    let mut rng = stream(seed, &format!("distance-estimate/{}", model.id.name()));
    let mut violations = 0usize;
    let mut max_ratio = 0.0f64;
    let mut max_log_ratio = 0.0f64;
    let mut max_dist = 0.0f64;
    for _ in 0..pairs {
        let dist = 10f64.powf(rng.gen_range(-3.5..0.28f64));
        let aux = rng.gen_range(0.0..6.28f64);
        let x = model.point_at_dist(dist, aux);
        let mut ga = vec![0.0; dim];
        let mut gb = vec![0.0; dim];
        for k in 0..dim {
            ga[k] = rng.gen_range(-2.0..2.0f64);
            gb[k] = rng.gen_range(-2.0..2.0f64);
        }
        let rho_a = model.rho(&model.act(&x, &ga));
        let rho_b = model.rho(&model.act(&x, &gb));
        let lhs = (rho_b / rho_a).ln().abs();
        let d = fiber_distance(model, &x, &ga, &gb, opts)?;
        if lhs > omega * d + DEST_SLACK {
            violations += 1;
        }
        if d > 0.0 {
            max_ratio = max_ratio.max(lhs / (omega * d));
        }
        max_log_ratio = max_log_ratio.max(lhs);
        max_dist = max_dist.max(d);
    }
    Ok(DistanceEstimateReport {
        model: model.id.name().to_string(),
        omega,
        pairs,
        violations,
        max_ratio,
        max_log_ratio,
        max_fiber_distance: max_dist,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::degeneracy::classify;
    use crate::models::{build_model, ModelId, ModelParams};
    use crate::util::quad::gauss_legendre_on;
    use crate::util::rng::DEFAULT_SEED;
    use approx::assert_abs_diff_eq;

    fn opts() -> FlowOptions {
        FlowOptions::default()
    }

    fn flat(id: ModelId) -> Model {
        let params = ModelParams { h_amplitude: 0.0, ..ModelParams::defaults(id) };
        build_model(id.name(), Some(params)).unwrap()
    }

    #[test]
    fn flat_metric_gives_euclidean_distance() {
        let model = flat(ModelId::StereoSphere);
        let x = model.point_at_dist(0.7, 0.2);
        let ga = [0.3, -1.1];
        let gb = [-0.9, 0.4];
        let d = fiber_distance(&model, &x, &ga, &gb, &opts()).unwrap();
        let exact = ((gb[0] - ga[0]).powi(2) + (gb[1] - ga[1]).powi(2)).sqrt();
        assert_abs_diff_eq!(d, exact, epsilon = 1e-10);

        let line = flat(ModelId::ParabolicCircle);
        let x = line.point_at_dist(1.3, 0.0);
        let d = fiber_distance(&line, &x, &[0.4], &[-1.2], &opts()).unwrap();
        assert_abs_diff_eq!(d, 1.6, epsilon = 1e-12);
    }

    #[test]
    fn short_separations_use_the_midpoint_value() {
        let model = Model::with_defaults(ModelId::StereoSphere);
        let x = model.point_at_dist(0.9, 1.0);
        let ga = [0.5, 0.5];
        let gb = [0.5 + 3e-9, 0.5 - 4e-9];
        let d = fiber_distance(&model, &x, &ga, &gb, &opts()).unwrap();
        let sep = euclid(&[gb[0] - ga[0], gb[1] - ga[1]]);
        let h = model.h(&model.act(&x, &ga));
        assert!((d / (h.sqrt() * sep) - 1.0).abs() < 1e-8, "d {d}");
    }

    #[test]
    fn shooting_agrees_with_quadrature_in_one_dimension() {
        // The circle fiber is one dimensional, so the geodesic image is the
        // segment itself and the shooting route must reproduce the direct
        // integral. Completely different machinery on both sides.
        let model = Model::with_defaults(ModelId::ParabolicCircle);
        for &(x_dist, a, b) in &[(0.8, -1.5, 2.0), (2.4, 0.1, 0.9), (0.05, -2.0, -0.3)] {
            let x = model.point_at_dist(x_dist, 0.0);
            let direct = line_distance(&model, &x, a, b);
            let shot = shooting_distance(&model, &x, &[a], &[b], &opts()).unwrap();
            assert_abs_diff_eq!(shot, direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn distance_is_symmetric() {
        let model = Model::with_defaults(ModelId::CylinderProduct);
        let x = model.point_at_dist(0.6, 2.1);
        let ga = [1.2, -0.7, 0.4];
        let gb = [-0.8, 0.9, -1.5];
        let ab = fiber_distance(&model, &x, &ga, &gb, &opts()).unwrap();
        let ba = fiber_distance(&model, &x, &gb, &ga, &opts()).unwrap();
        assert_abs_diff_eq!(ab, ba, epsilon = 1e-9);
    }

    #[test]
    fn triangle_inequality_holds() {
        let model = Model::with_defaults(ModelId::StereoSphere);
        let x = model.point_at_dist(1.1, 0.5);
        let pa = [1.4, 0.2];
        let pb = [-0.6, 1.0];
        let pc = [0.3, -1.3];
        let ab = fiber_distance(&model, &x, &pa, &pb, &opts()).unwrap();
        let bc = fiber_distance(&model, &x, &pb, &pc, &opts()).unwrap();
        let ac = fiber_distance(&model, &x, &pa, &pc, &opts()).unwrap();
        assert!(ac <= ab + bc + 1e-9, "ac {ac} vs {ab} + {bc}");
    }

    #[test]
    fn straight_segments_bound_the_distance_from_above() {
        // Length of the straight offset segment in the conformal metric,
        // by quadrature; the geodesic cannot be longer.
        let model = Model::with_defaults(ModelId::StereoSphere);
        let x = model.point_at_dist(0.45, 1.7);
        let ga = [1.8, -1.2];
        let gb = [-1.0, 1.6];
        let rule = gauss_legendre_on(0.0, 1.0, 48);
        let sep = euclid(&[gb[0] - ga[0], gb[1] - ga[1]]);
        let mut straight = 0.0;
        for (&s, &w) in rule.nodes.iter().zip(&rule.weights) {
            let z = [ga[0] + s * (gb[0] - ga[0]), ga[1] + s * (gb[1] - ga[1])];
            straight += w * model.h(&model.act(&x, &z)).sqrt() * sep;
        }
        let d = fiber_distance(&model, &x, &ga, &gb, &opts()).unwrap();
        assert!(d <= straight + 1e-9, "geodesic {d} longer than straight {straight}");
        assert!(d >= 0.8 * straight, "geodesic {d} implausibly short vs {straight}");
    }

    #[test]
    fn distance_estimate_holds_on_the_builtins() {
        for id in [ModelId::ParabolicCircle, ModelId::StereoSphere, ModelId::CylinderProduct] {
            let model = Model::with_defaults(id);
            let omega = classify(&model).omega;
            let report =
                check_distance_estimate(&model, omega, 60, DEFAULT_SEED, &opts()).unwrap();
            assert_eq!(report.violations, 0, "{}: {report:?}", model.id.name());
            assert!(report.max_ratio <= 1.0 + 1e-9, "{}: {report:?}", model.id.name());
        }
    }
}
