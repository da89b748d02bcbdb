//! Degeneracy classification of the anchor map near the singular stratum.
//!
//! Two scalar fields drive everything. With N(x) = h(x)^{-1/2} nu(x) the
//! anchor matrix normalized so columns act on g_A-unit vectors,
//!
//! * `upper(x)` = |grad(rho)^T N(x)|, the largest value of |d rho . nu(X)|
//!   over g_A-unit X, and
//! * `lower(x)` = smallest singular value of N(x), the worst case of
//!   |nu(X)| over g_A-unit X.
//!
//! The classifier then asks, on a log-spaced ladder of distances to M1:
//! is `lower` bounded below by a multiple of rho (non-degenerate)? Failing
//! that, do `upper` and `lower` admit power envelopes
//! upper <= C rho^lambda, lower >= c rho^lambda' with exponents >= 2
//! (uniformly degenerate)? Anything else is reported as `neither`.
//!
//! The fitted constant `omega` = sup upper/rho is recorded separately: it is
//! the Lipschitz constant of log(rho) along unit-speed fiber paths and feeds
//! the fiberwise comparison checks downstream.

use serde::Serialize;

use super::{Model, ModelId};
use crate::util::fit::{fit_power_lower, fit_power_upper, FitOptions};
use crate::util::linalg::min_singular_value;

/// Outcome of the classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegenClass {
    NonDegenerate,
    UniformlyDegenerate,
    Neither,
}

/// One sampled point of the classification grid.
#[derive(Debug, Clone, Copy)]
pub struct DegenSample {
    /// Distance to M1.
    pub dist: f64,
    /// Defining function value.
    pub rho: f64,
    /// sup_{|X|_{g_A} = 1} |d rho . nu(X)|.
    pub upper: f64,
    /// inf_{|X|_{g_A} = 1} |nu(X)|.
    pub lower: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DegeneracyReport {
    pub model: String,
    pub classification: DegenClass,
    /// Linear bound constant: sup upper/rho over the grid (slightly inflated).
    pub omega: f64,
    /// Distance to M1 at which the sup was attained.
    pub omega_argmax_dist: f64,
    /// Fitted exponent and coefficient of the upper power envelope.
    pub lambda: f64,
    pub lambda_coeff: f64,
    /// Fitted exponent and coefficient of the lower power envelope.
    pub lambda_prime: f64,
    pub lambda_prime_coeff: f64,
    /// inf lower/rho over the grid, the non-degeneracy margin.
    pub nondegen_floor: f64,
    pub samples: usize,
    /// Largest relative violation of the reported envelopes when re-checked
    /// against every sample; both should be zero up to roundoff.
    pub upper_violation: f64,
    pub lower_violation: f64,
}

/// Normalized anchor data at a single point.
pub fn local_quantities(model: &Model, x: &super::BasePoint) -> (f64, f64) {
    let (nu, rows, cols) = model.nu_matrix(x);
    let scale = model.h(x).powf(-0.5);
    let grad = model.grad_rho(x);
    debug_assert_eq!(grad.len(), rows);
    let mut upper_sq = 0.0;
    for j in 0..cols {
        let mut dot = 0.0;
        for (i, gi) in grad.iter().enumerate() {
            dot += gi * nu[i * cols + j];
        }
        upper_sq += (scale * dot) * (scale * dot);
    }
    let normalized: Vec<f64> = nu.iter().map(|v| v * scale).collect();
    let lower = min_singular_value(&normalized, rows, cols);
    (upper_sq.sqrt(), lower)
}

/// Deterministic sampling ladder: log-spaced distances inside half the
/// collar (at least ten points per decade), a dense sweep of the blend
/// window, and a few far points, each at several azimuths.
pub fn sample_grid(model: &Model) -> Vec<DegenSample> {
    let collar = model.params.collar;
    let d_min = 1e-4;
    let d_mid = collar / 2.0;
    let decades = (d_mid / d_min).log10();
    let n_ladder = (12.0 * decades).ceil() as usize;
    let mut dists = Vec::new();
    for i in 0..=n_ladder {
        let f = i as f64 / n_ladder as f64;
        dists.push(d_min * (d_mid / d_min).powf(f));
    }
    // Blend window, sampled densely for a reliable sup of upper/rho.
    for i in 1..=160 {
        dists.push(d_mid + (collar - d_mid) * i as f64 / 160.0);
    }
    for i in 1..=8 {
        dists.push(collar + (3.0 - collar) * i as f64 / 8.0);
    }

    let auxes: &[f64] = match model.id {
        ModelId::ParabolicCircle => &[0.0],
        ModelId::StereoSphere => &[0.0, 1.1, 2.3],
        ModelId::CylinderProduct => &[0.0, 0.9, 1.8, 2.7, 3.6, 4.5],
    };

    let mut out = Vec::new();
    for &d in &dists {
        for &aux in auxes {
            let x = model.point_at_dist(d, aux);
            let (upper, lower) = local_quantities(model, &x);
            out.push(DegenSample { dist: d, rho: model.rho(&x), upper, lower });
            if model.id == ModelId::ParabolicCircle {
                // The other side of the stratum.
                let x2 = super::BasePoint::Circle { theta: 2.0 * std::f64::consts::PI - d };
                let (u2, l2) = local_quantities(model, &x2);
                out.push(DegenSample { dist: d, rho: model.rho(&x2), upper: u2, lower: l2 });
            }
        }
    }
    out
}

/// Classify from samples. `fit_cut` restricts the power law fits to the
/// clean regime rho <= fit_cut where rho coincides with the distance; the
/// resulting envelopes are still validated on every sample.
pub fn classify_samples(model_name: &str, samples: &[DegenSample], fit_cut: f64) -> DegeneracyReport {
    assert!(!samples.is_empty());
    let mut omega = 0.0f64;
    let mut omega_at = 0.0;
    let mut floor = f64::INFINITY;
    for s in samples {
        let ratio = s.upper / s.rho;
        if ratio > omega {
            omega = ratio;
            omega_at = s.dist;
        }
        floor = floor.min(s.lower / s.rho);
    }
    // Grid sup of a smooth ratio; inflate by a hair so the reported constant
    // dominates off-grid evaluations as well.
    omega *= 1.0 + 1e-6;

    let fit_set: Vec<(f64, f64, f64)> = samples
        .iter()
        .filter(|s| s.rho <= fit_cut)
        .map(|s| (s.rho, s.upper, s.lower))
        .collect();
    let xs: Vec<f64> = fit_set.iter().map(|s| s.0).collect();
    let uppers: Vec<f64> = fit_set.iter().map(|s| s.1).collect();
    let lowers: Vec<f64> = fit_set.iter().map(|s| s.2).collect();
    let opts = FitOptions::default();
    let upper_fit = fit_power_upper(&xs, &uppers, opts);
    let lower_fit = fit_power_lower(&xs, &lowers, opts);

    // Re-check the envelopes on the full grid, adjusting the coefficients
    // outward where the wider range demands it.
    let mut upper_coeff = upper_fit.coeff;
    let mut lower_coeff = lower_fit.coeff;
    for s in samples {
        if s.rho > 0.0 {
            upper_coeff = upper_coeff.max(s.upper / s.rho.powf(upper_fit.rate));
            if lower_coeff > 0.0 {
                lower_coeff = lower_coeff.min(s.lower / s.rho.powf(lower_fit.rate));
            }
        }
    }
    // The quotient-then-product round trip can lose an ulp; nudge outward so
    // the envelopes really dominate every sample.
    upper_coeff *= 1.0 + 4.0 * f64::EPSILON;
    lower_coeff *= 1.0 - 4.0 * f64::EPSILON;
    let mut upper_violation = 0.0f64;
    let mut lower_violation = 0.0f64;
    for s in samples {
        let bound_u = upper_coeff * s.rho.powf(upper_fit.rate);
        if s.upper > bound_u {
            upper_violation = upper_violation.max((s.upper - bound_u) / bound_u.max(1e-300));
        }
        let bound_l = lower_coeff * s.rho.powf(lower_fit.rate);
        if s.lower < bound_l {
            lower_violation = lower_violation.max((bound_l - s.lower) / bound_l.max(1e-300));
        }
    }

    let classification = if floor > 1e-3 {
        DegenClass::NonDegenerate
    } else if lower_coeff > 1e-8 && lower_fit.rate > 1.5 && upper_fit.rate > 1.5 {
        DegenClass::UniformlyDegenerate
    } else {
        DegenClass::Neither
    };

    DegeneracyReport {
        model: model_name.to_string(),
        classification,
        omega,
        omega_argmax_dist: omega_at,
        lambda: upper_fit.rate,
        lambda_coeff: upper_coeff,
        lambda_prime: lower_fit.rate,
        lambda_prime_coeff: lower_coeff,
        nondegen_floor: floor,
        samples: samples.len(),
        upper_violation,
        lower_violation,
    }
}

/// Full classification of a model over the builtin sampling grid.
pub fn classify(model: &Model) -> DegeneracyReport {
    let samples = sample_grid(model);
    classify_samples(model.id.name(), &samples, model.params.collar / 2.0)
}
