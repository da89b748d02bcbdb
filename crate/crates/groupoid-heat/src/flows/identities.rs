//! Structural identities of the groupoid exponential, checked in the
//! explicit realization.
//!
//! Identity (1), conjugation: for sections X, Y,
//!
//!   exp X exp Y = exp Y exp W,    W = Ad(exp(-Y)) X,
//!
//! as products in the group of bisections, where the transported section W
//! is the infinitesimal conjugate W(y) = d/de [exp(-Y) exp(eX) exp(Y)](y)
//! at e = 0. W is computed by central differences in e; being a genuine
//! (non constant coefficient) section, its exponential is integrated from
//! pointwise evaluations of W along the fiber.
//!
//! Identity (2), inversion: (exp X (x))^{-1} = exp(-X)(E^nu_X(x)).
//!
//! Both checks compare arrows through their group offsets, which pins the
//! whole arrow since sources agree by construction.

use rand::Rng;

use super::{groupoid_exp, FlowError, FlowOptions};
use crate::models::{Arrow, BasePoint, Model, SectionCombo};
use crate::util::ode::integrate;
use crate::util::rng::stream;

/// Step for the conjugation derivative.
const AD_EPS: f64 = 1e-5;

/// Product of bisections b1 b2 evaluated at x: b1(t(b2(x))) b2(x).
fn bisection_product(model: &Model, b1: &dyn Fn(&BasePoint) -> Arrow, b2_at_x: &Arrow) -> Arrow {
    let a1 = b1(&model.target(b2_at_x));
    model.compose(&a1, b2_at_x).expect("bisection product composes by construction")
}

/// The conjugated bisection [exp(-Y) exp(eX) exp(Y)](y).
fn conjugate(
    model: &Model,
    y: &BasePoint,
    x_combo: &SectionCombo,
    y_combo: &SectionCombo,
    eps: f64,
    opts: &FlowOptions,
) -> Result<Arrow, FlowError> {
    let a1 = groupoid_exp(model, y, y_combo, 1.0, opts)?;
    let a2 = groupoid_exp(model, &model.target(&a1), x_combo, eps, opts)?;
    let a21 = model.compose(&a2, &a1).expect("chained exponentials compose");
    let a3 = groupoid_exp(model, &model.target(&a21), &y_combo.negated(), 1.0, opts)?;
    Ok(model.compose(&a3, &a21).expect("chained exponentials compose"))
}

/// W(y) = Ad(exp(-Y)) X at y, in the translation frame.
pub fn ad_section(
    model: &Model,
    y: &BasePoint,
    x_combo: &SectionCombo,
    y_combo: &SectionCombo,
    opts: &FlowOptions,
) -> Result<Vec<f64>, FlowError> {
    let plus = conjugate(model, y, x_combo, y_combo, AD_EPS, opts)?;
    let minus = conjugate(model, y, x_combo, y_combo, -AD_EPS, opts)?;
    Ok((0..model.g_dim()).map(|i| (plus.g[i] - minus.g[i]) / (2.0 * AD_EPS)).collect())
}

/// exp W at x for the transported section W = Ad(exp(-Y)) X, integrated
/// from pointwise conjugation derivatives.
fn exp_ad_section(
    model: &Model,
    x: &BasePoint,
    x_combo: &SectionCombo,
    y_combo: &SectionCombo,
    opts: &FlowOptions,
) -> Result<Arrow, FlowError> {
    let d = model.g_dim();
    let y0 = vec![0.0; d];
    let mut inner_err: Option<FlowError> = None;
    let rhs = |_t: f64, g: &[f64], dg: &mut [f64]| {
        let base = model.act(x, g);
        match ad_section(model, &base, x_combo, y_combo, opts) {
            Ok(w) => dg.copy_from_slice(&w),
            Err(e) => {
                if inner_err.is_none() {
                    inner_err = Some(e);
                }
                dg.fill(f64::NAN);
            }
        }
    };
    let sol = integrate(rhs, 0.0, 1.0, &y0, &opts.ode);
    if let Some(e) = inner_err {
        return Err(e);
    }
    let sol = sol?;
    let mut g = [0.0; 3];
    g[..d].copy_from_slice(&sol.y_end);
    Ok(Arrow { source: *x, g })
}

/// Worst deviations of the two identities over a batch of samples.
#[derive(Debug, Clone, serde::Serialize)]
pub struct IdentityReport {
    pub model: String,
    pub samples: usize,
    /// sup |exp X exp Y - exp Y exp W| over samples, offset sup norm.
    pub conjugation_dev: f64,
    /// sup |(exp X (x))^{-1} - exp(-X)(flow endpoint)|.
    pub inversion_dev: f64,
}

fn random_combo(rng: &mut impl Rng, dim: usize, normalized: bool) -> SectionCombo {
    let mut coeffs = [0.0; 3];
    for c in coeffs.iter_mut().take(dim) {
        *c = rng.gen_range(-0.8..0.8);
    }
    SectionCombo { coeffs, normalized }
}

/// Check both identities on `samples` random (x, X, Y) triples.
pub fn check_exp_identities(
    model: &Model,
    seed: u64,
    samples: usize,
    opts: &FlowOptions,
) -> Result<IdentityReport, FlowError> {
    let mut rng = stream(seed, &format!("exp-identities/{}", model.id.name()));
    let mut conj_dev = 0.0f64;
    let mut inv_dev = 0.0f64;
    for k in 0..samples {
        let d = rng.gen_range(0.05f64..2.8);
        let aux = rng.gen_range(0.0f64..6.28);
        let x = model.point_at_dist(d, aux);
        let normalized = k % 2 == 0;
        let x_combo = random_combo(&mut rng, model.g_dim(), normalized);
        let y_combo = random_combo(&mut rng, model.g_dim(), normalized);

        // Identity (2).
        let a = groupoid_exp(model, &x, &x_combo, 1.0, opts)?;
        let back = groupoid_exp(model, &model.target(&a), &x_combo.negated(), 1.0, opts)?;
        let inv = model.inverse(&a);
        for i in 0..model.g_dim() {
            inv_dev = inv_dev.max((back.g[i] - inv.g[i]).abs());
        }

        // Identity (1).
        let exp_y = |p: &BasePoint| groupoid_exp(model, p, &y_combo, 1.0, opts).unwrap();
        let exp_x = |p: &BasePoint| groupoid_exp(model, p, &x_combo, 1.0, opts).unwrap();
        let lhs = bisection_product(model, &exp_x, &exp_y(&x));
        let w_at_x = exp_ad_section(model, &x, &x_combo, &y_combo, opts)?;
        let rhs = bisection_product(model, &exp_y, &w_at_x);
        for i in 0..model.g_dim() {
            conj_dev = conj_dev.max((lhs.g[i] - rhs.g[i]).abs());
        }
    }
    Ok(IdentityReport {
        model: model.id.name().to_string(),
        samples,
        conjugation_dev: conj_dev,
        inversion_dev: inv_dev,
    })
}
