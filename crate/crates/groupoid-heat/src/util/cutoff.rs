//! Smooth step and cutoff functions with analytic derivatives.
//!
//! The step is the classical gluing `E(x) / (E(x) + E(1-x))` built from
//! `E(x) = exp(-1/x)`. It is exactly 0 for `x <= 0`, exactly 1 for `x >= 1`,
//! and smooth everywhere. Derivatives are computed analytically rather than
//! by finite differences because cutoff second derivatives enter curvature
//! and remainder formulas where stencil noise would be amplified.

/// Value together with first and second derivative at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 { value: 0.0, d1: 0.0, d2: 0.0 };
    pub const ONE: Jet2 = Jet2 { value: 1.0, d1: 0.0, d2: 0.0 };
}

/// `exp(-1/x)` for positive `x`, zero otherwise, with two derivatives.
fn bump_jet(x: f64) -> Jet2 {
    if x <= 0.0 {
        return Jet2::ZERO;
    }
    let value = (-1.0 / x).exp();
    if value == 0.0 {
        // Underflow region: derivatives underflow as well.
        return Jet2::ZERO;
    }
    let inv = 1.0 / x;
    let d1 = value * inv * inv;
    let d2 = value * (inv * inv * inv * inv - 2.0 * inv * inv * inv);
    Jet2 { value, d1, d2 }
}

/// Smooth step: 0 for `x <= 0`, 1 for `x >= 1`, strictly increasing between.
pub fn smooth_step(x: f64) -> f64 {
    smooth_step_jet(x).value
}

/// Smooth step with first and second derivative.
pub fn smooth_step_jet(x: f64) -> Jet2 {
    if x <= 0.0 {
        return Jet2::ZERO;
    }
    if x >= 1.0 {
        return Jet2::ONE;
    }
    let a = bump_jet(x);
    let bx = bump_jet(1.0 - x);
    // b(x) = E(1-x): chain rule flips odd derivatives.
    let (b, b1, b2) = (bx.value, -bx.d1, bx.d2);
    let den = a.value + b;
    let value = a.value / den;
    let num1 = a.d1 * b - a.value * b1;
    let d1 = num1 / (den * den);
    let num2 = (a.d2 * b - a.value * b2) * den - 2.0 * num1 * (a.d1 + b1);
    let d2 = num2 / (den * den * den);
    Jet2 { value, d1, d2 }
}

/// Cutoff profile: 1 for `u <= 1/2`, 0 for `u >= 1`, smooth and decreasing.
pub fn cutoff(u: f64) -> f64 {
    cutoff_jet(u).value
}

/// Cutoff profile with derivatives in `u`.
pub fn cutoff_jet(u: f64) -> Jet2 {
    let s = smooth_step_jet(2.0 * (1.0 - u));
    Jet2 { value: s.value, d1: -2.0 * s.d1, d2: 4.0 * s.d2 }
}
