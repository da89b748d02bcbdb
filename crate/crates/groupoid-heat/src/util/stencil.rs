//! Central finite difference stencils on uniform five point windows.

/// Fourth order first derivative from samples at `x + k h`, `k = -2..=2`.
pub fn deriv1_c4(w: &[f64; 5], h: f64) -> f64 {
    (w[0] - 8.0 * w[1] + 8.0 * w[3] - w[4]) / (12.0 * h)
}

/// Fourth order second derivative from the same window.
pub fn deriv2_c4(w: &[f64; 5], h: f64) -> f64 {
    (-w[0] + 16.0 * w[1] - 30.0 * w[2] + 16.0 * w[3] - w[4]) / (12.0 * h * h)
}

/// Second order first derivative from samples at `x - h, x, x + h`.
pub fn deriv1_c2(w: &[f64; 3], h: f64) -> f64 {
    (w[2] - w[0]) / (2.0 * h)
}

/// Second order second derivative from the same three point window.
pub fn deriv2_c2(w: &[f64; 3], h: f64) -> f64 {
    (w[0] - 2.0 * w[1] + w[2]) / (h * h)
}

/// Offsets of the five point window in units of `h`.
pub const OFFSETS_C4: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn window5(f: impl Fn(f64) -> f64, x: f64, h: f64) -> [f64; 5] {
        [f(x - 2.0 * h), f(x - h), f(x), f(x + h), f(x + 2.0 * h)]
    }

    #[test]
    fn fourth_order_stencils_are_exact_on_quartics() {
        let f = |x: f64| 1.0 + x + x.powi(2) - 2.0 * x.powi(3) + 0.5 * x.powi(4);
        let df = |x: f64| 1.0 + 2.0 * x - 6.0 * x.powi(2) + 2.0 * x.powi(3);
        let d2f = |x: f64| 2.0 - 12.0 * x + 6.0 * x.powi(2);
        for &x in &[-1.0, 0.0, 0.7] {
            let w = window5(f, x, 0.1);
            assert_abs_diff_eq!(deriv1_c4(&w, 0.1), df(x), epsilon = 1e-11);
            assert_abs_diff_eq!(deriv2_c4(&w, 0.1), d2f(x), epsilon = 1e-9);
        }
    }

    #[test]
    fn convergence_order_on_sine() {
        let x = 0.4;
        let errs: Vec<f64> = [0.1, 0.05]
            .iter()
            .map(|&h| {
                let w = window5(f64::sin, x, h);
                (deriv1_c4(&w, h) - x.cos()).abs()
            })
            .collect();
        // Halving h should shrink the error by roughly 2^4.
        assert!(errs[0] / errs[1] > 12.0, "ratio {}", errs[0] / errs[1]);
    }

    #[test]
    fn second_order_stencils() {
        let w = [0.9f64.exp(), 1.0f64.exp(), 1.1f64.exp()];
        assert_abs_diff_eq!(deriv1_c2(&w, 0.1), 1.0f64.exp(), epsilon = 5e-3);
        assert_abs_diff_eq!(deriv2_c2(&w, 0.1), 1.0f64.exp(), epsilon = 3e-3);
    }
}
