//! Closed forms for the parabolic circle model.
//!
//! The interior M0 = S^1 \ {0} carries the global action coordinate
//! xi(theta) = -cot(theta/2), in which the section with anchor
//! (1 - cos theta) d/dtheta becomes the unit translation d/dxi. All of
//! the model's groupoid structure reduces to shifting xi.

use super::wrap_angle;

/// Action coordinate of the interior point theta in (0, 2 pi).
pub fn xi(theta: f64) -> f64 {
    let t = wrap_angle(theta);
    // -cot(t/2), written through sin/cos for stability near t = pi.
    -(t / 2.0).cos() / (t / 2.0).sin()
}

/// Interior angle with the given action coordinate, in (0, 2 pi).
pub fn theta_from_xi(xi: f64) -> f64 {
    2.0 * 1.0f64.atan2(-xi)
}

/// Translate theta by s in the action coordinate. Fixed points of M1 are
/// preserved exactly.
pub fn translate(theta: f64, s: f64) -> f64 {
    let t = wrap_angle(theta);
    if t == 0.0 || s == 0.0 {
        return t;
    }
    theta_from_xi(xi(t) + s)
}

/// 1 - cos(theta) expressed through xi; equals 2 / (1 + xi^2).
pub fn one_minus_cos_from_xi(xi: f64) -> f64 {
    2.0 / (1.0 + xi * xi)
}

/// sin(theta) expressed through xi; equals -2 xi / (1 + xi^2).
pub fn sin_from_xi(xi: f64) -> f64 {
    -2.0 * xi / (1.0 + xi * xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn xi_round_trips() {
        for k in 1..200 {
            let theta = 2.0 * PI * k as f64 / 200.0;
            assert_abs_diff_eq!(theta_from_xi(xi(theta)), theta, epsilon = 1e-12);
        }
    }

    #[test]
    fn xi_is_minus_cot_half() {
        for &theta in &[0.3, 1.0, PI / 2.0, PI, 4.0, 6.0] {
            assert_abs_diff_eq!(xi(theta), -1.0 / (theta / 2.0).tan(), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(xi(PI), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn trig_identities_in_xi() {
        for k in 1..100 {
            let theta = 2.0 * PI * k as f64 / 100.0;
            let x = xi(theta);
            assert_abs_diff_eq!(one_minus_cos_from_xi(x), 1.0 - theta.cos(), epsilon = 1e-12);
            assert_abs_diff_eq!(sin_from_xi(x), theta.sin(), epsilon = 1e-12);
        }
    }

    #[test]
    fn translation_matches_the_cot_flow_oracle() {
        // cot(theta_t / 2) = cot(theta_0 / 2) - t is the closed form of the
        // flow of (1 - cos theta) d/dtheta; translation by t in xi is the
        // same statement since xi = -cot(theta/2).
        for &theta0 in &[PI / 4.0, PI / 2.0, PI, 3.0 * PI / 2.0] {
            for k in -20..=20 {
                let t = 0.1 * k as f64;
                let moved = translate(theta0, t);
                let lhs = 1.0 / (moved / 2.0).tan();
                let rhs = 1.0 / (theta0 / 2.0).tan() - t;
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn translate_pi_by_one_gives_three_pi_over_two() {
        assert_abs_diff_eq!(translate(PI, 1.0), 3.0 * PI / 2.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn translation_is_a_group_action(
            theta in 1e-6f64..(2.0 * PI - 1e-6),
            s1 in -50.0f64..50.0,
            s2 in -50.0f64..50.0,
        ) {
            let one_step = translate(theta, s1 + s2);
            let two_step = translate(translate(theta, s1), s2);
            prop_assert!(super::super::angle_dist(one_step, two_step) < 1e-9);
        }

        #[test]
        fn translation_never_leaves_the_interior(
            theta in 1e-9f64..(2.0 * PI - 1e-9),
            s in -1e6f64..1e6,
        ) {
            let moved = translate(theta, s);
            prop_assert!(moved > 0.0 && moved < 2.0 * PI);
        }
    }
}
