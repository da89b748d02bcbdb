//! The cylinder product model: pair groupoid of S^1 times the stereographic
//! sphere action. Arrows store the S^1 part as a real arc (target angle
//! minus source angle, unwrapped), which realizes the covering of the pair
//! groupoid; every construction in the laboratory keeps arcs well inside
//! (-pi, pi), where the two descriptions agree.
//!
//! All structure maps are dispatched from the parent module; this file pins
//! down the product identities with tests.

#[cfg(test)]
mod tests {
    use crate::models::{sphere, BasePoint, Model, ModelId};
    use approx::assert_abs_diff_eq;

    fn model() -> Model {
        Model::with_defaults(ModelId::CylinderProduct)
    }

    fn point(phi: f64, r: f64, az: f64) -> BasePoint {
        BasePoint::Cylinder { phi, p: sphere::from_polar(r, az) }
    }

    #[test]
    fn dimensions() {
        let m = model();
        assert_eq!(m.p(), 1);
        assert_eq!(m.q(), 2);
        assert_eq!(m.base_dim(), 3);
        assert_eq!(m.g_dim(), 3);
    }

    #[test]
    fn action_splits_into_factors() {
        let m = model();
        let x = point(1.2, 0.8, 0.5);
        let moved = m.act(&x, &[0.7, -0.3, 0.4]);
        let (phi, p) = match moved {
            BasePoint::Cylinder { phi, p } => (phi, p),
            _ => unreachable!(),
        };
        assert_abs_diff_eq!(phi, 1.9, epsilon = 1e-12);
        let expected = sphere::translate(sphere::from_polar(0.8, 0.5), [-0.3, 0.4]);
        for k in 0..3 {
            assert_abs_diff_eq!(p[k], expected[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn m1_is_the_circle_over_the_pole() {
        let m = model();
        let on = BasePoint::Cylinder { phi: 2.0, p: [0.0, 0.0, 1.0] };
        assert_eq!(m.dist_m1(&on), 0.0);
        assert!(m.on_m1(&on));
        let off = point(2.0, 0.3, 1.0);
        assert_abs_diff_eq!(m.dist_m1(&off), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn h_is_flat_on_the_stratum_and_coupled_off_it() {
        let m = model();
        let x = point(0.9, 1.1, 0.0);
        let z = (1.1f64).cos();
        assert_abs_diff_eq!(
            m.h(&x),
            1.0 + 0.15 * 0.5 * (1.0 - z) * (1.0 + 0.6 * (0.9f64).sin()),
            epsilon = 1e-15
        );
        for &phi in &[0.0, 1.3, 4.4] {
            let on = BasePoint::Cylinder { phi, p: [0.0, 0.0, 1.0] };
            assert_eq!(m.h(&on), 1.0);
        }
    }

    #[test]
    fn base_distance_is_the_product_metric() {
        let m = model();
        let x = point(0.0, 0.4, 0.0);
        let y = point(0.3, 0.4, 0.0);
        assert_abs_diff_eq!(m.base_distance(&x, &y), 0.3, epsilon = 1e-12);
        let z = point(0.3, 0.7, 0.0);
        assert_abs_diff_eq!(
            m.base_distance(&x, &z),
            (0.3f64.powi(2) + 0.3f64.powi(2)).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn pair_part_composes_by_arc_addition() {
        let m = model();
        let b = crate::models::Arrow { source: point(0.5, 0.9, 0.2), g: [0.4, 0.1, -0.2] };
        let a = crate::models::Arrow { source: m.target(&b), g: [-0.9, 0.3, 0.0] };
        let ab = m.compose(&a, &b).unwrap();
        assert_abs_diff_eq!(ab.g[0], -0.5, epsilon = 1e-15);
        let t = m.target(&ab);
        match t {
            BasePoint::Cylinder { phi, .. } => assert_abs_diff_eq!(phi, 0.0, epsilon = 1e-12),
            _ => unreachable!(),
        }
    }

    #[test]
    fn anchor_matrix_has_unit_pair_block_and_sphere_block() {
        let m = model();
        let x = point(1.0, 0.6, 0.3);
        let (nu, rows, cols) = m.nu_matrix(&x);
        assert_eq!((rows, cols), (4, 3));
        assert_abs_diff_eq!(nu[0], 1.0, epsilon = 1e-15);
        // The phi row has no sphere part and vice versa.
        assert_eq!(nu[1], 0.0);
        assert_eq!(nu[2], 0.0);
        assert_eq!(nu[3], 0.0);
        assert_eq!(nu[6], 0.0);
        assert_eq!(nu[9], 0.0);
        let p = sphere::from_polar(0.6, 0.3);
        let v = sphere::anchor_fields(p);
        for row in 0..3 {
            assert_abs_diff_eq!(nu[(row + 1) * 3 + 1], v[0][row], epsilon = 1e-15);
            assert_abs_diff_eq!(nu[(row + 1) * 3 + 2], v[1][row], epsilon = 1e-15);
        }
    }
}
