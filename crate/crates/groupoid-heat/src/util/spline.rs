//! Natural cubic spline interpolation on a sorted node set.

use super::linalg::solve_tridiagonal;

#[derive(Debug, Clone)]
pub struct CubicSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the nodes (natural: zero at both ends).
    m: Vec<f64>,
}

impl CubicSpline {
    /// Build a natural cubic spline through `(xs[i], ys[i])`. Nodes must be
    /// strictly increasing and at least two.
    pub fn new(xs: &[f64], ys: &[f64]) -> CubicSpline {
        let n = xs.len();
        assert!(n >= 2 && n == ys.len(), "spline needs matching node/value lists");
        for w in xs.windows(2) {
            assert!(w[1] > w[0], "spline nodes must be strictly increasing");
        }
        if n == 2 {
            return CubicSpline { xs: xs.to_vec(), ys: ys.to_vec(), m: vec![0.0; 2] };
        }
        let interior = n - 2;
        let mut lower = vec![0.0; interior - 1];
        let mut diag = vec![0.0; interior];
        let mut upper = vec![0.0; interior - 1];
        let mut rhs = vec![0.0; interior];
        for i in 0..interior {
            let h0 = xs[i + 1] - xs[i];
            let h1 = xs[i + 2] - xs[i + 1];
            diag[i] = 2.0 * (h0 + h1);
            if i > 0 {
                lower[i - 1] = h0;
            }
            if i + 1 < interior {
                upper[i] = h1;
            }
            rhs[i] = 6.0 * ((ys[i + 2] - ys[i + 1]) / h1 - (ys[i + 1] - ys[i]) / h0);
        }
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs).expect("spline system is diagonally dominant");
        let mut m = vec![0.0; n];
        m[1..n - 1].copy_from_slice(&rhs);
        CubicSpline { xs: xs.to_vec(), ys: ys.to_vec(), m }
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return 0;
        }
        if x >= self.xs[n - 1] {
            return n - 2;
        }
        match self.xs.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i - 1,
        }
    }

    /// Evaluate the spline. Outside the node range the boundary cubic is
    /// extended, so callers should stay inside the fitted interval.
    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        a * self.ys[i]
            + b * self.ys[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }

    /// First derivative of the spline.
    pub fn eval_d1(&self, x: f64) -> f64 {
        let i = self.segment(x);
        let h = self.xs[i + 1] - self.xs[i];
        let a = (self.xs[i + 1] - x) / h;
        let b = (x - self.xs[i]) / h;
        (self.ys[i + 1] - self.ys[i]) / h
            + ((3.0 * b * b - 1.0) * self.m[i + 1] - (3.0 * a * a - 1.0) * self.m[i]) * h / 6.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_data_is_reproduced_exactly() {
        let xs: Vec<f64> = (0..7).map(|i| i as f64 * 0.5).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let spline = CubicSpline::new(&xs, &ys);
        for i in 0..60 {
            let x = i as f64 * 0.05;
            assert_abs_diff_eq!(spline.eval(x), 2.0 * x - 1.0, epsilon = 1e-13);
            assert_abs_diff_eq!(spline.eval_d1(x), 2.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn smooth_function_is_interpolated_to_quartic_accuracy() {
        let n = 41;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64 * 3.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sin()).collect();
        let spline = CubicSpline::new(&xs, &ys);
        // Stay away from the ends where the natural condition costs accuracy.
        for i in 0..200 {
            let x = 0.5 + i as f64 * 0.01;
            assert_abs_diff_eq!(spline.eval(x), x.sin(), epsilon = 5e-7);
            assert_abs_diff_eq!(spline.eval_d1(x), x.cos(), epsilon = 5e-5);
        }
    }

    #[test]
    fn interpolates_nodes_exactly() {
        let xs = [0.0, 0.3, 1.1, 2.0, 2.2];
        let ys = [1.0, -0.4, 0.9, 2.5, 2.4];
        let spline = CubicSpline::new(&xs, &ys);
        for (x, y) in xs.iter().zip(&ys) {
            assert_abs_diff_eq!(spline.eval(*x), *y, epsilon = 1e-13);
        }
    }
}
