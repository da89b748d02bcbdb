//! Small dense linear algebra: LU solves, determinants, symmetric
//! eigenvalues up to 3x3, singular values of skinny matrices.
//!
//! All matrices are row major `&[f64]` slices; dimensions stay below ten
//! everywhere in this crate, so no attempt is made at blocking or pivot
//! scaling beyond plain partial pivoting.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular to working precision (pivot {pivot:.3e} at column {col})")]
    Singular { col: usize, pivot: f64 },
    #[error("dimension mismatch: matrix {n}x{n}, vector {len}")]
    Shape { n: usize, len: usize },
}

/// LU decomposition with partial pivoting, in place. Returns the pivot
/// permutation and the sign of the permutation.
fn lu_decompose(a: &mut [f64], n: usize) -> Result<(Vec<usize>, f64), LinalgError> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut sign = 1.0;
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a[col * n + col].abs();
        for row in col + 1..n {
            let v = a[row * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val < f64::MIN_POSITIVE * 16.0 {
            return Err(LinalgError::Singular { col, pivot: pivot_val });
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            perm.swap(col, pivot_row);
            sign = -sign;
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            a[row * n + col] = factor;
            for k in col + 1..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
        }
    }
    Ok((perm, sign))
}

/// Solve `a x = b` for a square row major matrix, overwriting `b` with `x`.
pub fn solve(a: &[f64], b: &mut [f64], n: usize) -> Result<(), LinalgError> {
    if a.len() != n * n || b.len() != n {
        return Err(LinalgError::Shape { n, len: b.len() });
    }
    let mut lu = a.to_vec();
    let (perm, _) = lu_decompose(&mut lu, n)?;
    let mut x = vec![0.0; n];
    for (i, &p) in perm.iter().enumerate() {
        x[i] = b[p];
    }
    for i in 0..n {
        for k in 0..i {
            x[i] -= lu[i * n + k] * x[k];
        }
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= lu[i * n + k] * x[k];
        }
        x[i] /= lu[i * n + i];
    }
    b.copy_from_slice(&x);
    Ok(())
}

/// Solve `a X = B` for several right hand sides stored column wise in a
/// row major `n x m` matrix.
pub fn solve_many(a: &[f64], b: &mut [f64], n: usize, m: usize) -> Result<(), LinalgError> {
    let mut col = vec![0.0; n];
    for j in 0..m {
        for i in 0..n {
            col[i] = b[i * m + j];
        }
        solve(a, &mut col, n)?;
        for i in 0..n {
            b[i * m + j] = col[i];
        }
    }
    Ok(())
}

/// Matrix inverse, row major.
pub fn invert(a: &[f64], n: usize) -> Result<Vec<f64>, LinalgError> {
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    solve_many(a, &mut inv, n, n)?;
    Ok(inv)
}

/// Determinant via LU.
pub fn det(a: &[f64], n: usize) -> f64 {
    let mut lu = a.to_vec();
    match lu_decompose(&mut lu, n) {
        Ok((_, sign)) => {
            let mut d = sign;
            for i in 0..n {
                d *= lu[i * n + i];
            }
            d
        }
        Err(_) => 0.0,
    }
}

/// Row major matrix multiply: `(n x k) * (k x m)`.
pub fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for l in 0..k {
            let ail = a[i * k + l];
            if ail == 0.0 {
                continue;
            }
            for j in 0..m {
                out[i * m + j] += ail * b[l * m + j];
            }
        }
    }
    out
}

/// Tridiagonal solve (Thomas algorithm). `lower`, `diag`, `upper` are the
/// three bands; `rhs` is overwritten with the solution.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
) -> Result<(), LinalgError> {
    let n = diag.len();
    if lower.len() != n - 1 || upper.len() != n - 1 || rhs.len() != n {
        return Err(LinalgError::Shape { n, len: rhs.len() });
    }
    let mut c = vec![0.0; n - 1];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom.abs() < f64::MIN_POSITIVE * 16.0 {
        return Err(LinalgError::Singular { col: 0, pivot: denom.abs() });
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i - 1] * c[i - 1];
        if denom.abs() < f64::MIN_POSITIVE * 16.0 {
            return Err(LinalgError::Singular { col: i, pivot: denom.abs() });
        }
        if i < n - 1 {
            c[i] = upper[i] / denom;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / denom;
    }
    rhs[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = d[i] - c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn sym_eigenvalues_2(a: &[f64]) -> [f64; 2] {
    let (p, q, r) = (a[0], a[1], a[3]);
    let mean = 0.5 * (p + r);
    let disc = (0.25 * (p - r) * (p - r) + q * q).sqrt();
    [mean - disc, mean + disc]
}

/// Eigenvalues of a symmetric 3x3 matrix, ascending, by the trigonometric
/// closed form.
pub fn sym_eigenvalues_3(a: &[f64]) -> [f64; 3] {
    let (a11, a12, a13) = (a[0], a[1], a[2]);
    let (a22, a23, a33) = (a[4], a[5], a[8]);
    let p1 = a12 * a12 + a13 * a13 + a23 * a23;
    let q = (a11 + a22 + a33) / 3.0;
    if p1 == 0.0 {
        let mut eig = [a11, a22, a33];
        eig.sort_by(f64::total_cmp);
        return eig;
    }
    let p2 = (a11 - q).powi(2) + (a22 - q).powi(2) + (a33 - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = [
        (a11 - q) / p,
        a12 / p,
        a13 / p,
        a12 / p,
        (a22 - q) / p,
        a23 / p,
        a13 / p,
        a23 / p,
        (a33 - q) / p,
    ];
    let r = 0.5 * det(&b, 3);
    let phi = if r <= -1.0 {
        std::f64::consts::PI / 3.0
    } else if r >= 1.0 {
        0.0
    } else {
        r.acos() / 3.0
    };
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut eig = [e1, e2, e3];
    eig.sort_by(f64::total_cmp);
    eig
}

/// Singular values of a row major `rows x cols` matrix with `rows >= cols`,
/// ascending. One-sided Jacobi: tiny singular values are computed with high
/// relative accuracy, unlike the Gram matrix route, whose error floor is
/// sqrt(machine eps) times the largest singular value.
pub fn singular_values(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert!(a.len() == rows * cols && rows >= cols && cols > 0);
    let mut m = a.to_vec();
    let col_dot = |m: &[f64], i: usize, j: usize| -> f64 {
        (0..rows).map(|r| m[r * cols + i] * m[r * cols + j]).sum()
    };
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for i in 0..cols {
            for j in (i + 1)..cols {
                let app = col_dot(&m, i, i);
                let aqq = col_dot(&m, j, j);
                let apq = col_dot(&m, i, j);
                if apq == 0.0 {
                    continue;
                }
                off = off.max(apq.abs() / (app * aqq).sqrt().max(f64::MIN_POSITIVE));
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let vi = m[r * cols + i];
                    let vj = m[r * cols + j];
                    m[r * cols + i] = c * vi - s * vj;
                    m[r * cols + j] = s * vi + c * vj;
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut sv: Vec<f64> = (0..cols).map(|i| col_dot(&m, i, i).sqrt()).collect();
    sv.sort_by(f64::total_cmp);
    sv
}

/// Smallest singular value of a row major `rows x cols` matrix.
pub fn min_singular_value(a: &[f64], rows: usize, cols: usize) -> f64 {
    singular_values(a, rows, cols)[0]
}

/// Largest singular value, same layout restrictions as [`min_singular_value`].
pub fn max_singular_value(a: &[f64], rows: usize, cols: usize) -> f64 {
    *singular_values(a, rows, cols).last().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn solve_recovers_known_solution() {
        let a = [2.0, 1.0, -1.0, -3.0, -1.0, 2.0, -2.0, 1.0, 2.0];
        let mut b = [8.0, -11.0, -3.0];
        solve(&a, &mut b, 3).unwrap();
        assert_abs_diff_eq!(b[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b[1], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b[2], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn invert_then_multiply_is_identity() {
        let a = [4.0, 7.0, 1.0, 2.0, 6.0, 0.5, -1.0, 3.0, 5.0];
        let inv = invert(&a, 3).unwrap();
        let prod = matmul(&a, &inv, 3, 3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(prod[i * 3 + j], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = [1.0, 2.0, 2.0, 4.0];
        let mut b = [1.0, 1.0];
        assert!(matches!(solve(&a, &mut b, 2), Err(LinalgError::Singular { .. })));
    }

    #[test]
    fn det_matches_cofactor_expansion() {
        let a = [3.0, 0.0, 2.0, 2.0, 0.0, -2.0, 0.0, 1.0, 1.0];
        assert_abs_diff_eq!(det(&a, 3), 10.0, epsilon = 1e-12);
        let b = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(det(&b, 2), -2.0, epsilon = 1e-14);
    }

    #[test]
    fn tridiagonal_matches_dense_solve() {
        let n = 6;
        let lower = vec![-1.0; n - 1];
        let diag = vec![2.5; n];
        let upper = vec![-1.2; n - 1];
        let rhs0: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();

        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            dense[i * n + i] = diag[i];
            if i + 1 < n {
                dense[(i + 1) * n + i] = lower[i];
                dense[i * n + i + 1] = upper[i];
            }
        }
        let mut expect = rhs0.clone();
        solve(&dense, &mut expect, n).unwrap();

        let mut got = rhs0;
        solve_tridiagonal(&lower, &diag, &upper, &mut got).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(got[i], expect[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn symmetric_eigenvalues_match_characteristic_roots() {
        let a2 = [2.0, 1.0, 1.0, 2.0];
        let eig2 = sym_eigenvalues_2(&a2);
        assert_abs_diff_eq!(eig2[0], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(eig2[1], 3.0, epsilon = 1e-13);

        // Eigenvalues 1, 2, 4 by construction.
        let a3 = [2.0, 0.0, 1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 3.0];
        let eig3 = sym_eigenvalues_3(&a3);
        let golden0 = 2.5 - (5.0f64 / 4.0).sqrt();
        let golden2 = 2.5 + (5.0f64 / 4.0).sqrt();
        assert_abs_diff_eq!(eig3[0], golden0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig3[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig3[2], golden2, epsilon = 1e-12);
    }

    #[test]
    fn singular_values_of_scaled_rotation() {
        let c = (0.3f64).cos();
        let s = (0.3f64).sin();
        // Rotation times diag(3, 0.5).
        let a = [3.0 * c, -0.5 * s, 3.0 * s, 0.5 * c];
        assert_abs_diff_eq!(min_singular_value(&a, 2, 2), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(max_singular_value(&a, 2, 2), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_values_of_tall_matrix() {
        // 3x2 with orthogonal columns of norms 2 and 5.
        let a = [2.0, 0.0, 0.0, 3.0, 0.0, 4.0];
        assert_abs_diff_eq!(min_singular_value(&a, 3, 2), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(max_singular_value(&a, 3, 2), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn tiny_singular_values_keep_relative_accuracy() {
        // sigma_min nine orders below sigma_max; the Gram matrix route
        // would return garbage here.
        let c = (0.7f64).cos();
        let s = (0.7f64).sin();
        let sigma = 3.2e-9;
        let a = [c, -sigma * s, s, sigma * c];
        approx::assert_relative_eq!(min_singular_value(&a, 2, 2), sigma, max_relative = 1e-12);
        // Tall 4x3 with one large and two tiny orthogonal columns.
        let t = 5.0e-9;
        let b = [1.0, 0.0, 0.0, 0.0, t, 0.0, 0.0, 0.0, 2.0 * t, 0.0, 0.0, 0.0];
        approx::assert_relative_eq!(min_singular_value(&b, 4, 3), t, max_relative = 1e-12);
        let sv = singular_values(&b, 4, 3);
        approx::assert_relative_eq!(sv[1], 2.0 * t, max_relative = 1e-12);
        approx::assert_relative_eq!(sv[2], 1.0, max_relative = 1e-12);
    }
}
