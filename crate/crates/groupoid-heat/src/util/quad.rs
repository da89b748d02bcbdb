//! Quadrature rules: Gauss-Legendre, Gauss-Hermite, Simpson variants.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// Nodes and weights of an n-point rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Apply the rule to a function.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Legendre polynomial value and derivative at `x` via the three term recurrence.
fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn gauss_legendre_uncached(n: usize) -> Rule {
    assert!(n >= 1, "empty quadrature rule");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        weights[i] = w;
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

/// n-point Gauss-Legendre rule on [-1, 1]. Results are cached per n.
pub fn gauss_legendre(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard.entry(n).or_insert_with(|| gauss_legendre_uncached(n)).clone()
}

/// n-point Gauss-Legendre rule mapped to [a, b].
pub fn gauss_legendre_on(a: f64, b: f64, n: usize) -> Rule {
    let base = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    Rule {
        nodes: base.nodes.iter().map(|&x| mid + half * x).collect(),
        weights: base.weights.iter().map(|&w| half * w).collect(),
    }
}

/// Composite Gauss-Legendre rule: [a, b] split into panels no wider than
/// `max_panel`, with `n_per_panel` nodes on each panel.
pub fn composite_gauss_legendre(a: f64, b: f64, max_panel: f64, n_per_panel: usize) -> Rule {
    assert!(b > a && max_panel > 0.0);
    let panels = ((b - a) / max_panel).ceil().max(1.0) as usize;
    let width = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * n_per_panel);
    let mut weights = Vec::with_capacity(panels * n_per_panel);
    for p in 0..panels {
        let lo = a + p as f64 * width;
        let local = gauss_legendre_on(lo, lo + width, n_per_panel);
        nodes.extend(local.nodes);
        weights.extend(local.weights);
    }
    Rule { nodes, weights }
}

/// n-point Gauss-Hermite rule: integrates `exp(-x^2) f(x)` over the line.
pub fn gauss_hermite(n: usize) -> Rule {
    static CACHE: OnceLock<Mutex<HashMap<usize, Rule>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard.entry(n).or_insert_with(|| gauss_hermite_uncached(n)).clone()
}

/// Orthonormal Hermite value at `x` along with the previous polynomial,
/// needed for Newton iterations and weights.
fn hermite_orthonormal(n: usize, x: f64) -> (f64, f64) {
    let mut p_prev = 0.0;
    let mut p = std::f64::consts::PI.powf(-0.25);
    for k in 0..n {
        let kf = k as f64;
        let p_next = x * (2.0 / (kf + 1.0)).sqrt() * p - (kf / (kf + 1.0)).sqrt() * p_prev;
        p_prev = p;
        p = p_next;
    }
    (p, p_prev)
}

fn gauss_hermite_uncached(n: usize) -> Rule {
    assert!(n >= 1, "empty quadrature rule");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut guesses: Vec<f64> = Vec::with_capacity(m);
    for i in 0..m {
        // Largest roots first, standard initial guesses.
        let x = match i {
            0 => {
                let a = (2.0 * n as f64 + 1.0).sqrt();
                a - 1.85575 * a.powf(-1.0 / 3.0)
            }
            1 => guesses[0] - 1.14 * (n as f64).powf(0.426) / guesses[0],
            2 => 1.86 * guesses[1] - 0.86 * guesses[0],
            3 => 1.91 * guesses[2] - 0.91 * guesses[1],
            _ => 2.0 * guesses[i - 1] - guesses[i - 2],
        };
        guesses.push(x);
        let mut x = x;
        for _ in 0..200 {
            let (p, p_prev) = hermite_orthonormal(n, x);
            let dp = (2.0 * n as f64).sqrt() * p_prev;
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-14 * (1.0 + x.abs()) {
                break;
            }
        }
        guesses[i] = x;
        let (_, p_prev) = hermite_orthonormal(n, x);
        let w = 1.0 / (n as f64 * p_prev * p_prev);
        nodes[i] = x;
        weights[i] = w;
        nodes[n - 1 - i] = -x;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        let (_, p_prev) = hermite_orthonormal(n, 0.0);
        weights[n / 2] = 1.0 / (n as f64 * p_prev * p_prev);
    }
    // Present nodes in increasing order.
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| nodes[a].total_cmp(&nodes[b]));
    Rule {
        nodes: idx.iter().map(|&i| nodes[i]).collect(),
        weights: idx.iter().map(|&i| weights[i]).collect(),
    }
}

/// Cumulative integral of uniformly sampled values, quadratic per interval.
/// Returns a vector `c` with `c[0] = 0` and `c[i]` approximating the integral
/// from the first node up to node `i`.
pub fn cumulative_simpson(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    assert!(n >= 3, "cumulative Simpson needs at least three samples");
    let mut out = vec![0.0; n];
    for i in 0..n - 1 {
        // Quadratic through three consecutive samples containing [i, i+1].
        let seg = if i + 2 < n {
            let (f0, f1, f2) = (values[i], values[i + 1], values[i + 2]);
            h * (5.0 * f0 + 8.0 * f1 - f2) / 12.0
        } else {
            let (f0, f1, f2) = (values[i - 1], values[i], values[i + 1]);
            h * (-f0 + 8.0 * f1 + 5.0 * f2) / 12.0
        };
        out[i + 1] = out[i] + seg;
    }
    out
}

/// Adaptive Simpson integration to absolute tolerance `tol`.
pub fn adaptive_simpson(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson_rec(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}
