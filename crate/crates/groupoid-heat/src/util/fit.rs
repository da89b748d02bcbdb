//! Envelope fits of the form `y <= C exp(M x)` and `y <= C rho^omega`.
//!
//! The slope comes from least squares in log coordinates; the constant is
//! then pushed outward until no sample violates the bound. Fits therefore
//! certify the sampled data rather than merely summarizing it: an upper fit
//! satisfies `y_i <= coeff * exp(rate * x_i)` for every sample, a lower fit
//! the reverse inequality.

/// An envelope `coeff * exp(rate * x)` together with fit diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeFit {
    pub coeff: f64,
    pub rate: f64,
    /// Root mean square residual of the least squares line in log space,
    /// before the constant was pushed outward.
    pub log_residual: f64,
    pub samples: usize,
}

impl EnvelopeFit {
    pub fn eval_exp(&self, x: f64) -> f64 {
        self.coeff * (self.rate * x).exp()
    }

    pub fn eval_power(&self, rho: f64) -> f64 {
        self.coeff * rho.powf(self.rate)
    }
}

/// Optional constraints on the fitted rate.
#[derive(Debug, Clone, Copy, Default)]
pub struct FitOptions {
    pub min_rate: Option<f64>,
    pub max_rate: Option<f64>,
}

/// Plain least squares line through `(x, y)`: returns `(intercept, slope)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return (ys.first().copied().unwrap_or(0.0), 0.0);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return (my, 0.0);
    }
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

fn envelope(xs: &[f64], ys: &[f64], upper: bool, opts: FitOptions) -> EnvelopeFit {
    assert_eq!(xs.len(), ys.len());
    // Zero samples are trivially below any upper envelope; a lower envelope
    // touching zero forces coeff = 0.
    let kept: Vec<(f64, f64)> =
        xs.iter().zip(ys).filter(|(_, &y)| y > 0.0).map(|(&x, &y)| (x, y)).collect();
    if kept.is_empty() {
        return EnvelopeFit { coeff: 0.0, rate: 0.0, log_residual: 0.0, samples: 0 };
    }
    if !upper && kept.len() != ys.len() {
        return EnvelopeFit { coeff: 0.0, rate: 0.0, log_residual: 0.0, samples: ys.len() };
    }
    let lx: Vec<f64> = kept.iter().map(|&(x, _)| x).collect();
    let ly: Vec<f64> = kept.iter().map(|&(_, y)| y.ln()).collect();
    let (intercept, mut rate) = fit_line(&lx, &ly);
    if let Some(lo) = opts.min_rate {
        rate = rate.max(lo);
    }
    if let Some(hi) = opts.max_rate {
        rate = rate.min(hi);
    }
    let mut residual = 0.0;
    for (&x, &l) in lx.iter().zip(&ly) {
        let r = l - (intercept + rate * x);
        residual += r * r;
    }
    let log_residual = (residual / lx.len() as f64).sqrt();
    // Push the constant outward so every sample satisfies the bound.
    let log_coeff = lx
        .iter()
        .zip(&ly)
        .map(|(&x, &l)| l - rate * x)
        .reduce(|a, b| if upper { a.max(b) } else { a.min(b) })
        .unwrap();
    EnvelopeFit { coeff: log_coeff.exp(), rate, log_residual, samples: kept.len() }
}

/// Fit `y <= coeff * exp(rate x)` with no sample violations.
pub fn fit_exp_upper(xs: &[f64], ys: &[f64], opts: FitOptions) -> EnvelopeFit {
    envelope(xs, ys, true, opts)
}

/// Fit `y >= coeff * exp(rate x)` with no sample violations.
pub fn fit_exp_lower(xs: &[f64], ys: &[f64], opts: FitOptions) -> EnvelopeFit {
    envelope(xs, ys, false, opts)
}

/// Fit `y <= coeff * rho^rate` on positive `rho` with no sample violations.
pub fn fit_power_upper(rhos: &[f64], ys: &[f64], opts: FitOptions) -> EnvelopeFit {
    let lx: Vec<f64> = rhos.iter().map(|&r| r.ln()).collect();
    envelope(&lx, ys, true, opts)
}

/// Fit `y >= coeff * rho^rate` on positive `rho` with no sample violations.
pub fn fit_power_lower(rhos: &[f64], ys: &[f64], opts: FitOptions) -> EnvelopeFit {
    let lx: Vec<f64> = rhos.iter().map(|&r| r.ln()).collect();
    envelope(&lx, ys, false, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn line_fit_recovers_slope() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 0.7 * x).collect();
        let (b, m) = fit_line(&xs, &ys);
        assert_abs_diff_eq!(b, 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(m, -0.7, epsilon = 1e-12);
    }

    #[test]
    fn upper_envelope_covers_all_samples() {
        let xs: Vec<f64> = (0..25).map(|i| i as f64 * 0.2).collect();
        // Deterministic bounded wiggle around 3 e^{1.7 x}.
        let ys: Vec<f64> =
            xs.iter().map(|&x| 3.0 * (1.7 * x).exp() * (1.0 + 0.1 * (13.0 * x).sin())).collect();
        let fit = fit_exp_upper(&xs, &ys, FitOptions::default());
        assert_abs_diff_eq!(fit.rate, 1.7, epsilon = 0.05);
        for (&x, &y) in xs.iter().zip(&ys) {
            assert!(y <= fit.eval_exp(x) * (1.0 + 1e-12));
        }
        // The constant should not be wildly inflated.
        assert!(fit.coeff < 3.0 * 1.2 * 1.5);
    }

    #[test]
    fn lower_envelope_stays_below_samples() {
        let xs: Vec<f64> = (1..20).map(|i| i as f64 * 0.25).collect();
        let ys: Vec<f64> =
            xs.iter().map(|&x| 2.0 * (0.9 * x).exp() * (1.0 + 0.05 * (7.0 * x).cos())).collect();
        let fit = fit_exp_lower(&xs, &ys, FitOptions::default());
        for (&x, &y) in xs.iter().zip(&ys) {
            assert!(y >= fit.eval_exp(x) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn power_envelope_recovers_exponent() {
        let rhos: Vec<f64> = (1..=30).map(|i| i as f64 / 30.0).collect();
        let ys: Vec<f64> = rhos.iter().map(|&r| 2.0 * r.powf(1.5)).collect();
        let up = fit_power_upper(&rhos, &ys, FitOptions::default());
        assert_abs_diff_eq!(up.rate, 1.5, epsilon = 1e-10);
        assert_abs_diff_eq!(up.coeff, 2.0, epsilon = 1e-10);
        let low = fit_power_lower(&rhos, &ys, FitOptions::default());
        assert_abs_diff_eq!(low.coeff, 2.0, epsilon = 1e-10);
    }

    #[test]
    fn rate_clamp_is_respected_and_bound_still_holds() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (0.5 * x).exp()).collect();
        let opts = FitOptions { min_rate: Some(1.0), max_rate: None };
        let fit = fit_exp_upper(&xs, &ys, opts);
        assert_eq!(fit.rate, 1.0);
        for (&x, &y) in xs.iter().zip(&ys) {
            assert!(y <= fit.eval_exp(x) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_data_yields_zero_envelope() {
        let xs = [0.0, 1.0, 2.0];
        let ys = [0.0, 0.0, 0.0];
        let fit = fit_exp_upper(&xs, &ys, FitOptions::default());
        assert_eq!(fit.coeff, 0.0);
    }
}
