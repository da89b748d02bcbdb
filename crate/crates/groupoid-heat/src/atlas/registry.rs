//! Append-only store for fitted estimate constants.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::Serialize;

use super::AtlasError;
use crate::util::fit::{fit_exp_upper, fit_power_upper, FitOptions};

/// Functional form of a fitted bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundForm {
    /// quantity <= coeff * exp(rate * arg)
    ExpArg,
    /// quantity <= coeff * rho^rate
    PowerRho,
}

/// One fitted constant pair together with how it was measured.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateFit {
    pub label: String,
    pub form: BoundForm,
    pub coeff: f64,
    pub rate: f64,
    pub samples: usize,
    /// Largest (signed) log residual of the fit over its sample set;
    /// nonpositive when the bound holds on every sample.
    pub max_residual: f64,
    /// Violations counted on a verification set disjoint from the fit set.
    pub violations: usize,
}

impl EstimateFit {
    pub fn eval(&self, arg: f64) -> f64 {
        match self.form {
            BoundForm::ExpArg => self.coeff * (self.rate * arg).exp(),
            BoundForm::PowerRho => self.coeff * arg.powf(self.rate),
        }
    }
}

/// Estimates registered during a run, keyed by label. Publishing the same
/// label twice is an error so stale constants can never be overwritten.
#[derive(Debug, Default)]
pub struct FitRegistry {
    inner: Mutex<BTreeMap<String, EstimateFit>>,
}

impl FitRegistry {
    pub fn new() -> FitRegistry {
        FitRegistry::default()
    }

    pub fn publish(&self, fit: EstimateFit) -> Result<(), AtlasError> {
        let mut map = self.inner.lock().unwrap();
        if map.contains_key(&fit.label) {
            return Err(AtlasError::DuplicateLabel(fit.label));
        }
        map.insert(fit.label.clone(), fit);
        Ok(())
    }

    pub fn get(&self, label: &str) -> Option<EstimateFit> {
        self.inner.lock().unwrap().get(label).cloned()
    }

    pub fn snapshot(&self) -> Vec<EstimateFit> {
        self.inner.lock().unwrap().values().cloned().collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).unwrap()
    }
}

/// Fit an upper envelope on one sample set, inflate the constant, verify it
/// on a disjoint fresh set, and publish the result. `max_residual` is the
/// largest log excess over the inflated bound on the fresh set, so any
/// positive value is a violation.
pub fn publish_envelope(
    registry: &FitRegistry,
    label: &str,
    form: BoundForm,
    fit_opts: FitOptions,
    inflate: f64,
    fit_set: &[(f64, f64)],
    fresh_set: &[(f64, f64)],
) -> Result<EstimateFit, AtlasError> {
    let xs: Vec<f64> = fit_set.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = fit_set.iter().map(|s| s.1).collect();
    let env = match form {
        BoundForm::ExpArg => fit_exp_upper(&xs, &ys, fit_opts),
        BoundForm::PowerRho => fit_power_upper(&xs, &ys, fit_opts),
    };
    let fit = EstimateFit {
        label: label.to_string(),
        form,
        coeff: env.coeff * inflate,
        rate: env.rate,
        samples: fit_set.len(),
        max_residual: 0.0,
        violations: 0,
    };
    let mut max_residual = f64::NEG_INFINITY;
    let mut violations = 0;
    for &(x, y) in fresh_set {
        let bound = fit.eval(x);
        if y > bound {
            violations += 1;
        }
        if y > 0.0 && bound > 0.0 {
            max_residual = max_residual.max((y / bound).ln());
        }
    }
    let fit = EstimateFit {
        max_residual: if max_residual.is_finite() { max_residual } else { 0.0 },
        violations,
        ..fit
    };
    registry.publish(fit.clone())?;
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fit(label: &str) -> EstimateFit {
        EstimateFit {
            label: label.to_string(),
            form: BoundForm::ExpArg,
            coeff: 2.0,
            rate: 0.5,
            samples: 10,
            max_residual: -0.01,
            violations: 0,
        }
    }

    #[test]
    fn publish_is_append_only() {
        let reg = FitRegistry::new();
        reg.publish(fit("a")).unwrap();
        reg.publish(fit("b")).unwrap();
        assert!(matches!(reg.publish(fit("a")), Err(AtlasError::DuplicateLabel(_))));
        assert_eq!(reg.snapshot().len(), 2);
        assert_eq!(reg.get("b").unwrap().coeff, 2.0);
    }

    #[test]
    fn eval_matches_the_declared_form() {
        let f = fit("c");
        assert!((f.eval(2.0) - 2.0 * 1.0f64.exp()).abs() < 1e-15);
        let p = EstimateFit { form: BoundForm::PowerRho, rate: 2.0, ..fit("d") };
        assert!((p.eval(0.5) - 0.5) < 1e-15);
    }

    #[test]
    fn json_snapshot_is_sorted_by_label() {
        let reg = FitRegistry::new();
        reg.publish(fit("zeta")).unwrap();
        reg.publish(fit("alpha")).unwrap();
        let js = reg.to_json();
        assert!(js.find("alpha").unwrap() < js.find("zeta").unwrap());
    }
}
