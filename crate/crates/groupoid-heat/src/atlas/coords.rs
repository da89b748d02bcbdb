//! Coordinate changes between charts of one model.
//!
//! The transition realizes the arrow in the source chart and inverts it in
//! the target chart, seeded with the source coordinates. Since all charts
//! share the isotropy sections, tau barely moves under a transition: over
//! the stratum it is reproduced exactly and the tangential part shifts
//! rigidly by the word times, while off the stratum the mismatch of the
//! flows is of order rho.

use super::certify::CertifiedChart;
use super::{AtlasError, AtlasOptions, ExpChart, Inverse};
use crate::flows::variational::base_frame;
use crate::models::BasePoint;
use crate::util::rng::stream;

/// Transition of one charted arrow into another chart.
pub fn change_coordinates(
    from: &ExpChart,
    to: &ExpChart,
    x: &BasePoint,
    mu: &[f64],
    tau: &[f64],
    opts: &AtlasOptions,
) -> Result<Inverse, AtlasError> {
    let arrow = from.forward(x, mu, tau, opts)?;
    let seed_mu = if to.p() == from.p() { mu.to_vec() } else { vec![0.0; to.p()] };
    let seed_tau = if to.q() == from.q() { tau.to_vec() } else { vec![0.0; to.q()] };
    to.invert(&arrow, Some((&seed_mu, &seed_tau)), opts)
}

/// Samples (||tau||_1, ||psi - tau||_inf / rho) over ordered chart pairs,
/// the raw material for the transition drift envelope.
pub fn coord_change_tau_samples(
    charts: &[CertifiedChart],
    n: usize,
    seed: u64,
    label: &str,
    opts: &AtlasOptions,
) -> Result<Vec<(f64, f64)>, AtlasError> {
    let mut out = Vec::new();
    if charts.len() < 2 {
        return Ok(out);
    }
    for (idx, cc) in charts.iter().enumerate() {
        let mut rng =
            stream(seed, &format!("{}/{}/{}", label, cc.chart.model.describe(), cc.chart.id));
        let per = n / charts.len() + usize::from(idx < n % charts.len());
        for k in 0..per {
            let to = &charts[(idx + 1 + k % (charts.len() - 1)) % charts.len()].chart;
            let (x, mu, tau) =
                super::certify::draw_sample(&mut rng, &cc.chart, cc.cert.r, cc.cert.m_rate);
            let inv = change_coordinates(&cc.chart, to, &x, &mu, &tau, opts)?;
            let drift = inv
                .tau
                .iter()
                .zip(&tau)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let rho = cc.chart.model.rho(&x);
            out.push((tau.iter().map(|t| t.abs()).sum(), drift / rho));
        }
    }
    Ok(out)
}

/// Samples (||tau||_1, ||d psi / d x||_inf) of the transition, by central
/// differences along the base frame.
pub fn coord_change_tau_derivative_samples(
    charts: &[CertifiedChart],
    n: usize,
    seed: u64,
    label: &str,
    opts: &AtlasOptions,
) -> Result<Vec<(f64, f64)>, AtlasError> {
    let delta = 1e-5;
    let mut out = Vec::new();
    if charts.len() < 2 {
        return Ok(out);
    }
    for (idx, cc) in charts.iter().enumerate() {
        let mut rng =
            stream(seed, &format!("{}/{}/{}", label, cc.chart.model.describe(), cc.chart.id));
        let per = n / charts.len() + usize::from(idx < n % charts.len());
        for k in 0..per {
            let to = &charts[(idx + 1 + k % (charts.len() - 1)) % charts.len()].chart;
            let (x, mu, tau) =
                super::certify::draw_sample(&mut rng, &cc.chart, cc.cert.r, cc.cert.m_rate);
            let model = &cc.chart.model;
            let mut grad = 0.0f64;
            for dir in base_frame(model, &x) {
                let xp = model.shift(&x, &dir, delta);
                let xm = model.shift(&x, &dir, -delta);
                let ip = change_coordinates(&cc.chart, to, &xp, &mu, &tau, opts)?;
                let im = change_coordinates(&cc.chart, to, &xm, &mu, &tau, opts)?;
                for (a, b) in ip.tau.iter().zip(&im.tau) {
                    grad = grad.max(((a - b) / (2.0 * delta)).abs());
                }
            }
            out.push((tau.iter().map(|t| t.abs()).sum(), grad));
        }
    }
    Ok(out)
}
