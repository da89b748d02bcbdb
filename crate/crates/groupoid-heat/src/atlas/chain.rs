//! Chains of charted exponential ladders.
//!
//! A chain applies charted factors left to right, each starting at the
//! target of the partial product, and composes the realized arrows. The
//! total arrow is then re-expressed in a single chart: the smallest id
//! whose domain holds it with a 10% margin. Along the way two quantities
//! of interest are recorded: how much the defining function rho can grow
//! along the partial targets (the domain contraction rate), and the
//! vertical correction V in d(chain) d_x = d_x + V, whose growth in the
//! chain length is the headline regularity input.

use super::certify::CertifiedChart;
use super::{AtlasError, AtlasOptions};
use crate::flows::groupoid_exp_field;
use crate::flows::variational::base_frame;
use crate::models::{Arrow, BasePoint};
use crate::util::rng::stream;
use rand::Rng;

/// One chain step: coordinates in a chart of the shared atlas.
#[derive(Debug, Clone)]
pub struct ChainStep {
    pub chart: usize,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
}

/// A composed chain, re-expressed in one chart.
#[derive(Debug, Clone)]
pub struct ChainResult {
    pub arrow: Arrow,
    /// Index into the atlas of the chart holding the total arrow.
    pub final_chart: usize,
    pub mu: Vec<f64>,
    pub tau: Vec<f64>,
    /// rho at the partial targets, starting with rho(x).
    pub rho_trace: Vec<f64>,
    /// max(1, worst ratio of consecutive rho_trace entries).
    pub h_factor: f64,
    /// Fiber norm of the vertical correction V, when requested.
    pub v_norm: Option<f64>,
}

fn realize(
    atlas: &[CertifiedChart],
    x: &BasePoint,
    steps: &[ChainStep],
    opts: &AtlasOptions,
) -> Result<(Arrow, Vec<f64>), AtlasError> {
    let model = &atlas[0].chart.model;
    let mut y = *x;
    let mut total: Option<Arrow> = None;
    let mut rho_trace = vec![model.rho(x)];
    for step in steps {
        let chart = &atlas[step.chart].chart;
        let a = chart.forward(&y, &step.mu, &step.tau, opts)?;
        y = model.target(&a);
        rho_trace.push(model.rho(&y));
        total = Some(match total {
            None => a,
            Some(t) => model.compose(&a, &t)?,
        });
    }
    Ok((total.expect("empty chain"), rho_trace))
}

fn express(
    atlas: &[CertifiedChart],
    arrow: &Arrow,
    opts: &AtlasOptions,
) -> Result<(usize, Vec<f64>, Vec<f64>), AtlasError> {
    for (idx, cc) in atlas.iter().enumerate() {
        let inv = match cc.chart.invert(arrow, None, opts) {
            Ok(inv) => inv,
            Err(AtlasError::Inversion { .. }) | Err(AtlasError::Linalg(_)) => continue,
            Err(e) => return Err(e),
        };
        if cc.chart.contains(&arrow.source, &inv.mu, &inv.tau, 0.1) {
            return Ok((idx, inv.mu, inv.tau));
        }
    }
    Err(AtlasError::NoChart)
}

/// Compose a chain of charted factors starting at x. With `with_v` the
/// vertical correction of the source derivative is measured by re-running
/// the whole chain at shifted source points and differencing in the final
/// chart.
pub fn chain_compose(
    atlas: &[CertifiedChart],
    x: &BasePoint,
    steps: &[ChainStep],
    with_v: bool,
    opts: &AtlasOptions,
) -> Result<ChainResult, AtlasError> {
    assert!(!steps.is_empty());
    let model = &atlas[0].chart.model;
    let (arrow, rho_trace) = realize(atlas, x, steps, opts)?;
    let (final_chart, mu, tau) = express(atlas, &arrow, opts)?;

    let mut h_factor = 1.0f64;
    for pair in rho_trace.windows(2) {
        h_factor = h_factor.max(pair[1] / pair[0]);
    }

    let v_norm = if with_v {
        let chart = &atlas[final_chart].chart;
        let nc = chart.n_coords();
        let q = chart.q();
        let delta = 1e-5;
        let st = chart.state(x, &mu, &tau, opts)?;
        let mut worst = 0.0f64;
        for dir in base_frame(model, x) {
            let mut coeffs = vec![0.0; nc];
            let run = |s: f64| -> Result<(Vec<f64>, Vec<f64>), AtlasError> {
                let xs = model.shift(x, &dir, s);
                let (a, _) = realize(atlas, &xs, steps, opts)?;
                let inv = chart.invert(&a, Some((&mu, &tau)), opts)?;
                Ok((inv.mu, inv.tau))
            };
            let (mu_p, tau_p) = run(delta)?;
            let (mu_m, tau_m) = run(-delta)?;
            for j in 0..q {
                coeffs[j] = (tau_p[j] - tau_m[j]) / (2.0 * delta);
            }
            for j in 0..chart.p() {
                coeffs[q + j] = (mu_p[j] - mu_m[j]) / (2.0 * delta);
            }
            worst = worst.max(st.vertical_norm(&coeffs));
        }
        Some(worst)
    } else {
        None
    };

    Ok(ChainResult { arrow, final_chart, mu, tau, rho_trace, h_factor, v_norm })
}

/// Deterministic random chains of length k for the growth measurements.
/// Sources sit deep enough that the accumulated tau of the drawn steps,
/// plus k contraction steps at rate `h_rate`, keep the total arrow
/// expressible in some chart.
pub fn sample_chain(
    atlas: &[CertifiedChart],
    k: usize,
    h_rate: f64,
    seed: u64,
    label: &str,
    index: usize,
) -> (BasePoint, Vec<ChainStep>) {
    let model = &atlas[0].chart.model;
    let mut rng = stream(seed, &format!("{}/{}/{}/{}", label, model.describe(), k, index));
    // Per step ||tau_i||_1 <= 0.9; the tangential offsets shrink with the
    // length so their random walk stays inside one chart's mu range.
    let tau_span = 0.45f64.min(0.9 / atlas[0].chart.q() as f64);
    let mu_span = 0.17 / (k as f64).sqrt();
    let steps: Vec<ChainStep> = (0..k)
        .map(|_| {
            let chart_idx = rng.gen_range(0..atlas.len());
            let chart = &atlas[chart_idx].chart;
            ChainStep {
                chart: chart_idx,
                mu: (0..chart.p())
                    .map(|_| rng.gen_range(-mu_span..mu_span) * chart.eps)
                    .collect(),
                tau: (0..chart.q()).map(|_| rng.gen_range(-tau_span..tau_span)).collect(),
            }
        })
        .collect();
    let r_min = atlas.iter().map(|c| c.cert.r).fold(f64::INFINITY, f64::min);
    let m_max = atlas.iter().map(|c| c.cert.m_rate).fold(0.0, f64::max);
    let tau_sum: f64 = steps.iter().flat_map(|s| &s.tau).map(|t| t.abs()).sum();
    let depth =
        0.45 * r_min * (-m_max * (tau_sum + 0.2)).exp() * (-(k as f64) * h_rate).exp();
    let d = depth * rng.gen_range(0.1..1.0);
    let x = model.point_at_dist(d, rng.gen_range(0.0..6.28));
    (x, steps)
}

/// Samples (k, |V|) over random chains of lengths 1..=k_max, together with
/// the largest observed per-chain h factor.
pub fn chain_growth_samples(
    atlas: &[CertifiedChart],
    k_max: usize,
    per_k: usize,
    h_rate: f64,
    seed: u64,
    label: &str,
    opts: &AtlasOptions,
) -> Result<(Vec<(f64, f64)>, f64), AtlasError> {
    let mut out = Vec::new();
    let mut worst_h = 1.0f64;
    for k in 1..=k_max {
        for i in 0..per_k {
            let (x, steps) = sample_chain(atlas, k, h_rate, seed, label, i);
            let res = chain_compose(atlas, &x, &steps, true, opts)?;
            worst_h = worst_h.max(res.h_factor);
            out.push((k as f64, res.v_norm.unwrap()));
        }
    }
    Ok((out, worst_h))
}

/// Samples (||tau||_1, ||tau'' - tau||_inf / rho) for the word absorption
/// estimate: left multiply a charted arrow by one word factor exp(t Z) and
/// re-invert in the same chart. Charts without words contribute nothing.
pub fn word_factor_drift_samples(
    atlas: &[CertifiedChart],
    n: usize,
    seed: u64,
    label: &str,
    opts: &AtlasOptions,
) -> Result<Vec<(f64, f64)>, AtlasError> {
    let model = &atlas[0].chart.model;
    let mut out = Vec::new();
    for cc in atlas.iter().filter(|c| !c.chart.word.is_empty()) {
        let chart = &cc.chart;
        let mut rng = stream(seed, &format!("{}/{}/{}", label, model.describe(), chart.id));
        for _ in 0..n {
            let (x, mu, tau) = super::certify::draw_sample(&mut rng, chart, cc.cert.r, cc.cert.m_rate);
            let a = chart.forward(&x, &mu, &tau, opts)?;
            let y = model.target(&a);
            let (sec, t) = &chart.word[0];
            let ext = groupoid_exp_field(model, &y, sec, *t, &opts.flow)?;
            let product = model.compose(&Arrow { source: y, g: ext.g }, &a)?;
            let inv = chart.invert(&product, Some((&mu, &tau)), opts)?;
            let drift = inv
                .tau
                .iter()
                .zip(&tau)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            out.push((tau.iter().map(|v| v.abs()).sum(), drift / model.rho(&x)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atlas::certify::{certified_atlas, CertifyGrid};
    use crate::models::{Model, ModelId};
    use approx::assert_abs_diff_eq;

    fn opts() -> AtlasOptions {
        AtlasOptions::default()
    }

    fn atlas(id: ModelId) -> Vec<CertifiedChart> {
        certified_atlas(&Model::with_defaults(id), &CertifyGrid::fast(), &opts()).unwrap()
    }

    #[test]
    fn single_step_chains_reproduce_the_chart() {
        let atlas = atlas(ModelId::StereoSphere);
        let x = atlas[0].chart.model.point_at_dist(0.03, 0.7);
        let steps = [ChainStep { chart: 0, mu: vec![], tau: vec![0.5, -0.2] }];
        let res = chain_compose(&atlas, &x, &steps, true, &opts()).unwrap();
        assert_eq!(res.final_chart, 0);
        assert_abs_diff_eq!(res.tau[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(res.tau[1], -0.2, epsilon = 1e-8);
        // One charted factor has no chain correction beyond the chart's own
        // base dependence, which w absorbs; V stays small but nonzero.
        assert!(res.v_norm.unwrap() < 0.1);
        assert_eq!(res.rho_trace.len(), 2);
    }

    #[test]
    fn circle_chains_continue_the_flow() {
        let atlas = atlas(ModelId::ParabolicCircle);
        let chart = &atlas[0].chart;
        let model = &chart.model;
        let x = model.point_at_dist(0.02, 0.0);
        let steps = [
            ChainStep { chart: 0, mu: vec![], tau: vec![0.7] },
            ChainStep { chart: 1, mu: vec![], tau: vec![-0.3] },
        ];
        let res = chain_compose(&atlas, &x, &steps, false, &opts()).unwrap();
        // Same field, so the concatenated flow is one flow of the total time.
        let direct = chart.forward(&x, &[], &[0.4], &opts()).unwrap();
        assert_abs_diff_eq!(res.arrow.g[0], direct.g[0], epsilon = 1e-7);
        assert_abs_diff_eq!(res.tau[0], 0.4, epsilon = 1e-7);
    }

    #[test]
    fn chains_match_direct_composition() {
        let atlas = atlas(ModelId::CylinderProduct);
        let model = &atlas[0].chart.model;
        let x = model.point_at_dist(0.015, 1.2);
        let steps = [
            ChainStep { chart: 1, mu: vec![0.1], tau: vec![0.4, -0.3] },
            ChainStep { chart: 0, mu: vec![-0.2], tau: vec![0.2, 0.5] },
        ];
        let res = chain_compose(&atlas, &x, &steps, false, &opts()).unwrap();
        let a1 = atlas[1].chart.forward(&x, &steps[0].mu, &steps[0].tau, &opts()).unwrap();
        let y1 = model.target(&a1);
        let a2 = atlas[0].chart.forward(&y1, &steps[1].mu, &steps[1].tau, &opts()).unwrap();
        let direct = model.compose(&a2, &a1).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(res.arrow.g[i], direct.g[i], epsilon = 1e-7);
        }
        // The re-expression reproduces the arrow in the final chart.
        let again = atlas[res.final_chart]
            .chart
            .forward(&x, &res.mu, &res.tau, &opts())
            .unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(res.arrow.g[i], again.g[i], epsilon = 1e-7);
        }
    }

    #[test]
    fn tie_break_picks_the_smallest_admissible_chart() {
        let atlas = atlas(ModelId::CylinderProduct);
        let model = &atlas[0].chart.model;
        let x = model.point_at_dist(0.01, 0.4);
        // A mu shift of 0.35 lands on the margin boundary of chart 0
        // (eps 0.4) but inside chart 1 after absorbing the word.
        let steps = [ChainStep { chart: 1, mu: vec![0.02], tau: vec![0.3, 0.2] }];
        let res = chain_compose(&atlas, &x, &steps, false, &opts()).unwrap();
        let within = atlas[res.final_chart].chart.contains(&x, &res.mu, &res.tau, 0.1);
        assert!(within);
        for idx in 0..res.final_chart {
            let inv = atlas[idx].chart.invert(&res.arrow, None, &opts());
            let admissible = match inv {
                Ok(inv) => atlas[idx].chart.contains(&x, &inv.mu, &inv.tau, 0.1),
                Err(_) => false,
            };
            assert!(!admissible, "chart {} should have been picked over {}", idx, res.final_chart);
        }
    }

    #[test]
    fn growth_samples_stay_bounded_for_short_chains() {
        let atlas = atlas(ModelId::CylinderProduct);
        let (samples, worst_h) =
            chain_growth_samples(&atlas, 3, 2, 0.1, 31, "test/growth", &opts()).unwrap();
        assert_eq!(samples.len(), 6);
        assert!(samples.iter().all(|&(_, v)| v.is_finite() && v < 1.0));
        assert!(worst_h >= 1.0 && worst_h < 50.0);
    }

    #[test]
    fn word_drift_is_positive_and_rho_scaled_on_worded_charts() {
        let atlas = atlas(ModelId::CylinderProduct);
        let samples = word_factor_drift_samples(&atlas, 6, 37, "test/word", &opts()).unwrap();
        assert_eq!(samples.len(), 12);
        assert!(samples.iter().all(|&(_, d)| d.is_finite() && d < 10.0));
        assert!(samples.iter().any(|&(_, d)| d > 1e-8));
    }

    #[test]
    fn chains_from_the_stratum_stay_on_it() {
        let atlas = atlas(ModelId::CylinderProduct);
        let x = BasePoint::Cylinder { phi: 1.0, p: [0.0, 0.0, 1.0] };
        let steps = [
            ChainStep { chart: 2, mu: vec![0.1], tau: vec![0.5, -0.5] },
            ChainStep { chart: 1, mu: vec![0.15], tau: vec![-0.2, 0.4] },
        ];
        let res = chain_compose(&atlas, &x, &steps, true, &opts()).unwrap();
        assert!(res.rho_trace.iter().all(|&r| r == 0.0));
        assert_eq!(res.h_factor, 1.0);
        // The drift coefficients differ across azimuths, so V does not
        // vanish on the stratum; it only stays bounded.
        assert!(res.v_norm.unwrap() < 0.5);
    }
}
