#![allow(dead_code)]

use debiased_att::panel::{fill_regressor, CovariateSource};
use debiased_att::rng::StreamRng;
use debiased_att::var::ForecastSet;
use debiased_att::{simulate_cohort, CoefficientPaths, PanelDataset, SimParams, SubjectRecord, TimeGrid};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

pub fn one_cov(n: usize, sigma: f64, seed: u64) -> SimParams {
    let mut p = SimParams::preset("paper-1cov").unwrap();
    p.n = n;
    p.seed = seed;
    p.set("sigma", &sigma.to_string()).unwrap();
    p
}

pub fn simulate(n: usize, sigma: f64, seed: u64) -> PanelDataset {
    simulate_cohort(&one_cov(n, sigma, seed)).unwrap()
}

/// Random coefficient rows for every interval of the panel.
pub fn random_paths(panel: &PanelDataset, rng: &mut StreamRng, scale: f64) -> CoefficientPaths {
    let p = panel.regressor_len();
    let values = (0..panel.grid().intervals())
        .map(|_| (0..p).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect())
        .collect();
    CoefficientPaths::from_values(panel, values).unwrap()
}

/// Regressor of subject `s` at `k` as a vector.
pub fn regressor(s: &SubjectRecord, k: usize, source: CovariateSource<'_>, p: usize) -> Vec<f64> {
    let mut w = vec![0.0; p];
    fill_regressor(s, k, source, &mut w).unwrap();
    w
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Parts of `r_n(A) − R̃_n(A)` computed term by term with `ξ = W̃ − W`:
/// `(quadratic ε-form, full difference including cross terms)`.
pub fn decomposition_terms(
    panel: &PanelDataset,
    paths: &CoefficientPaths,
    forecasts: &ForecastSet,
) -> (f64, f64) {
    let p = panel.regressor_len();
    let n = panel.len() as f64;
    let (mut quad, mut full) = (0.0, 0.0);
    for s in panel.subjects() {
        for k in 0..s.follow_up_end {
            let a = &paths.values[k];
            let w = regressor(s, k, CovariateSource::TrueCounterfactual, p);
            let wt = regressor(s, k, CovariateSource::ForecastCounterfactual(forecasts), p);
            let xi: Vec<f64> = wt.iter().zip(&w).map(|(x, y)| x - y).collect();
            let a_xi = dot(a, &xi);
            let dt = panel.grid().width(k);
            quad += a_xi * a_xi * dt;
            full += (-2.0 * dot(a, &wt) * a_xi + a_xi * a_xi) * dt + 2.0 * a_xi * s.events(k) as f64;
        }
    }
    (quad / n, full / n)
}

/// Fixed design: `n` subjects, `k_max` unit intervals, one baseline and one
/// time-varying covariate in `[0, 1]`, half of the subjects treated from
/// `k = 2`. Event counts are zero.
pub fn fixed_design(n: usize, k_max: usize, rng: &mut StreamRng) -> PanelDataset {
    let subjects = (0..n)
        .map(|i| {
            let z = rng.random::<f64>();
            let x = DMatrix::from_fn(k_max + 1, 1, |_, _| rng.random::<f64>());
            SubjectRecord {
                id: i as u64 + 1,
                baseline: vec![z],
                covariates: x,
                treatment_start: (i % 2 == 0).then_some(2),
                event_counts: vec![0; k_max],
                follow_up_end: k_max,
                counterfactuals: None,
            }
        })
        .collect();
    PanelDataset::new(TimeGrid::unit(k_max), 1, 1, subjects).unwrap()
}

/// Redraws event counts as Poisson with mean `A*(t_k)ᵀ W Δ_k`.
pub fn redraw_events(panel: &PanelDataset, a_star: &CoefficientPaths, rng: &mut StreamRng) -> PanelDataset {
    let p = panel.regressor_len();
    let subjects = panel
        .subjects()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for k in 0..s.follow_up_end {
                let w = regressor(&s, k, CovariateSource::Observed, p);
                let mu = dot(&a_star.values[k], &w) * panel.grid().width(k);
                s.event_counts[k] = if mu > 0.0 {
                    Poisson::new(mu).unwrap().sample(rng) as u64
                } else {
                    0
                };
            }
            s
        })
        .collect();
    PanelDataset::new(panel.grid().clone(), panel.d_z(), panel.d_x(), subjects).unwrap()
}

/// `(1/n) Σ_i Σ_k (A − B)ᵀ W Wᵀ (A − B) Δ_k`.
pub fn weighted_norm(panel: &PanelDataset, a: &CoefficientPaths, b: &CoefficientPaths) -> f64 {
    let p = panel.regressor_len();
    let mut total = 0.0;
    for s in panel.subjects() {
        for k in 0..s.follow_up_end {
            let w = regressor(s, k, CovariateSource::Observed, p);
            let diff: Vec<f64> = a.values[k].iter().zip(&b.values[k]).map(|(x, y)| x - y).collect();
            let v = dot(&diff, &w);
            total += v * v * panel.grid().width(k);
        }
    }
    total / panel.len() as f64
}
