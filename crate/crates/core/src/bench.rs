//! Replicated benchmark: Monte-Carlo truth, MISE per estimator and paired
//! signed-rank tests against the debiased estimator.
//!
//! Replicate `r` simulates from the `("replicate", r)` stream of the run
//! seed; the truth pools `truth_reps` cohorts from the `("truth", r)`
//! streams. Replicates run on a rayon pool and are gathered in index order,
//! so results do not depend on the number of threads.

use std::fmt::Write as _;
use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::additive::{fit, fit_debiased_with, CoefficientPaths, Correction, EstimatorKind, GramAccumulator};
use crate::error::{Error, Result};
use crate::panel::{CovariateSource, PanelDataset, TimeGrid};
use crate::sim::{cohort_stream, CohortSimulator, SimParams};
use crate::stats::{wilcoxon_signed_rank, WilcoxonResult};
use crate::var::{error_covariance, error_covariance_from, fit_var, forecast_panel, ErrorCovariance};

/// Reference ATT path `d^MC(t_k)`; `None` where no treated person-time was
/// pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthCurve {
    pub grid: TimeGrid,
    pub values: Vec<Option<f64>>,
    pub reps: usize,
    pub seed: u64,
}

/// Pools `reps` cohorts from the `("truth", r)` streams of `seed` and fits
/// the oracle estimator on the pooled person-time.
pub fn monte_carlo_truth(params: &SimParams, reps: usize, seed: u64) -> Result<TruthCurve> {
    if reps == 0 {
        return Err(Error::InvalidParameter("truth needs at least one replicate".into()));
    }
    let sim = CohortSimulator::new(params.clone())?;
    let parts: Vec<GramAccumulator> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let panel = sim.simulate_with(&mut cohort_stream(seed, "truth", r as u64))?;
            let mut acc = GramAccumulator::new(&panel);
            acc.add_panel(&panel, CovariateSource::TrueCounterfactual, None)?;
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut parts = parts.into_iter();
    let mut pooled = parts.next().expect("reps >= 1");
    for part in parts {
        pooled.merge(&part)?;
    }
    let paths = pooled.solve(EstimatorKind::Oracle, None)?;
    let mut values = paths.att();
    values.resize(params.grid().intervals(), None);
    Ok(TruthCurve {
        grid: paths.grid,
        values,
        reps,
        seed,
    })
}

/// `Σ_k (curve_k − truth_k)² Δ_k`.
pub fn integrated_squared_error(curve: &[f64], truth: &[f64], grid: &TimeGrid) -> Result<f64> {
    if curve.len() != grid.intervals() || truth.len() != grid.intervals() {
        return Err(Error::GridMismatch(format!(
            "curve has {} and truth {} values on a grid of {} intervals",
            curve.len(),
            truth.len(),
            grid.intervals()
        )));
    }
    Ok(curve
        .iter()
        .zip(truth)
        .zip(grid.widths())
        .map(|((c, t), w)| (c - t) * (c - t) * w)
        .sum())
}

/// MISE of an ATT path against the truth. Intervals where the truth is
/// undefined are skipped; an estimate missing where the truth exists is an
/// error.
pub fn mise(curve: &[Option<f64>], truth: &TruthCurve, grid: &TimeGrid) -> Result<f64> {
    if *grid != truth.grid {
        return Err(Error::GridMismatch("estimate and truth use different grids".into()));
    }
    if curve.len() > grid.intervals() {
        return Err(Error::GridMismatch(format!(
            "curve has {} values for {} intervals",
            curve.len(),
            grid.intervals()
        )));
    }
    let mut total = 0.0;
    for (k, t) in truth.values.iter().enumerate() {
        let Some(t) = t else { continue };
        let c = curve.get(k).copied().flatten().ok_or(Error::MissingAtt(k))?;
        total += (c - t) * (c - t) * grid.width(k);
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct BenchmarkConfig {
    pub scenario: String,
    pub params: SimParams,
    pub reps: usize,
    pub truth_reps: usize,
    pub seed: u64,
    pub correction: Correction,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl BenchmarkConfig {
    pub fn new(scenario: impl Into<String>, params: SimParams, reps: usize) -> Self {
        let seed = params.seed;
        Self {
            scenario: scenario.into(),
            params,
            reps,
            truth_reps: 100,
            seed,
            correction: Correction::default(),
            jobs: None,
        }
    }
}

/// Outcome of one estimator on one replicate.
#[derive(Debug, Clone, PartialEq)]
pub enum ReplicateOutcome {
    Mise { value: f64, fallback_intervals: usize },
    Failed(String),
}

impl ReplicateOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            ReplicateOutcome::Mise { value, .. } => Some(*value),
            ReplicateOutcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    pub fallback_intervals: usize,
}

/// Debiased against `other`, over replicates where both succeeded.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub other: EstimatorKind,
    pub pairs: usize,
    pub test: WilcoxonResult,
}

#[derive(Debug, Clone)]
pub struct BenchmarkResult {
    pub scenario: String,
    pub sigma: Option<f64>,
    pub reps: usize,
    pub seed: u64,
    pub truth: TruthCurve,
    pub estimators: Vec<EstimatorKind>,
    /// `outcomes[r][e]` for replicate `r` and `estimators[e]`.
    pub outcomes: Vec<Vec<ReplicateOutcome>>,
    pub summaries: Vec<EstimatorSummary>,
    pub comparisons: Vec<Comparison>,
    pub failed_replicates: usize,
    pub runtime: Duration,
}

impl BenchmarkResult {
    pub fn column(&self, estimator: EstimatorKind) -> Option<Vec<Option<f64>>> {
        let e = self.estimators.iter().position(|k| *k == estimator)?;
        Some(self.outcomes.iter().map(|row| row[e].value()).collect())
    }

    pub fn summary(&self, estimator: EstimatorKind) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }

    pub fn comparison(&self, other: EstimatorKind) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.other == other)
    }
}

/// Fits all five estimators on one panel and scores them.
pub fn score_replicate(
    panel: &PanelDataset,
    truth: &TruthCurve,
    true_errors: &ErrorCovariance,
    correction: Correction,
) -> Vec<ReplicateOutcome> {
    let grid = panel.grid().clone();
    let score = |paths: Result<CoefficientPaths>| match paths
        .and_then(|p| Ok((mise(&p.att(), truth, &grid)?, p.fallback.iter().filter(|f| **f).count())))
    {
        Ok((value, fallback_intervals)) => ReplicateOutcome::Mise {
            value,
            fallback_intervals,
        },
        Err(e) => ReplicateOutcome::Failed(e.to_string()),
    };
    let oracle = score(fit(panel, CovariateSource::TrueCounterfactual));
    let naive = score(fit(panel, CovariateSource::Observed));
    let forecast = fit_var(panel).and_then(|model| {
        let forecasts = forecast_panel(&model, panel)?;
        Ok((model, forecasts))
    });
    let (uncorrected, debiased, debiased_true) = match forecast {
        Ok((model, forecasts)) => {
            let source = CovariateSource::ForecastCounterfactual(&forecasts);
            let fitted_errors = error_covariance(&model, grid.intervals());
            (
                score(fit(panel, source)),
                score(fit_debiased_with(panel, &forecasts, &fitted_errors, correction, EstimatorKind::Debiased)),
                score(fit_debiased_with(panel, &forecasts, true_errors, correction, EstimatorKind::DebiasedTrue)),
            )
        }
        Err(e) => {
            let failed = ReplicateOutcome::Failed(e.to_string());
            (failed.clone(), failed.clone(), failed)
        }
    };
    // Order matches EstimatorKind::FITTED.
    vec![oracle, naive, uncorrected, debiased, debiased_true]
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

fn run_in_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs the full protocol for one scenario.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkResult> {
    if config.reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    let start = Instant::now();
    run_in_pool(config.jobs, || run_benchmark_inner(config, start))?
}

fn run_benchmark_inner(config: &BenchmarkConfig, start: Instant) -> Result<BenchmarkResult> {
    let params = &config.params;
    let sim = CohortSimulator::new(params.clone())?;
    let truth = monte_carlo_truth(params, config.truth_reps, config.seed)?;
    let true_errors = error_covariance_from(&params.transition(), &params.sigma, params.horizon);

    let outcomes: Vec<Vec<ReplicateOutcome>> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let panel = sim.simulate_with(&mut cohort_stream(config.seed, "replicate", r as u64))?;
            Ok(score_replicate(&panel, &truth, &true_errors, config.correction))
        })
        .collect::<Result<_>>()?;

    let failed_replicates = outcomes
        .iter()
        .filter(|row| row.iter().any(|o| matches!(o, ReplicateOutcome::Failed(_))))
        .count();
    if failed_replicates * 20 > config.reps {
        return Err(Error::TooManyFailures {
            failed: failed_replicates,
            reps: config.reps,
        });
    }

    let estimators = EstimatorKind::FITTED.to_vec();
    let column = |e: usize| -> Vec<Option<f64>> { outcomes.iter().map(|row| row[e].value()).collect() };
    let summaries = estimators
        .iter()
        .enumerate()
        .map(|(e, &estimator)| {
            let values: Vec<f64> = column(e).into_iter().flatten().collect();
            let (mean, sd) = mean_sd(&values);
            let fallback_intervals = outcomes
                .iter()
                .map(|row| match row[e] {
                    ReplicateOutcome::Mise { fallback_intervals, .. } => fallback_intervals,
                    ReplicateOutcome::Failed(_) => 0,
                })
                .sum();
            EstimatorSummary {
                estimator,
                mean,
                sd,
                n: values.len(),
                fallback_intervals,
            }
        })
        .collect();

    let reference = estimators
        .iter()
        .position(|k| *k == EstimatorKind::Debiased)
        .expect("debiased is fitted");
    let debiased = column(reference);
    let comparisons = estimators
        .iter()
        .enumerate()
        .filter(|(e, _)| *e != reference)
        .map(|(e, &other)| {
            let (a, b): (Vec<f64>, Vec<f64>) = debiased
                .iter()
                .zip(column(e))
                .filter_map(|(a, b)| Some(((*a)?, b?)))
                .unzip();
            Ok(Comparison {
                other,
                pairs: a.len(),
                test: wilcoxon_signed_rank(&a, &b)?,
            })
        })
        .collect::<Result<_>>()?;

    Ok(BenchmarkResult {
        scenario: config.scenario.clone(),
        sigma: params.sigma_level(),
        reps: config.reps,
        seed: config.seed,
        truth,
        estimators,
        outcomes,
        summaries,
        comparisons,
        failed_replicates,
        runtime: start.elapsed(),
    })
}

fn sigma_cell(sigma: Option<f64>) -> String {
    sigma.map_or_else(|| "matrix".to_string(), |s| s.to_string())
}

/// Per-replicate MISE: `scenario,sigma,replicate,estimator,mise`
/// (`NA` for failures).
pub fn write_replicates_csv(results: &[BenchmarkResult], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "scenario,sigma,replicate,estimator,mise")?;
    for res in results {
        for (r, row) in res.outcomes.iter().enumerate() {
            for (k, outcome) in res.estimators.iter().zip(row) {
                let value = outcome.value().map_or_else(|| "NA".to_string(), |v| v.to_string());
                writeln!(w, "{},{},{r},{k},{value}", res.scenario, sigma_cell(res.sigma))?;
            }
        }
    }
    Ok(())
}

/// One line of the summary report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub sigma: String,
    pub estimator: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    /// Paired test against the debiased estimator; empty for itself.
    pub p_vs_debiased: Option<f64>,
    pub fallback_intervals: usize,
}

impl BenchmarkResult {
    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.summaries
            .iter()
            .map(|s| SummaryRow {
                scenario: self.scenario.clone(),
                sigma: sigma_cell(self.sigma),
                estimator: s.estimator.to_string(),
                mean: s.mean,
                sd: s.sd,
                n: s.n,
                p_vs_debiased: self.comparison(s.estimator).map(|c| c.test.p_value),
                fallback_intervals: s.fallback_intervals,
            })
            .collect()
    }
}

/// Aggregates: `scenario,sigma,estimator,mean,sd,n,p_vs_debiased,fallback_intervals`.
pub fn write_summary_csv(rows: &[SummaryRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row)?;
    }
    out.flush().map_err(|e| Error::io("summary csv", e))?;
    Ok(())
}

pub fn read_summary_csv(r: impl std::io::Read) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_reader(r);
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Text table: one line per scenario and noise level, cells `mean ± sd`,
/// with `*` where the paired test against the debiased column has
/// p < 0.05.
pub fn format_table(rows: &[SummaryRow], estimators: &[EstimatorKind]) -> String {
    let mut groups: Vec<(&str, &str)> = Vec::new();
    for row in rows {
        let key = (row.scenario.as_str(), row.sigma.as_str());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    let mut table = vec![{
        let mut header = vec!["scenario".to_string(), "sigma".to_string()];
        header.extend(estimators.iter().map(|e| e.to_string()));
        header
    }];
    for (scenario, sigma) in groups {
        let mut line = vec![scenario.to_string(), sigma.to_string()];
        for e in estimators {
            let label = e.to_string();
            let cell = rows
                .iter()
                .find(|r| r.scenario == scenario && r.sigma == sigma && r.estimator == label)
                .map_or_else(
                    || "-".to_string(),
                    |r| {
                        let star = if r.p_vs_debiased.is_some_and(|p| p < 0.05) { "*" } else { "" };
                        format!("{:.3}{star} ± {:.3}", r.mean, r.sd)
                    },
                );
            line.push(cell);
        }
        table.push(line);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}", w = *w) } else { format!("{cell:>w$}", w = *w) })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
    out
}
