//! Additive intensity regression with piecewise-constant coefficients.
//!
//! With `A(t) = A(t_k)` on each grid interval the least-squares risk
//!
//! ```text
//! r_n(A) = (1/n) Σ_i Σ_{k<τ_i} [ A(t_k)ᵀ W_i W_iᵀ A(t_k) Δ_k − 2 A(t_k)ᵀ W_i ΔN_i(k) ]
//! ```
//!
//! separates into one quadratic per interval, minimised by
//! `(G_k Δ_k) A(t_k) = m_k` with `G_k = Σ_i W_i W_iᵀ` and `m_k = Σ_i W_i ΔN_i(k)`
//! over the risk set. The debiased fit minimises `R̃_n(A) + bias(A)` where
//! `bias(A) = (1/n) Σ_i Σ_{k ≥ s_i} α_X(t_k)ᵀ Σ̂(l) α_X(t_k) Δ_k`, which
//! replaces `G_k` by `Σ_i [W̃_i W̃_iᵀ + pad_i(k)]`; the pad carries the
//! forecast error covariance `Σ̂(l)` in the covariate block. The opposite
//! sign, `W̃ W̃ᵀ − pad`, is available as [`PadSign::Subtract`]; it can make
//! the Gram matrix indefinite, which [`FallbackPolicy`] handles.
//!
//! Regressor columns that are identically zero on an interval (for instance
//! the treatment column before anyone is treated) are dropped from that
//! interval's solve and reported as absent.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::{fill_regressor, CovariateSource, PanelDataset, SubjectRecord, TimeGrid};
use crate::var::{error_covariance, forecast_panel, ErrorCovariance, ForecastSet, VarModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    /// Observed covariates after treatment.
    Naive,
    /// Simulated true counterfactuals.
    Oracle,
    /// Forecast counterfactuals, no correction.
    Uncorrected,
    /// Forecast counterfactuals, correction from the fitted VAR.
    Debiased,
    /// Forecast counterfactuals, correction from known generator parameters.
    DebiasedTrue,
    /// Arbitrary coefficient paths (not a fit).
    Candidate,
}

impl EstimatorKind {
    pub const FITTED: [EstimatorKind; 5] = [
        EstimatorKind::Oracle,
        EstimatorKind::Naive,
        EstimatorKind::Uncorrected,
        EstimatorKind::Debiased,
        EstimatorKind::DebiasedTrue,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Naive => "naive",
            EstimatorKind::Oracle => "oracle",
            EstimatorKind::Uncorrected => "uncorrected",
            EstimatorKind::Debiased => "debiased",
            EstimatorKind::DebiasedTrue => "debiased-true",
            EstimatorKind::Candidate => "candidate",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "naive" => EstimatorKind::Naive,
            "oracle" => EstimatorKind::Oracle,
            "uncorrected" => EstimatorKind::Uncorrected,
            "debiased" => EstimatorKind::Debiased,
            "debiased-true" => EstimatorKind::DebiasedTrue,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown estimator `{other}` (naive, oracle, uncorrected, debiased, debiased-true)"
                )))
            }
        })
    }
}

/// What to do when a corrected Gram matrix is not positive definite.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum FallbackPolicy {
    /// Raise eigenvalues to `1e-8 · trace / p`.
    #[default]
    PsdFloor,
    /// Add `λ I` to the system.
    Ridge(f64),
    Fail,
}

impl FromStr for FallbackPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "psd-floor" => Ok(FallbackPolicy::PsdFloor),
            "fail" => Ok(FallbackPolicy::Fail),
            other => {
                let lambda = other
                    .strip_prefix("ridge:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .filter(|v| *v > 0.0 && v.is_finite())
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!(
                            "fallback must be psd-floor, ridge:<λ> or fail, got `{other}`"
                        ))
                    })?;
                Ok(FallbackPolicy::Ridge(lambda))
            }
        }
    }
}

impl fmt::Display for FallbackPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FallbackPolicy::PsdFloor => f.write_str("psd-floor"),
            FallbackPolicy::Ridge(l) => write!(f, "ridge:{l}"),
            FallbackPolicy::Fail => f.write_str("fail"),
        }
    }
}

/// How the bias pads enter the corrected Gram matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PadSign {
    /// `W̃ W̃ᵀ + pad`: minimiser of `R̃_n + bias`.
    #[default]
    Add,
    /// `W̃ W̃ᵀ − pad`: minimiser of `R̃_n − bias`.
    Subtract,
}

impl PadSign {
    fn factor(self) -> f64 {
        match self {
            PadSign::Add => 1.0,
            PadSign::Subtract => -1.0,
        }
    }
}

impl FromStr for PadSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "add" => Ok(PadSign::Add),
            "subtract" => Ok(PadSign::Subtract),
            other => Err(Error::InvalidParameter(format!(
                "pad sign must be add or subtract, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for PadSign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PadSign::Add => "add",
            PadSign::Subtract => "subtract",
        })
    }
}

/// Settings of the debiased solve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Correction {
    pub sign: PadSign,
    pub fallback: FallbackPolicy,
}

/// Piecewise-constant coefficient paths `A(t_k)`, one row per interval.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPaths {
    pub estimator: EstimatorKind,
    pub grid: TimeGrid,
    pub names: Vec<String>,
    pub x_block_offset: usize,
    pub d_x: usize,
    pub values: Vec<Vec<f64>>,
    /// Coefficient not identified on the interval (zero column).
    pub absent: Vec<Vec<bool>>,
    pub risk_set: Vec<usize>,
    /// Interval needed the indefinite-Gram fallback.
    pub fallback: Vec<bool>,
}

impl CoefficientPaths {
    /// Wraps arbitrary coefficient values laid out like the panel's
    /// regressors.
    pub fn from_values(panel: &PanelDataset, values: Vec<Vec<f64>>) -> Result<Self> {
        let p = panel.regressor_len();
        if values.iter().any(|row| row.len() != p) {
            return Err(Error::DimensionMismatch(format!("coefficient rows must have {p} entries")));
        }
        if values.len() > panel.grid().intervals() {
            return Err(Error::DimensionMismatch("more coefficient rows than intervals".into()));
        }
        let len = values.len();
        Ok(Self {
            estimator: EstimatorKind::Candidate,
            grid: panel.grid().clone(),
            names: panel.regressor_names(),
            x_block_offset: panel.x_block_offset(),
            d_x: panel.d_x(),
            absent: vec![vec![false; p]; len],
            risk_set: vec![0; len],
            fallback: vec![false; len],
            values,
        })
    }

    pub fn intervals(&self) -> usize {
        self.values.len()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// `A_j(t_k)`, `None` when absent.
    pub fn coefficient(&self, k: usize, j: usize) -> Option<f64> {
        (!self.absent[k][j]).then(|| self.values[k][j])
    }

    pub fn treatment_index(&self) -> usize {
        self.dim() - 1
    }

    /// Treatment coefficient path (the ATT estimate); `None` on intervals
    /// without treated person-time.
    pub fn att(&self) -> Vec<Option<f64>> {
        let j = self.treatment_index();
        (0..self.intervals()).map(|k| self.coefficient(k, j)).collect()
    }

    pub fn has_att(&self) -> bool {
        self.att().iter().any(Option::is_some)
    }

    /// Covariate block `α_X(t_k)`.
    pub fn alpha_x(&self, k: usize) -> &[f64] {
        &self.values[k][self.x_block_offset..self.x_block_offset + self.d_x]
    }

    /// Δ-weighted time average of each coefficient over the intervals where
    /// it is present; recovers a time-constant reading of e.g. `α_Z`.
    pub fn time_averages(&self) -> Vec<Option<f64>> {
        (0..self.dim())
            .map(|j| {
                let (mut num, mut den) = (0.0, 0.0);
                for k in 0..self.intervals() {
                    if let Some(v) = self.coefficient(k, j) {
                        num += v * self.grid.width(k);
                        den += self.grid.width(k);
                    }
                }
                (den > 0.0).then(|| num / den)
            })
            .collect()
    }

    /// Writes `t_index,t,estimator,coef_name,value,cumulative,flag_fallback`.
    /// `cumulative` is the integral up to the end of the interval; absent
    /// coefficients are written as `NA` and contribute zero.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t_index,t,estimator,coef_name,value,cumulative,flag_fallback")?;
        let cumulative = cumulative_effects(self);
        for k in 0..self.intervals() {
            for (j, name) in self.names.iter().enumerate() {
                let value = match self.coefficient(k, j) {
                    Some(v) => v.to_string(),
                    None => "NA".into(),
                };
                writeln!(
                    w,
                    "{k},{},{},{name},{value},{},{}",
                    self.grid.time(k),
                    self.estimator,
                    cumulative.rows[k + 1][j],
                    u8::from(self.fallback[k])
                )?;
            }
        }
        Ok(())
    }
}

/// Cumulative curves `B(t_k) = Σ_{j<k} A(t_j) Δ_j`, rows `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulativeTable {
    pub estimator: EstimatorKind,
    pub grid: TimeGrid,
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CumulativeTable {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t_index,t,estimator,coef_name,cumulative")?;
        for (k, row) in self.rows.iter().enumerate() {
            for (name, v) in self.names.iter().zip(row) {
                writeln!(w, "{k},{},{},{name},{v}", self.grid.time(k), self.estimator)?;
            }
        }
        Ok(())
    }
}

pub fn cumulative_effects(paths: &CoefficientPaths) -> CumulativeTable {
    let p = paths.dim();
    let mut rows = Vec::with_capacity(paths.intervals() + 1);
    let mut acc = vec![0.0; p];
    rows.push(acc.clone());
    for k in 0..paths.intervals() {
        let width = paths.grid.width(k);
        for (j, a) in acc.iter_mut().enumerate() {
            if let Some(v) = paths.coefficient(k, j) {
                *a += v * width;
            }
        }
        rows.push(acc.clone());
    }
    CumulativeTable {
        estimator: paths.estimator,
        grid: paths.grid.clone(),
        names: paths.names.clone(),
        rows,
    }
}

/// Forecast error second moment placed in the covariate block of a
/// `p × p` zero matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasPad {
    pub matrix: DMatrix<f64>,
}

impl BiasPad {
    /// Pad for subject `i` at interval `k`, using `Σ̂(k − s_i + 1)`; `None`
    /// before treatment start.
    pub fn for_subject(
        subject: &SubjectRecord,
        k: usize,
        errors: &ErrorCovariance,
        p: usize,
        x_block_offset: usize,
    ) -> Result<Option<Self>> {
        let Some(s) = subject.treatment_start.filter(|&s| k >= s) else {
            return Ok(None);
        };
        let l = k - s + 1;
        let cov = errors.get(l).ok_or_else(|| {
            Error::DimensionMismatch(format!(
                "error covariance available up to horizon {}, needed {l}",
                errors.max_horizon()
            ))
        })?;
        let mut matrix = DMatrix::zeros(p, p);
        matrix
            .view_mut((x_block_offset, x_block_offset), cov.shape())
            .copy_from(cov);
        Ok(Some(Self { matrix }))
    }
}

/// Per-interval sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSystem {
    pub gram: DMatrix<f64>,
    pub moment: DVector<f64>,
    /// Sum of bias pads over the risk set.
    pub pad: DMatrix<f64>,
    pub risk_set: usize,
}

/// Accumulates Gram matrices and moments interval by interval. Adding
/// several panels pools their subjects.
#[derive(Debug, Clone)]
pub struct GramAccumulator {
    grid: TimeGrid,
    names: Vec<String>,
    x_block_offset: usize,
    d_x: usize,
    systems: Vec<IntervalSystem>,
}

impl GramAccumulator {
    pub fn new(panel: &PanelDataset) -> Self {
        let p = panel.regressor_len();
        let k = panel.grid().intervals();
        Self {
            grid: panel.grid().clone(),
            names: panel.regressor_names(),
            x_block_offset: panel.x_block_offset(),
            d_x: panel.d_x(),
            systems: vec![
                IntervalSystem {
                    gram: DMatrix::zeros(p, p),
                    moment: DVector::zeros(p),
                    pad: DMatrix::zeros(p, p),
                    risk_set: 0,
                };
                k
            ],
        }
    }

    pub fn systems(&self) -> &[IntervalSystem] {
        &self.systems
    }

    fn check_shape(&self, panel: &PanelDataset) -> Result<()> {
        if panel.grid() != &self.grid || panel.regressor_names() != self.names {
            return Err(Error::DimensionMismatch(
                "panel does not match the accumulator layout".into(),
            ));
        }
        Ok(())
    }

    /// Adds every subject's contribution; with `errors` the bias pads are
    /// accumulated too.
    pub fn add_panel(
        &mut self,
        panel: &PanelDataset,
        source: CovariateSource<'_>,
        errors: Option<&ErrorCovariance>,
    ) -> Result<()> {
        self.check_shape(panel)?;
        let p = self.names.len();
        let off = self.x_block_offset;
        let mut w = vec![0.0; p];
        for subject in panel.subjects() {
            for k in 0..subject.follow_up_end {
                fill_regressor(subject, k, source, &mut w)?;
                let sys = &mut self.systems[k];
                let dn = subject.events(k) as f64;
                for a in 0..p {
                    if w[a] == 0.0 {
                        continue;
                    }
                    sys.moment[a] += w[a] * dn;
                    for b in 0..p {
                        sys.gram[(a, b)] += w[a] * w[b];
                    }
                }
                sys.risk_set += 1;
                if let (Some(errors), Some(s)) = (errors, subject.treatment_start) {
                    if k >= s {
                        let l = k - s + 1;
                        let cov = errors.get(l).ok_or_else(|| {
                            Error::DimensionMismatch(format!(
                                "error covariance available up to horizon {}, needed {l}",
                                errors.max_horizon()
                            ))
                        })?;
                        let mut block = sys.pad.view_mut((off, off), cov.shape());
                        block += cov;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &GramAccumulator) -> Result<()> {
        if other.grid != self.grid || other.names != self.names {
            return Err(Error::DimensionMismatch("cannot merge accumulators of different layout".into()));
        }
        for (a, b) in self.systems.iter_mut().zip(&other.systems) {
            a.gram += &b.gram;
            a.moment += &b.moment;
            a.pad += &b.pad;
            a.risk_set += b.risk_set;
        }
        Ok(())
    }

    /// Solves every interval with a non-empty risk set. With a correction
    /// the pads enter the Gram matrices with its sign and its fallback
    /// governs indefinite results; otherwise a singular interval is an
    /// error.
    pub fn solve(
        &self,
        estimator: EstimatorKind,
        correction: Option<Correction>,
    ) -> Result<CoefficientPaths> {
        let p = self.names.len();
        let fitted = self
            .systems
            .iter()
            .rposition(|s| s.risk_set > 0)
            .map_or(0, |k| k + 1);
        let mut values = Vec::with_capacity(fitted);
        let mut absent = Vec::with_capacity(fitted);
        let mut fallback = Vec::with_capacity(fitted);
        for (k, sys) in self.systems[..fitted].iter().enumerate() {
            let active: Vec<usize> = (0..p).filter(|&j| sys.gram[(j, j)] > 0.0).collect();
            let mut row = vec![0.0; p];
            let mut missing = vec![true; p];
            let mut flagged = false;
            if !active.is_empty() {
                let gram = sys.gram.select_rows(&active).select_columns(&active);
                let moment = sys.moment.select_rows(&active);
                let width = self.grid.width(k);
                let solution = if let Some(c) = correction {
                    let pad = sys.pad.select_rows(&active).select_columns(&active);
                    let adjusted = gram + pad * c.sign.factor();
                    let (sol, used) = solve_corrected(&adjusted, &moment, width, c.fallback)
                        .map_err(|e| interval_error(e, k, sys.risk_set))?;
                    flagged = used;
                    sol
                } else {
                    solve_interval(&gram, &moment, width, 0.0)
                        .map_err(|e| interval_error(e, k, sys.risk_set))?
                };
                for (i, &j) in active.iter().enumerate() {
                    row[j] = solution[i];
                    missing[j] = false;
                }
            }
            values.push(row);
            absent.push(missing);
            fallback.push(flagged);
        }
        Ok(CoefficientPaths {
            estimator,
            grid: self.grid.clone(),
            names: self.names.clone(),
            x_block_offset: self.x_block_offset,
            d_x: self.d_x,
            values,
            absent,
            risk_set: self.systems[..fitted].iter().map(|s| s.risk_set).collect(),
            fallback,
        })
    }
}

fn interval_error(err: Error, k: usize, risk_set: usize) -> Error {
    match err {
        Error::SingularSystem(condition) => Error::SingularInterval {
            k,
            risk_set,
            condition,
        },
        other => other,
    }
}

fn condition_estimate(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `(gram·Δ + ridge·I) A = moment`, the minimiser of
/// `Aᵀ gram A Δ − 2 Aᵀ moment` (plus `ridge |A|²`).
pub fn solve_interval(
    gram: &DMatrix<f64>,
    moment: &DVector<f64>,
    delta: f64,
    ridge: f64,
) -> Result<DVector<f64>> {
    let p = gram.nrows();
    if gram.ncols() != p || moment.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "gram is {}x{}, moment has {} entries",
            gram.nrows(),
            gram.ncols(),
            moment.len()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("interval width must be positive, got {delta}")));
    }
    let system = gram * delta + DMatrix::identity(p, p) * ridge;
    let system = (&system + system.transpose()) * 0.5;
    match system.clone().cholesky() {
        Some(chol) => {
            let sol = chol.solve(moment);
            // Reject numerically singular systems that still factor.
            let cond = condition_estimate(&system);
            if !cond.is_finite() || cond > 1e14 {
                return Err(Error::SingularSystem(cond));
            }
            Ok(sol)
        }
        None => Err(Error::SingularSystem(condition_estimate(&system))),
    }
}

/// Solves a corrected system; returns the solution and whether the
/// fallback was applied.
fn solve_corrected(
    corrected: &DMatrix<f64>,
    moment: &DVector<f64>,
    delta: f64,
    policy: FallbackPolicy,
) -> Result<(DVector<f64>, bool)> {
    let p = corrected.nrows();
    let sym = (corrected + corrected.transpose()) * 0.5;
    let floor = 1e-8 * sym.trace().max(0.0) / p as f64;
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    // Positive definite systems are solved as they are; the policy only
    // handles indefinite or numerically singular ones.
    if min > 0.0 {
        match solve_interval(&sym, moment, delta, 0.0) {
            Ok(sol) => return Ok((sol, false)),
            Err(Error::SingularSystem(_)) => {}
            Err(e) => return Err(e),
        }
    }
    match policy {
        FallbackPolicy::Fail => Err(Error::SingularSystem(condition_estimate(&sym))),
        FallbackPolicy::Ridge(lambda) => Ok((solve_interval(&sym, moment, delta, lambda)?, true)),
        FallbackPolicy::PsdFloor => {
            if !(floor > 0.0) {
                return Err(Error::SingularSystem(f64::INFINITY));
            }
            let clamped = eig.eigenvalues.map(|v| v.max(floor));
            let projected =
                &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
            Ok((solve_interval(&projected, moment, delta, 0.0)?, true))
        }
    }
}

/// Least-squares fit with the X block taken from `source`: naive with
/// observed covariates, oracle with true counterfactuals, uncorrected with
/// forecasts.
pub fn fit(panel: &PanelDataset, source: CovariateSource<'_>) -> Result<CoefficientPaths> {
    let estimator = match source {
        CovariateSource::Observed => EstimatorKind::Naive,
        CovariateSource::TrueCounterfactual => EstimatorKind::Oracle,
        CovariateSource::ForecastCounterfactual(_) => EstimatorKind::Uncorrected,
    };
    let mut acc = GramAccumulator::new(panel);
    acc.add_panel(panel, source, None)?;
    acc.solve(estimator, None)
}

/// Debiased fit from given forecasts and forecast error covariances.
pub fn fit_debiased_with(
    panel: &PanelDataset,
    forecasts: &ForecastSet,
    errors: &ErrorCovariance,
    correction: Correction,
    estimator: EstimatorKind,
) -> Result<CoefficientPaths> {
    let mut acc = GramAccumulator::new(panel);
    acc.add_panel(panel, CovariateSource::ForecastCounterfactual(forecasts), Some(errors))?;
    acc.solve(estimator, Some(correction))
}

/// Forecasts counterfactuals with `model` and fits the debiased estimator
/// with `Σ̂(l)` from the same model.
pub fn fit_debiased(
    panel: &PanelDataset,
    model: &VarModel,
    correction: Correction,
) -> Result<CoefficientPaths> {
    let forecasts = forecast_panel(model, panel)?;
    let errors = error_covariance(model, panel.grid().intervals());
    fit_debiased_with(panel, &forecasts, &errors, correction, EstimatorKind::Debiased)
}

fn check_paths(panel: &PanelDataset, paths: &CoefficientPaths) -> Result<()> {
    if paths.dim() != panel.regressor_len() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients have {} entries, regressors {}",
            paths.dim(),
            panel.regressor_len()
        )));
    }
    if paths.intervals() < panel.fitted_intervals() {
        return Err(Error::DimensionMismatch(format!(
            "coefficients cover {} intervals, follow-up needs {}",
            paths.intervals(),
            panel.fitted_intervals()
        )));
    }
    if paths.grid != *panel.grid() {
        return Err(Error::GridMismatch("coefficients and panel use different grids".into()));
    }
    Ok(())
}

fn coefficient_row(paths: &CoefficientPaths, k: usize) -> impl Iterator<Item = f64> + '_ {
    (0..paths.dim()).map(move |j| paths.coefficient(k, j).unwrap_or(0.0))
}

/// Empirical squared risk of `paths` with regressors built from `source`
/// (`r_n` for true counterfactuals, `R̃_n` for forecasts).
pub fn empirical_risk(
    panel: &PanelDataset,
    paths: &CoefficientPaths,
    source: CovariateSource<'_>,
) -> Result<f64> {
    check_paths(panel, paths)?;
    let mut w = vec![0.0; panel.regressor_len()];
    let mut total = 0.0;
    for subject in panel.subjects() {
        for k in 0..subject.follow_up_end {
            fill_regressor(subject, k, source, &mut w)?;
            let fitted: f64 = coefficient_row(paths, k).zip(&w).map(|(a, b)| a * b).sum();
            total += fitted * fitted * panel.grid().width(k) - 2.0 * fitted * subject.events(k) as f64;
        }
    }
    Ok(total / panel.len() as f64)
}

/// `(1/n) Σ_i Σ_{k ≥ s_i} α_X(t_k)ᵀ Σ(l) α_X(t_k) Δ_k`: the expected excess
/// of `R̃_n` over `r_n` when forecast errors have covariance `Σ(l)`.
pub fn bias_term(panel: &PanelDataset, paths: &CoefficientPaths, errors: &ErrorCovariance) -> Result<f64> {
    check_paths(panel, paths)?;
    let off = panel.x_block_offset();
    let d_x = panel.d_x();
    let mut total = 0.0;
    for subject in panel.subjects() {
        let Some(s) = subject.treatment_start else {
            continue;
        };
        for k in s..subject.follow_up_end {
            let cov = errors.get(k - s + 1).ok_or_else(|| {
                Error::DimensionMismatch(format!("no error covariance for horizon {}", k - s + 1))
            })?;
            let alpha = DVector::from_iterator(d_x, (off..off + d_x).map(|j| paths.coefficient(k, j).unwrap_or(0.0)));
            total += (alpha.transpose() * cov * &alpha)[(0, 0)] * panel.grid().width(k);
        }
    }
    Ok(total / panel.len() as f64)
}

/// `R̂_n(A) = R̃_n(A) ± bias(A)`: the loss minimised by the debiased
/// estimator with the same pad sign.
pub fn corrected_risk(
    panel: &PanelDataset,
    paths: &CoefficientPaths,
    forecasts: &ForecastSet,
    errors: &ErrorCovariance,
    sign: PadSign,
) -> Result<f64> {
    Ok(empirical_risk(panel, paths, CovariateSource::ForecastCounterfactual(forecasts))?
        + sign.factor() * bias_term(panel, paths, errors)?)
}
