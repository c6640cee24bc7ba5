//! Longitudinal panel data: subjects observed on a shared time grid.
//!
//! Covariates are piecewise constant on `[t_k, t_{k+1})`, so every integral
//! downstream is a Riemann sum with weights `Δ_k`. Events are stored as
//! per-interval counts, `event_counts[k]` being the number of events in
//! `(t_k, t_{k+1}]`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::var::ForecastSet;

/// Strictly increasing observation times `t_0 < t_1 < … < t_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidPanel(
                "time grid needs at least two points".into(),
            ));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidPanel("time grid has non-finite points".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidPanel(
                "time grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Integer grid `0, 1, …, intervals`.
    pub fn unit(intervals: usize) -> Self {
        assert!(intervals >= 1, "unit grid needs at least one interval");
        Self {
            points: (0..=intervals).map(|k| k as f64).collect(),
        }
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of intervals `K`.
    pub fn intervals(&self) -> usize {
        self.points.len() - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        self.points[k]
    }

    /// Width `Δ_k = t_{k+1} - t_k`.
    pub fn width(&self, k: usize) -> f64 {
        self.points[k + 1] - self.points[k]
    }

    pub fn widths(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.windows(2).map(|w| w[1] - w[0])
    }
}

/// One subject's record.
///
/// `covariates` holds `follow_up_end + 1` rows (grid indices `0..=τ`), one
/// column per time-varying covariate. `event_counts` holds the counts for
/// intervals `0..τ`; any entry beyond that must be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: u64,
    pub baseline: Vec<f64>,
    pub covariates: DMatrix<f64>,
    pub treatment_start: Option<usize>,
    pub event_counts: Vec<u64>,
    pub follow_up_end: usize,
    pub counterfactuals: Option<DMatrix<f64>>,
}

impl SubjectRecord {
    /// `D(t_k)`: treatment is absorbing from `treatment_start` on.
    pub fn treated_at(&self, k: usize) -> bool {
        self.treatment_start.is_some_and(|s| k >= s)
    }

    pub fn is_treated(&self) -> bool {
        self.treatment_start.is_some()
    }

    pub fn events(&self, k: usize) -> u64 {
        self.event_counts.get(k).copied().unwrap_or(0)
    }
}

/// Validated collection of subjects on one grid, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    grid: TimeGrid,
    d_z: usize,
    d_x: usize,
    subjects: Vec<SubjectRecord>,
}

impl PanelDataset {
    /// Checks structural consistency (shapes, grid bounds, unique ids).
    /// Value-level problems such as NaNs are left to [`validate_panel`].
    pub fn new(
        grid: TimeGrid,
        d_z: usize,
        d_x: usize,
        mut subjects: Vec<SubjectRecord>,
    ) -> Result<Self> {
        subjects.sort_by_key(|s| s.id);
        let k_max = grid.intervals();
        for pair in subjects.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::InvalidPanel(format!(
                    "duplicate subject id {}",
                    pair[0].id
                )));
            }
        }
        for s in &subjects {
            let fail = |msg: String| Err(Error::InvalidPanel(format!("subject {}: {msg}", s.id)));
            if s.baseline.len() != d_z {
                return fail(format!("baseline has {} entries, expected {d_z}", s.baseline.len()));
            }
            if s.follow_up_end == 0 || s.follow_up_end > k_max {
                return fail(format!(
                    "follow-up end {} outside 1..={k_max}",
                    s.follow_up_end
                ));
            }
            if s.covariates.nrows() != s.follow_up_end + 1 || s.covariates.ncols() != d_x {
                return fail(format!(
                    "covariates are {}x{}, expected {}x{d_x}",
                    s.covariates.nrows(),
                    s.covariates.ncols(),
                    s.follow_up_end + 1
                ));
            }
            if let Some(x0) = &s.counterfactuals {
                if x0.shape() != s.covariates.shape() {
                    return fail("counterfactual shape differs from covariates".into());
                }
            }
            if s.event_counts.len() < s.follow_up_end {
                return fail(format!(
                    "{} event counts for {} intervals",
                    s.event_counts.len(),
                    s.follow_up_end
                ));
            }
        }
        Ok(Self {
            grid,
            d_z,
            d_x,
            subjects,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    /// Regressor length `1 + d_Z + d_X + 1`.
    pub fn regressor_len(&self) -> usize {
        2 + self.d_z + self.d_x
    }

    pub fn x_block_offset(&self) -> usize {
        1 + self.d_z
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn has_counterfactuals(&self) -> bool {
        !self.subjects.is_empty() && self.subjects.iter().all(|s| s.counterfactuals.is_some())
    }

    pub fn subject(&self, id: u64) -> Option<&SubjectRecord> {
        self.subjects
            .binary_search_by_key(&id, |s| s.id)
            .ok()
            .map(|i| &self.subjects[i])
    }

    /// Number of intervals with a non-empty risk set.
    pub fn fitted_intervals(&self) -> usize {
        self.subjects.iter().map(|s| s.follow_up_end).max().unwrap_or(0)
    }

    /// Names of the regressor entries, in order.
    pub fn regressor_names(&self) -> Vec<String> {
        let mut names = vec!["intercept".to_string()];
        names.extend((1..=self.d_z).map(|j| format!("Z{j}")));
        names.extend((1..=self.d_x).map(|j| format!("X{j}")));
        names.push("D".into());
        names
    }
}

/// Which process fills the X block of the regressor after treatment start.
#[derive(Debug, Clone, Copy)]
pub enum CovariateSource<'a> {
    Observed,
    TrueCounterfactual,
    ForecastCounterfactual(&'a ForecastSet),
}

impl CovariateSource<'_> {
    pub fn label(&self) -> &'static str {
        match self {
            CovariateSource::Observed => "observed",
            CovariateSource::TrueCounterfactual => "true-counterfactual",
            CovariateSource::ForecastCounterfactual(_) => "forecast-counterfactual",
        }
    }
}

/// `W_i(t_k) = (1, Z_i, X-block, D_i(t_k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorVector {
    pub values: Vec<f64>,
    pub x_block_offset: usize,
}

/// Writes `W_i(t_k)` into `out`, which must have length `2 + d_Z + d_X`.
pub fn fill_regressor(
    subject: &SubjectRecord,
    k: usize,
    source: CovariateSource<'_>,
    out: &mut [f64],
) -> Result<()> {
    let d_z = subject.baseline.len();
    let d_x = subject.covariates.ncols();
    if out.len() != 2 + d_z + d_x {
        return Err(Error::DimensionMismatch(format!(
            "regressor buffer has length {}, expected {}",
            out.len(),
            2 + d_z + d_x
        )));
    }
    if k >= subject.follow_up_end {
        return Err(Error::DimensionMismatch(format!(
            "grid index {k} is not before follow-up end {} of subject {}",
            subject.follow_up_end, subject.id
        )));
    }
    let treated = subject.treated_at(k);
    out[0] = 1.0;
    out[1..=d_z].copy_from_slice(&subject.baseline);
    let x_block = &mut out[1 + d_z..1 + d_z + d_x];
    match source {
        _ if !treated => {
            for (j, v) in x_block.iter_mut().enumerate() {
                *v = subject.covariates[(k, j)];
            }
        }
        CovariateSource::Observed => {
            for (j, v) in x_block.iter_mut().enumerate() {
                *v = subject.covariates[(k, j)];
            }
        }
        CovariateSource::TrueCounterfactual => {
            let x0 = subject
                .counterfactuals
                .as_ref()
                .ok_or(Error::MissingCounterfactual {
                    subject: subject.id,
                    k,
                })?;
            for (j, v) in x_block.iter_mut().enumerate() {
                *v = x0[(k, j)];
            }
        }
        CovariateSource::ForecastCounterfactual(forecasts) => {
            let row = forecasts
                .value(subject.id, k)
                .ok_or(Error::MissingCounterfactual {
                    subject: subject.id,
                    k,
                })?;
            x_block.copy_from_slice(row);
        }
    }
    out[1 + d_z + d_x] = if treated { 1.0 } else { 0.0 };
    Ok(())
}

/// Assembles `W_i(t_k)` from the chosen covariate source. Before treatment
/// start every source yields the observed covariates.
pub fn assemble_regressor(
    subject: &SubjectRecord,
    k: usize,
    source: CovariateSource<'_>,
) -> Result<RegressorVector> {
    let d_z = subject.baseline.len();
    let mut values = vec![0.0; 2 + d_z + subject.covariates.ncols()];
    fill_regressor(subject, k, source, &mut values)?;
    Ok(RegressorVector {
        values,
        x_block_offset: 1 + d_z,
    })
}

/// Column names used for CSV ingestion.
#[derive(Debug, Clone)]
pub struct PanelSchema {
    pub id: String,
    pub t_index: String,
    pub treatment: String,
    pub events: String,
    pub baseline_prefix: String,
    pub covariate_prefix: String,
    pub counterfactual_prefix: String,
    /// Grid times; defaults to the unit grid `t_k = k`.
    pub grid: Option<TimeGrid>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            t_index: "t_index".into(),
            treatment: "D".into(),
            events: "dN".into(),
            baseline_prefix: "Z".into(),
            covariate_prefix: "X".into(),
            counterfactual_prefix: "X0_".into(),
            grid: None,
        }
    }
}

/// Indices of `prefix<1..=d>` columns, in numeric order.
fn numbered_columns(headers: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(col, name)| {
            let rest = name.strip_prefix(prefix)?;
            if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            rest.parse::<usize>().ok().map(|n| (n, col))
        })
        .collect();
    found.sort_unstable();
    for (expected, (n, _)) in (1..).zip(&found) {
        if *n != expected {
            return Err(Error::MissingColumn(format!("{prefix}{expected}")));
        }
    }
    Ok(found.into_iter().map(|(_, col)| col).collect())
}

struct RawRow {
    line: usize,
    t_index: usize,
    treated: bool,
    events: u64,
    baseline: Vec<f64>,
    covariates: Vec<f64>,
    counterfactuals: Vec<f64>,
}

fn parse_field<T: std::str::FromStr>(record: &csv::StringRecord, col: usize, line: usize, name: &str) -> Result<T> {
    let raw = record.get(col).unwrap_or("").trim();
    raw.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse `{raw}` in column {name}"),
    })
}

/// Reads a panel CSV (`id,t_index,D,dN,Z1..,X1..[,X0_1..]`).
///
/// Each subject's rows must run `t_index = 0, 1, …, τ_i` in order. `dN` on
/// row `k` counts events in `(t_k, t_{k+1}]`; the last row's value is kept so
/// that [`validate_panel`] can flag events recorded after follow-up.
pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(file, schema)
}

pub fn read_panel(reader: impl std::io::Read, schema: &PanelSchema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = col(&schema.id)?;
    let t_col = col(&schema.t_index)?;
    let d_col = col(&schema.treatment)?;
    let n_col = col(&schema.events)?;
    let z_cols = numbered_columns(&headers, &schema.baseline_prefix)?;
    let x_cols = numbered_columns(&headers, &schema.covariate_prefix)?;
    let x0_cols = numbered_columns(&headers, &schema.counterfactual_prefix)?;
    if x_cols.is_empty() {
        return Err(Error::MissingColumn(format!("{}1", schema.covariate_prefix)));
    }
    if !x0_cols.is_empty() && x0_cols.len() != x_cols.len() {
        return Err(Error::MissingColumn(format!(
            "{}{}",
            schema.counterfactual_prefix,
            x0_cols.len().min(x_cols.len()) + 1
        )));
    }
    let d_z = z_cols.len();
    let d_x = x_cols.len();

    let mut by_subject: BTreeMap<u64, Vec<RawRow>> = BTreeMap::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let id: u64 = parse_field(&record, id_col, line, &schema.id)?;
        let t_index: usize = parse_field(&record, t_col, line, &schema.t_index)?;
        let d: u8 = parse_field(&record, d_col, line, &schema.treatment)?;
        if d > 1 {
            return Err(Error::Parse {
                line,
                message: format!("treatment indicator must be 0 or 1, got {d}"),
            });
        }
        let events: u64 = parse_field(&record, n_col, line, &schema.events)?;
        let floats = |cols: &[usize]| -> Result<Vec<f64>> {
            cols.iter()
                .map(|&c| parse_field(&record, c, line, &headers[c]))
                .collect()
        };
        let row = RawRow {
            line,
            t_index,
            treated: d == 1,
            events,
            baseline: floats(&z_cols)?,
            covariates: floats(&x_cols)?,
            counterfactuals: floats(&x0_cols)?,
        };
        by_subject.entry(id).or_default().push(row);
    }

    let mut subjects = Vec::with_capacity(by_subject.len());
    let mut k_max = 0;
    for (id, rows) in by_subject {
        if rows.windows(2).any(|w| w[1].t_index <= w[0].t_index) {
            return Err(Error::NonMonotoneTime(id));
        }
        if rows.iter().enumerate().any(|(k, r)| r.t_index != k) {
            return Err(Error::InvalidPanel(format!(
                "subject {id}: time indices must run 0, 1, 2, … without gaps"
            )));
        }
        if rows.len() < 2 {
            return Err(Error::InvalidPanel(format!(
                "subject {id}: needs at least two time points"
            )));
        }
        if rows.windows(2).any(|w| w[0].treated && !w[1].treated) {
            return Err(Error::NonMonotoneTreatment(id));
        }
        let first = &rows[0];
        if let Some(r) = rows.iter().find(|r| r.baseline != first.baseline) {
            return Err(Error::Parse {
                line: r.line,
                message: format!("baseline covariates of subject {id} change over time"),
            });
        }
        let follow_up_end = rows.len() - 1;
        k_max = k_max.max(follow_up_end);
        let treatment_start = rows.iter().position(|r| r.treated);
        let covariates = DMatrix::from_fn(rows.len(), d_x, |k, j| rows[k].covariates[j]);
        let counterfactuals = (!x0_cols.is_empty())
            .then(|| DMatrix::from_fn(rows.len(), d_x, |k, j| rows[k].counterfactuals[j]));
        let mut event_counts: Vec<u64> = rows.iter().map(|r| r.events).collect();
        if event_counts.last() == Some(&0) {
            event_counts.pop();
        }
        subjects.push(SubjectRecord {
            id,
            baseline: first.baseline.clone(),
            covariates,
            treatment_start,
            event_counts,
            follow_up_end,
            counterfactuals,
        });
    }
    if subjects.is_empty() {
        return Err(Error::InvalidPanel("panel has no rows".into()));
    }
    let grid = match &schema.grid {
        Some(g) if g.intervals() >= k_max => g.clone(),
        Some(g) => {
            return Err(Error::GridMismatch(format!(
                "schema grid has {} intervals but data reach index {k_max}",
                g.intervals()
            )))
        }
        None => TimeGrid::unit(k_max),
    };
    PanelDataset::new(grid, d_z, d_x, subjects)
}

/// Writes the panel in the format read by [`load_panel`]. Floats are
/// written in shortest round-trip form so reloading is bit-exact.
pub fn write_panel(panel: &PanelDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_panel_to(panel, &mut w).map_err(|e| Error::io(path, e))
}

pub fn write_panel_to(panel: &PanelDataset, w: &mut impl std::io::Write) -> std::io::Result<()> {
    let with_x0 = panel.has_counterfactuals();
    let mut header = vec!["id".to_string(), "t_index".into(), "D".into(), "dN".into()];
    header.extend((1..=panel.d_z).map(|j| format!("Z{j}")));
    header.extend((1..=panel.d_x).map(|j| format!("X{j}")));
    if with_x0 {
        header.extend((1..=panel.d_x).map(|j| format!("X0_{j}")));
    }
    writeln!(w, "{}", header.join(","))?;
    let mut line = String::new();
    for s in &panel.subjects {
        for k in 0..=s.follow_up_end {
            use std::fmt::Write as _;
            line.clear();
            let _ = write!(
                line,
                "{},{},{},{}",
                s.id,
                k,
                u8::from(s.treated_at(k)),
                s.events(k)
            );
            for z in &s.baseline {
                let _ = write!(line, ",{z}");
            }
            for j in 0..panel.d_x {
                let _ = write!(line, ",{}", s.covariates[(k, j)]);
            }
            if let Some(x0) = s.counterfactuals.as_ref().filter(|_| with_x0) {
                for j in 0..panel.d_x {
                    let _ = write!(line, ",{}", x0[(k, j)]);
                }
            }
            writeln!(w, "{line}")?;
        }
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IssueKind {
    NonFinite,
    EventsAfterFollowUp,
    CounterfactualDivergesBeforeTreatment,
    TreatmentAfterFollowUp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Issue {
    pub subject: u64,
    pub k: Option<usize>,
    pub column: Option<String>,
    pub kind: IssueKind,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let what = match self.kind {
            IssueKind::NonFinite => "non-finite value",
            IssueKind::EventsAfterFollowUp => "events recorded after follow-up end",
            IssueKind::CounterfactualDivergesBeforeTreatment => {
                "counterfactual diverges before treatment"
            }
            IssueKind::TreatmentAfterFollowUp => "treatment starts after follow-up end",
        };
        write!(f, "subject {}", self.subject)?;
        if let Some(k) = self.k {
            write!(f, ", t_index {k}")?;
        }
        if let Some(c) = &self.column {
            write!(f, ", column {c}")?;
        }
        write!(f, ": {what}")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn subjects(&self) -> BTreeSet<u64> {
        self.issues.iter().map(|i| i.subject).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for issue in &self.issues {
            writeln!(f, "{issue}")?;
        }
        Ok(())
    }
}

/// Lists every value-level invariant violation in the panel.
pub fn validate_panel(panel: &PanelDataset) -> ValidationReport {
    let mut issues = Vec::new();
    for s in &panel.subjects {
        let issue = |k: Option<usize>, column: Option<String>, kind| Issue {
            subject: s.id,
            k,
            column,
            kind,
        };
        for (j, z) in s.baseline.iter().enumerate() {
            if !z.is_finite() {
                issues.push(issue(None, Some(format!("Z{}", j + 1)), IssueKind::NonFinite));
            }
        }
        for k in 0..s.covariates.nrows() {
            for j in 0..s.covariates.ncols() {
                if !s.covariates[(k, j)].is_finite() {
                    issues.push(issue(Some(k), Some(format!("X{}", j + 1)), IssueKind::NonFinite));
                }
            }
        }
        if let Some(x0) = &s.counterfactuals {
            let pre_end = s.treatment_start.unwrap_or(x0.nrows()).min(x0.nrows());
            for k in 0..x0.nrows() {
                for j in 0..x0.ncols() {
                    let v = x0[(k, j)];
                    if !v.is_finite() {
                        issues.push(issue(
                            Some(k),
                            Some(format!("X0_{}", j + 1)),
                            IssueKind::NonFinite,
                        ));
                    } else if k < pre_end && v != s.covariates[(k, j)] {
                        issues.push(issue(
                            Some(k),
                            Some(format!("X0_{}", j + 1)),
                            IssueKind::CounterfactualDivergesBeforeTreatment,
                        ));
                    }
                }
            }
        }
        for (k, &n) in s.event_counts.iter().enumerate().skip(s.follow_up_end) {
            if n != 0 {
                issues.push(issue(Some(k), Some("dN".into()), IssueKind::EventsAfterFollowUp));
            }
        }
        if let Some(start) = s.treatment_start {
            if start > s.follow_up_end {
                issues.push(issue(Some(start), Some("D".into()), IssueKind::TreatmentAfterFollowUp));
            }
        }
    }
    ValidationReport { issues }
}
