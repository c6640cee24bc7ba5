//! First-order vector autoregression for counterfactual covariate paths.
//!
//! The model `X_i(t_k) = b₀ + B_Z Z_i + Π X_i(t_{k−1}) + ω_i(t_k)` is fitted
//! by least squares on untreated transitions only. Treated subjects are then
//! forecast from their last untreated observation, and the `l`-step forecast
//! error covariance `Σ(l) = Σ_{j<l} Π^j Σ Π^{jᵀ}` feeds the bias correction.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, SubjectRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct VarModel {
    /// `d_X × d_X` transition matrix.
    pub pi: DMatrix<f64>,
    pub intercept: DVector<f64>,
    /// `d_X × d_Z`; the subject intercept is `intercept + z_loadings · Z_i`.
    pub z_loadings: DMatrix<f64>,
    /// Residual covariance `Σ̂`.
    pub resid_cov: DMatrix<f64>,
    pub n_obs: usize,
    pub dof: usize,
}

impl VarModel {
    /// A model with known parameters (no fit behind it).
    pub fn from_parts(
        pi: DMatrix<f64>,
        intercept: DVector<f64>,
        z_loadings: DMatrix<f64>,
        resid_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let d = pi.nrows();
        if pi.ncols() != d
            || intercept.len() != d
            || z_loadings.nrows() != d
            || resid_cov.shape() != (d, d)
        {
            return Err(Error::DimensionMismatch("inconsistent VAR parameter shapes".into()));
        }
        Ok(Self {
            pi,
            intercept,
            z_loadings,
            resid_cov,
            n_obs: 0,
            dof: 0,
        })
    }

    pub fn d_x(&self) -> usize {
        self.pi.nrows()
    }

    pub fn d_z(&self) -> usize {
        self.z_loadings.ncols()
    }

    /// `β̂₀^i = b̂₀ + B̂_Z Z_i`.
    pub fn subject_intercept(&self, baseline: &[f64]) -> DVector<f64> {
        &self.intercept + &self.z_loadings * DVector::from_column_slice(baseline)
    }

    /// Plain-text layout: a `dims` header, then each block name followed by
    /// its rows (row-major, space separated).
    pub fn to_text(&self) -> String {
        let mut out = String::from("# var1-model\n");
        let _ = writeln!(
            out,
            "dims {} {} {} {}",
            self.d_x(),
            self.d_z(),
            self.n_obs,
            self.dof
        );
        let mut block = |name: &str, m: &DMatrix<f64>| {
            let _ = writeln!(out, "{name}");
            for r in 0..m.nrows() {
                if m.ncols() == 0 {
                    let _ = writeln!(out, "-");
                    continue;
                }
                let row: Vec<String> = (0..m.ncols()).map(|c| m[(r, c)].to_string()).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        };
        block("pi", &self.pi);
        block("intercept", &DMatrix::from_column_slice(1, self.d_x(), self.intercept.as_slice()));
        block("z_loadings", &self.z_loadings);
        block("resid_cov", &self.resid_cov);
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let perr = |line: usize, message: String| Error::Parse { line, message };
        let (ln, dims) = lines.next().ok_or_else(|| perr(1, "empty model file".into()))?;
        let dims: Vec<usize> = dims
            .strip_prefix("dims")
            .ok_or_else(|| perr(ln, "expected `dims` header".into()))?
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| perr(ln, format!("bad dimension `{v}`"))))
            .collect::<Result<_>>()?;
        let [d_x, d_z, n_obs, dof] = dims[..] else {
            return Err(perr(ln, "dims needs four values".into()));
        };
        let mut read_block = |name: &str, rows: usize, cols: usize| -> Result<DMatrix<f64>> {
            let (ln, header) = lines
                .next()
                .ok_or_else(|| perr(0, format!("missing block `{name}`")))?;
            if header != name {
                return Err(perr(ln, format!("expected block `{name}`, found `{header}`")));
            }
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, row) = lines
                    .next()
                    .ok_or_else(|| perr(0, format!("block `{name}` is truncated")))?;
                let parsed: Vec<f64> = if cols == 0 && row == "-" {
                    Vec::new()
                } else {
                    row.split_whitespace()
                        .map(|v| v.parse().map_err(|_| perr(ln, format!("bad value `{v}`"))))
                        .collect::<Result<_>>()?
                };
                if parsed.len() != cols {
                    return Err(perr(ln, format!("expected {cols} values in `{name}`")));
                }
                values.extend(parsed);
            }
            Ok(DMatrix::from_row_slice(rows, cols, &values))
        };
        let pi = read_block("pi", d_x, d_x)?;
        let intercept = read_block("intercept", 1, d_x)?;
        let z_loadings = read_block("z_loadings", d_x, d_z)?;
        let resid_cov = read_block("resid_cov", d_x, d_x)?;
        Ok(Self {
            pi,
            intercept: DVector::from_iterator(d_x, intercept.iter().copied()),
            z_loadings,
            resid_cov,
            n_obs,
            dof,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Stacked untreated transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    /// Rows `(1, Z_i, X_i(t_{k−1}))`.
    pub design: DMatrix<f64>,
    /// Rows `X_i(t_k)`.
    pub targets: DMatrix<f64>,
    /// `(subject id, k)` of each row.
    pub row_index: Vec<(u64, usize)>,
    pub column_names: Vec<String>,
}

/// Last grid index at which the subject is known to be untreated.
pub fn last_untreated_index(subject: &SubjectRecord) -> usize {
    match subject.treatment_start {
        Some(s) => s.saturating_sub(1).min(subject.follow_up_end),
        None => subject.follow_up_end,
    }
}

pub fn build_design_matrix(panel: &PanelDataset) -> Result<DesignMatrix> {
    let d_z = panel.d_z();
    let d_x = panel.d_x();
    let width = 1 + d_z + d_x;
    let row_index: Vec<(u64, usize)> = panel
        .subjects()
        .iter()
        .filter(|s| s.treatment_start != Some(0))
        .flat_map(|s| (1..=last_untreated_index(s)).map(move |k| (s.id, k)))
        .collect();
    if row_index.is_empty() {
        return Err(Error::EmptyDesign);
    }
    let mut design = DMatrix::zeros(row_index.len(), width);
    let mut targets = DMatrix::zeros(row_index.len(), d_x);
    let mut row = 0;
    for s in panel.subjects() {
        if s.treatment_start == Some(0) {
            continue;
        }
        for k in 1..=last_untreated_index(s) {
            design[(row, 0)] = 1.0;
            for (m, z) in s.baseline.iter().enumerate() {
                design[(row, 1 + m)] = *z;
            }
            for j in 0..d_x {
                design[(row, 1 + d_z + j)] = s.covariates[(k - 1, j)];
                targets[(row, j)] = s.covariates[(k, j)];
            }
            row += 1;
        }
    }
    let mut column_names = vec!["intercept".to_string()];
    column_names.extend((1..=d_z).map(|m| format!("Z{m}")));
    column_names.extend((1..=d_x).map(|j| format!("X{j}(lag)")));
    Ok(DesignMatrix {
        design,
        targets,
        row_index,
        column_names,
    })
}

/// Least-squares coefficients (`width × d_X`) through an SVD; a rank
/// deficiency is reported with the columns spanning the null space.
pub fn least_squares(design: &DesignMatrix) -> Result<DMatrix<f64>> {
    let (rows, cols) = design.design.shape();
    if rows < cols + 1 {
        return Err(Error::InsufficientRows { rows, cols });
    }
    let svd = design.design.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let tol = (rows.max(cols) as f64) * f64::EPSILON * s_max;
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut collinear = std::collections::BTreeSet::new();
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s <= tol || s_max == 0.0 {
            for c in 0..cols {
                if v_t[(i, c)].abs() > 1e-6 {
                    collinear.insert(c);
                }
            }
        }
    }
    if !collinear.is_empty() || s_max == 0.0 {
        return Err(Error::RankDeficient(
            collinear
                .into_iter()
                .map(|c| design.column_names[c].clone())
                .collect(),
        ));
    }
    svd.solve(&design.targets, tol)
        .map_err(|e| Error::InvalidPanel(e.to_string()))
}

/// Fits the VAR(1) on all untreated transitions of the panel.
pub fn fit_var(panel: &PanelDataset) -> Result<VarModel> {
    let design = build_design_matrix(panel)?;
    let coeffs = least_squares(&design)?;
    let d_z = panel.d_z();
    let d_x = panel.d_x();
    let (n_obs, width) = design.design.shape();
    let dof = n_obs - width;
    let resid = &design.targets - &design.design * &coeffs;
    let mut resid_cov = resid.transpose() * &resid / dof as f64;
    resid_cov = (&resid_cov + resid_cov.transpose()) * 0.5;
    let intercept = DVector::from_fn(d_x, |j, _| coeffs[(0, j)]);
    let z_loadings = DMatrix::from_fn(d_x, d_z, |j, m| coeffs[(1 + m, j)]);
    let pi = DMatrix::from_fn(d_x, d_x, |j, q| coeffs[(1 + d_z + q, j)]);
    Ok(VarModel {
        pi,
        intercept,
        z_loadings,
        resid_cov,
        n_obs,
        dof,
    })
}

/// Forecast counterfactual path of one treated subject, grid indices
/// `start..=end`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastPath {
    pub subject: u64,
    pub start: usize,
    d_x: usize,
    /// Row-major, one row per grid index from `start`.
    values: Vec<f64>,
}

impl ForecastPath {
    pub fn new(subject: u64, start: usize, d_x: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len() % d_x.max(1), 0, "forecast values must fill whole rows");
        Self {
            subject,
            start,
            d_x,
            values,
        }
    }

    pub fn len(&self) -> usize {
        if self.d_x == 0 {
            0
        } else {
            self.values.len() / self.d_x
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end(&self) -> usize {
        self.start + self.len().saturating_sub(1)
    }

    /// `X̃(t_k)` or `None` outside the path.
    pub fn value(&self, k: usize) -> Option<&[f64]> {
        let i = k.checked_sub(self.start)?;
        self.values.get(i * self.d_x..(i + 1) * self.d_x)
    }

    /// Forecast horizon `l = k − s + 1`.
    pub fn steps(&self, k: usize) -> Option<usize> {
        (k >= self.start).then(|| k - self.start + 1)
    }
}

/// `X̃(t_s) = β̂₀ + Π̂ X(t_{s−1})`, then `X̃(t_{k+1}) = β̂₀ + Π̂ X̃(t_k)`
/// up to the subject's follow-up end.
pub fn forecast_counterfactuals(model: &VarModel, subject: &SubjectRecord) -> Result<ForecastPath> {
    let d_x = model.d_x();
    if subject.covariates.ncols() != d_x || subject.baseline.len() != model.d_z() {
        return Err(Error::DimensionMismatch(format!(
            "subject {} does not match the VAR model dimensions",
            subject.id
        )));
    }
    let start = match subject.treatment_start {
        Some(0) => return Err(Error::NoForecastAnchor(subject.id)),
        Some(s) => s,
        None => {
            return Err(Error::InvalidPanel(format!(
                "subject {} is never treated; nothing to forecast",
                subject.id
            )))
        }
    };
    let beta = model.subject_intercept(&subject.baseline);
    let mut values = Vec::new();
    if start <= subject.follow_up_end {
        let mut state = DVector::from_fn(d_x, |j, _| subject.covariates[(start - 1, j)]);
        for _ in start..=subject.follow_up_end {
            state = &beta + &model.pi * &state;
            values.extend(state.iter().copied());
        }
    }
    Ok(ForecastPath::new(subject.id, start, d_x, values))
}

/// Forecasts for every treated subject of a panel, keyed by subject id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForecastSet {
    paths: BTreeMap<u64, ForecastPath>,
}

impl ForecastSet {
    pub fn insert(&mut self, path: ForecastPath) {
        self.paths.insert(path.subject, path);
    }

    pub fn path(&self, subject: u64) -> Option<&ForecastPath> {
        self.paths.get(&subject)
    }

    pub fn value(&self, subject: u64, k: usize) -> Option<&[f64]> {
        self.paths.get(&subject)?.value(k)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ForecastPath> {
        self.paths.values()
    }
}

pub fn forecast_panel(model: &VarModel, panel: &PanelDataset) -> Result<ForecastSet> {
    let mut set = ForecastSet::default();
    for s in panel.subjects().iter().filter(|s| s.is_treated()) {
        set.insert(forecast_counterfactuals(model, s)?);
    }
    Ok(set)
}

/// `Σ(l)` for `l = 1..=l_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCovariance {
    matrices: Vec<DMatrix<f64>>,
}

impl ErrorCovariance {
    /// `Σ(l)`, with `l` starting at 1.
    pub fn get(&self, l: usize) -> Option<&DMatrix<f64>> {
        l.checked_sub(1).and_then(|i| self.matrices.get(i))
    }

    pub fn max_horizon(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrices(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// All horizons set to zero.
    pub fn zeros(d_x: usize, l_max: usize) -> Self {
        Self {
            matrices: vec![DMatrix::zeros(d_x, d_x); l_max],
        }
    }
}

pub fn error_covariance_from(pi: &DMatrix<f64>, sigma: &DMatrix<f64>, l_max: usize) -> ErrorCovariance {
    let mut matrices = Vec::with_capacity(l_max);
    let mut power = DMatrix::identity(pi.nrows(), pi.ncols());
    let mut acc = DMatrix::zeros(sigma.nrows(), sigma.ncols());
    for _ in 0..l_max {
        acc += &power * sigma * power.transpose();
        matrices.push((&acc + acc.transpose()) * 0.5);
        power = pi * &power;
    }
    ErrorCovariance { matrices }
}

pub fn error_covariance(model: &VarModel, l_max: usize) -> ErrorCovariance {
    error_covariance_from(&model.pi, &model.resid_cov, l_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::TimeGrid;

    fn ar_subject(id: u64, coef: f64, x_start: f64, k_max: usize, start: Option<usize>) -> SubjectRecord {
        let mut xs = vec![x_start];
        for _ in 0..k_max {
            let last = *xs.last().unwrap();
            xs.push(coef * last);
        }
        SubjectRecord {
            id,
            baseline: vec![],
            covariates: DMatrix::from_column_slice(k_max + 1, 1, &xs),
            treatment_start: start,
            event_counts: vec![0; k_max],
            follow_up_end: k_max,
            counterfactuals: None,
        }
    }

    #[test]
    fn design_counts_rows() {
        let grid = TimeGrid::unit(11);
        let panel = PanelDataset::new(grid.clone(), 0, 1, vec![ar_subject(1, 0.5, 3.0, 11, None)]).unwrap();
        let d = build_design_matrix(&panel).unwrap();
        assert_eq!(d.design.shape(), (11, 2));
        assert_eq!(d.row_index[0], (1, 1));

        let panel = PanelDataset::new(grid, 0, 1, vec![ar_subject(1, 0.5, 3.0, 11, Some(1))]).unwrap();
        assert!(matches!(build_design_matrix(&panel), Err(Error::EmptyDesign)));
    }

    #[test]
    fn noiseless_recovery() {
        let grid = TimeGrid::unit(6);
        let subjects = (0..5)
            .map(|i| ar_subject(i, -0.25, 1.0 + i as f64, 6, None))
            .collect();
        let panel = PanelDataset::new(grid, 0, 1, subjects).unwrap();
        let m = fit_var(&panel).unwrap();
        assert!((m.pi[(0, 0)] + 0.25).abs() < 1e-12);
        assert!(m.intercept[0].abs() < 1e-12);
        assert!(m.resid_cov[(0, 0)].abs() < 1e-20);
        assert_eq!(m.n_obs, 30);
        assert_eq!(m.dof, 28);
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let grid = TimeGrid::unit(4);
        let mut subjects: Vec<_> = (0..4).map(|i| ar_subject(i, 0.5, 1.0 + i as f64, 4, None)).collect();
        for s in &mut subjects {
            s.baseline = vec![2.0];
        }
        let panel = PanelDataset::new(grid, 1, 1, subjects).unwrap();
        match fit_var(&panel) {
            Err(Error::RankDeficient(cols)) => {
                assert!(cols.contains(&"intercept".to_string()));
                assert!(cols.contains(&"Z1".to_string()));
                assert!(!cols.contains(&"X1(lag)".to_string()));
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn insufficient_rows() {
        let grid = TimeGrid::unit(2);
        let panel = PanelDataset::new(grid, 0, 1, vec![ar_subject(1, 0.5, 1.0, 2, None)]).unwrap();
        assert!(matches!(fit_var(&panel), Err(Error::InsufficientRows { rows: 2, cols: 2 })));
    }

    fn scalar_model(pi: f64, b: f64, sigma: f64) -> VarModel {
        VarModel::from_parts(
            DMatrix::from_element(1, 1, pi),
            DVector::from_element(1, b),
            DMatrix::zeros(1, 0),
            DMatrix::from_element(1, 1, sigma),
        )
        .unwrap()
    }

    #[test]
    fn forecast_halving_sequence() {
        let mut s = ar_subject(1, 1.0, 8.0, 6, Some(2));
        s.covariates[(1, 0)] = 8.0;
        let path = forecast_counterfactuals(&scalar_model(0.5, 0.0, 1.0), &s).unwrap();
        let got: Vec<f64> = (2..=6).map(|k| path.value(k).unwrap()[0]).collect();
        assert_eq!(got, vec![4.0, 2.0, 1.0, 0.5, 0.25]);
        assert_eq!(path.steps(2), Some(1));
        assert_eq!(path.steps(5), Some(4));
        assert_eq!(path.value(1), None);
    }

    #[test]
    fn memoryless_forecast_is_intercept() {
        let s = ar_subject(1, 0.9, 5.0, 5, Some(3));
        let path = forecast_counterfactuals(&scalar_model(0.0, 1.7, 1.0), &s).unwrap();
        assert!((3..=5).all(|k| path.value(k).unwrap()[0] == 1.7));
    }

    #[test]
    fn forecast_requires_anchor() {
        let s = ar_subject(4, 0.9, 5.0, 5, Some(0));
        assert!(matches!(
            forecast_counterfactuals(&scalar_model(0.5, 0.0, 1.0), &s),
            Err(Error::NoForecastAnchor(4))
        ));
    }

    #[test]
    fn error_covariance_geometric_sum() {
        let ec = error_covariance(&scalar_model(0.5, 0.0, 1.0), 3);
        assert_eq!(ec.get(1).unwrap()[(0, 0)], 1.0);
        assert_eq!(ec.get(2).unwrap()[(0, 0)], 1.25);
        assert_eq!(ec.get(3).unwrap()[(0, 0)], 1.3125);
        assert!(ec.get(0).is_none());
        assert!(ec.get(4).is_none());
    }

    #[test]
    fn model_text_round_trip() {
        let m = VarModel {
            pi: DMatrix::from_row_slice(2, 2, &[0.1, -0.2, 0.3, 0.4]),
            intercept: DVector::from_vec(vec![1.0 / 3.0, -2.5]),
            z_loadings: DMatrix::from_row_slice(2, 1, &[0.7, 1e-17]),
            resid_cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.25, 0.25, 2.0]),
            n_obs: 40,
            dof: 35,
        };
        assert_eq!(VarModel::from_text(&m.to_text()).unwrap(), m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        m.save(&path).unwrap();
        assert_eq!(VarModel::load(&path).unwrap(), m);

        let scalar = scalar_model(0.5, 0.0, 1.0);
        scalar.save(&path).unwrap();
        assert_eq!(VarModel::load(&path).unwrap(), scalar);
    }
}
