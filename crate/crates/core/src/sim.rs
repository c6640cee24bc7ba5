//! Cohort simulator for treatment under time-varying confounding.
//!
//! Per subject and per unit interval `(t, t+1]`:
//!
//! 1. events are drawn under the state at `t` from a Poisson process with
//!    intensity `δ D + δ_0 + δ_Z·Z + δ_X·X(t)` (clamped at 0), by thinning;
//! 2. covariates advance. Untreated: `X(t+1) = κ_D0 X(t) + ε` and the
//!    counterfactual shares the draw. Treated:
//!    `X(t+1) = X(t) + κ_D1 (√1000 − X(t)) + ε` while the counterfactual
//!    keeps following the untreated rule with its own noise;
//! 3. an untreated subject starts treatment at `t+1` with probability
//!    `clamp(m Σλ_j exp(Σ λ_j X_j(t)), 0, 1)`. Treatment is absorbing.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::panel::{PanelDataset, SubjectRecord, TimeGrid};
use crate::rng::{self, StreamRng};

/// Level towards which treated covariates revert.
pub const TREATED_TARGET: f64 = 31.622_776_601_683_793; // √1000

/// Number of baseline covariates (uniform, Bernoulli, Poisson).
pub const BASELINE_DIM: usize = 3;

/// Which state the counterfactual of a treated subject is propagated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterfactualRule {
    /// `X⁰(t+1) = κ_D0 X⁰(t) + ε'`.
    SelfConsistent,
    /// `X⁰(t+1) = κ_D0 X(t) + ε'`, with the observed (treated) state.
    ObservedState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimParams {
    pub horizon: usize,
    pub min_x: Vec<f64>,
    pub max_x: Vec<f64>,
    /// Diagonal of the untreated transition matrix.
    pub kappa_d0: Vec<f64>,
    /// Diagonal of the treated reversion matrix.
    pub kappa_d1: Vec<f64>,
    /// Noise covariance, `d_X × d_X`.
    pub sigma: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub m: f64,
    pub delta: f64,
    pub delta0: f64,
    pub delta_z: Vec<f64>,
    pub delta_x: Vec<f64>,
    pub min_z1: f64,
    pub max_z1: f64,
    pub p_z2: f64,
    pub lambda_z3: f64,
    pub n: usize,
    pub seed: u64,
    pub counterfactual_rule: CounterfactualRule,
    /// Upper bound on events in one interval.
    pub event_cap: u64,
}

pub const PRESETS: [&str; 3] = ["paper-1cov", "paper-3cov", "paper-6cov"];

impl SimParams {
    /// Built-in scenarios with 1, 3 and 6 time-varying covariates.
    /// Noise defaults to `0.4·I`.
    pub fn preset(name: &str) -> Result<Self> {
        let (min_x, max_x, delta_x, lambda) = match name {
            "paper-1cov" => (vec![0.0], vec![10.0], vec![-0.25], vec![0.12]),
            "paper-3cov" => (
                vec![0.0; 3],
                vec![10.0, 20.0, 30.0],
                vec![-0.3, 0.0, -0.25],
                vec![0.16, 0.14, 0.0],
            ),
            "paper-6cov" => (
                vec![0.0; 6],
                vec![10.0, 20.0, 30.0, 10.0, 20.0, 30.0],
                vec![-0.3, -0.2, 0.0, 0.0, -0.2, -0.25],
                vec![0.13, 0.12, 0.13, 0.14, 0.0, 0.0],
            ),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        let d_x = min_x.len();
        Ok(Self {
            horizon: 11,
            min_x,
            max_x,
            kappa_d0: vec![-0.25; d_x],
            kappa_d1: vec![0.25; d_x],
            sigma: DMatrix::identity(d_x, d_x) * 0.4,
            lambda,
            m: 1.5,
            delta: -0.01,
            delta0: 30.0,
            delta_z: vec![0.1, 0.02, 0.01],
            delta_x,
            min_z1: -20.0,
            max_z1: -10.0,
            p_z2: 0.5,
            lambda_z3: 0.1,
            n: 1000,
            seed: 1,
            counterfactual_rule: CounterfactualRule::SelfConsistent,
            event_cap: 1_000_000,
        })
    }

    pub fn d_x(&self) -> usize {
        self.min_x.len()
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::unit(self.horizon)
    }

    /// True untreated transition matrix `diag(κ_D0)`.
    pub fn transition(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.kappa_d0))
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d_x();
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if d == 0 {
            return bad("at least one time-varying covariate is required".into());
        }
        for (name, len) in [
            ("max_x", self.max_x.len()),
            ("kappa_d0", self.kappa_d0.len()),
            ("kappa_d1", self.kappa_d1.len()),
            ("lambda", self.lambda.len()),
            ("delta_x", self.delta_x.len()),
        ] {
            if len != d {
                return bad(format!("{name} has {len} entries, expected {d}"));
            }
        }
        if self.delta_z.len() != BASELINE_DIM {
            return bad(format!("delta_z needs {BASELINE_DIM} entries"));
        }
        if self.sigma.shape() != (d, d) {
            return bad(format!("sigma must be {d}x{d}"));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.min_x.iter().zip(&self.max_x).any(|(a, b)| a > b) {
            return bad("min_x must not exceed max_x".into());
        }
        if self.min_z1 > self.max_z1 {
            return bad("min_z1 must not exceed max_z1".into());
        }
        if !(self.m >= 0.0) {
            return bad("m must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.p_z2) {
            return bad("p_z2 must lie in [0, 1]".into());
        }
        if !(self.lambda_z3 > 0.0) {
            return bad("lambda_z3 must be positive".into());
        }
        let all_finite = self
            .min_x
            .iter()
            .chain(&self.max_x)
            .chain(&self.kappa_d0)
            .chain(&self.kappa_d1)
            .chain(&self.lambda)
            .chain(&self.delta_z)
            .chain(&self.delta_x)
            .chain(self.sigma.iter())
            .chain([&self.delta, &self.delta0, &self.min_z1, &self.max_z1, &self.m])
            .all(|v| v.is_finite());
        if !all_finite {
            return bad("parameters must be finite".into());
        }
        if (&self.sigma - self.sigma.transpose()).amax() > 1e-12 * (1.0 + self.sigma.amax()) {
            return bad("sigma must be symmetric".into());
        }
        let min_eig = self.sigma.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-12 * (1.0 + self.sigma.amax()) {
            return bad(format!("sigma is not positive semi-definite (eigenvalue {min_eig})"));
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let scalar = || -> Result<f64> {
            value
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{key}: cannot parse `{value}`")))
        };
        let list = || -> Result<Vec<f64>> {
            value
                .split(',')
                .map(|v| {
                    v.trim().parse().map_err(|_| {
                        Error::InvalidParameter(format!("{key}: cannot parse `{value}`"))
                    })
                })
                .collect()
        };
        let d = self.d_x();
        // Single values broadcast over every covariate.
        let vector = || -> Result<Vec<f64>> {
            let v = list()?;
            Ok(if v.len() == 1 { vec![v[0]; d] } else { v })
        };
        let count = || -> Result<u64> {
            value
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("{key}: cannot parse `{value}`")))
        };
        match key {
            "n" => self.n = count()? as usize,
            "seed" => self.seed = count()?,
            "horizon" => self.horizon = count()? as usize,
            "event_cap" => self.event_cap = count()?,
            "min_x" => self.min_x = vector()?,
            "max_x" => self.max_x = vector()?,
            "kappa_d0" => self.kappa_d0 = vector()?,
            "kappa_d1" => self.kappa_d1 = vector()?,
            "lambda" => self.lambda = vector()?,
            "delta_x" => self.delta_x = vector()?,
            "delta_z" => self.delta_z = list()?,
            "sigma" => {
                let diag = vector()?;
                self.sigma = DMatrix::from_diagonal(&DVector::from_vec(diag));
            }
            "sigma_matrix" => {
                let v = list()?;
                if v.len() != d * d {
                    return Err(Error::InvalidParameter(format!(
                        "sigma_matrix needs {} row-major entries",
                        d * d
                    )));
                }
                self.sigma = DMatrix::from_row_slice(d, d, &v);
            }
            "m" => self.m = scalar()?,
            "delta" => self.delta = scalar()?,
            "delta0" => self.delta0 = scalar()?,
            "min_z1" => self.min_z1 = scalar()?,
            "max_z1" => self.max_z1 = scalar()?,
            "p_z2" => self.p_z2 = scalar()?,
            "lambda_z3" => self.lambda_z3 = scalar()?,
            "counterfactual_rule" => {
                self.counterfactual_rule = match value {
                    "self" | "counterfactual" => CounterfactualRule::SelfConsistent,
                    "observed" => CounterfactualRule::ObservedState,
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "counterfactual_rule must be `counterfactual` or `observed`, got `{value}`"
                        )))
                    }
                }
            }
            other => return Err(Error::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses a config file: an optional `preset = <name>` line followed by
    /// `key = value` lines. `#` starts a comment.
    pub fn from_config(text: &str) -> Result<Self> {
        let mut params: Option<Self> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if key == "preset" {
                if params.is_some() {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: "preset must come first".into(),
                    });
                }
                params = Some(Self::preset(value)?);
                continue;
            }
            let p = params.get_or_insert(Self::preset("paper-1cov")?);
            p.set(key, value)?;
        }
        let params = match params {
            Some(p) => p,
            None => Self::preset("paper-1cov")?,
        };
        params.validate()?;
        Ok(params)
    }

    /// Effective settings as ordered `(key, value)` pairs; feeding them back
    /// through [`SimParams::set`] reproduces the parameters exactly.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let rule = match self.counterfactual_rule {
            CounterfactualRule::SelfConsistent => "counterfactual",
            CounterfactualRule::ObservedState => "observed",
        };
        let sigma_rows: Vec<f64> = (0..self.d_x())
            .flat_map(|i| (0..self.d_x()).map(move |j| (i, j)))
            .map(|(i, j)| self.sigma[(i, j)])
            .collect();
        vec![
            ("n".into(), self.n.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("horizon".into(), self.horizon.to_string()),
            ("min_x".into(), join(&self.min_x)),
            ("max_x".into(), join(&self.max_x)),
            ("kappa_d0".into(), join(&self.kappa_d0)),
            ("kappa_d1".into(), join(&self.kappa_d1)),
            ("sigma_matrix".into(), join(&sigma_rows)),
            ("lambda".into(), join(&self.lambda)),
            ("m".into(), self.m.to_string()),
            ("delta".into(), self.delta.to_string()),
            ("delta0".into(), self.delta0.to_string()),
            ("delta_z".into(), join(&self.delta_z)),
            ("delta_x".into(), join(&self.delta_x)),
            ("min_z1".into(), self.min_z1.to_string()),
            ("max_z1".into(), self.max_z1.to_string()),
            ("p_z2".into(), self.p_z2.to_string()),
            ("lambda_z3".into(), self.lambda_z3.to_string()),
            ("counterfactual_rule".into(), rule.into()),
            ("event_cap".into(), self.event_cap.to_string()),
        ]
    }

    /// Common diagonal noise level when `sigma` is `s·I`.
    pub fn sigma_level(&self) -> Option<f64> {
        let s = self.sigma[(0, 0)];
        let d = self.d_x();
        let uniform = (0..d).all(|i| {
            (0..d).all(|j| self.sigma[(i, j)] == if i == j { s } else { 0.0 })
        });
        uniform.then_some(s)
    }
}

impl fmt::Display for SimParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.to_pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// Additive event intensity `δ D + δ_0 + δ_Z·Z + δ_X·X`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySpec {
    pub delta: f64,
    pub delta0: f64,
    pub delta_z: Vec<f64>,
    pub delta_x: Vec<f64>,
}

impl IntensitySpec {
    pub fn from_params(params: &SimParams) -> Self {
        Self {
            delta: params.delta,
            delta0: params.delta0,
            delta_z: params.delta_z.clone(),
            delta_x: params.delta_x.clone(),
        }
    }

    /// Constant intensity `μ` (no covariates).
    pub fn constant(mu: f64) -> Self {
        Self {
            delta: 0.0,
            delta0: mu,
            delta_z: Vec::new(),
            delta_x: Vec::new(),
        }
    }

    /// Unclamped affine value.
    pub fn evaluate(&self, treated: bool, z: &[f64], x: &[f64]) -> f64 {
        let d = if treated { self.delta } else { 0.0 };
        d + self.delta0
            + self.delta_z.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
            + self.delta_x.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Intensity as passed to the sampler, clamped at zero.
    pub fn rate(&self, treated: bool, z: &[f64], x: &[f64]) -> f64 {
        self.evaluate(treated, z, x).max(0.0)
    }
}

/// Outcome of one thinning run on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinnedEvents {
    pub count: u64,
    pub times: Option<Vec<f64>>,
}

/// Acceptance–rejection sampling of a Poisson process with intensity
/// `intensity(t)` on `(a, b]`, using a dominating homogeneous process of
/// rate `bound`. Negative intensities are treated as zero.
pub fn thinning_sample<R: Rng + ?Sized>(
    intensity: impl Fn(f64) -> f64,
    interval: (f64, f64),
    bound: f64,
    rng: &mut R,
    cap: u64,
    keep_times: bool,
) -> Result<ThinnedEvents> {
    let (a, b) = interval;
    if !(a < b) {
        return Err(Error::InvalidParameter(format!("empty interval ({a}, {b}]")));
    }
    if !(bound >= 0.0) || !bound.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid thinning bound {bound}")));
    }
    let mut times = keep_times.then(Vec::new);
    if bound == 0.0 {
        let mu = intensity(b).max(0.0);
        if mu > 0.0 {
            return Err(Error::ThinningBound { bound, intensity: mu });
        }
        return Ok(ThinnedEvents { count: 0, times });
    }
    let gaps = Exp::new(bound).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut t = a;
    let mut count = 0u64;
    loop {
        t += gaps.sample(rng);
        if t > b {
            break;
        }
        let mu = intensity(t).max(0.0);
        if mu > bound * (1.0 + 1e-12) {
            return Err(Error::ThinningBound { bound, intensity: mu });
        }
        let u: f64 = rng.random();
        if u * bound < mu {
            count += 1;
            if count > cap {
                return Err(Error::EventCap { cap, intensity: mu });
            }
            if let Some(ts) = times.as_mut() {
                ts.push(t);
            }
        }
    }
    Ok(ThinnedEvents { count, times })
}

/// Simulation kernels bound to one parameter set.
#[derive(Debug, Clone)]
pub struct CohortSimulator {
    params: SimParams,
    noise_factor: DMatrix<f64>,
    intensity: IntensitySpec,
}

impl CohortSimulator {
    pub fn new(params: SimParams) -> Result<Self> {
        params.validate()?;
        // L with L Lᵀ = Σ; eigen route so singular (including zero) Σ works.
        let eig = params.sigma.clone().symmetric_eigen();
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let noise_factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        let intensity = IntensitySpec::from_params(&params);
        Ok(Self {
            params,
            noise_factor,
            intensity,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn intensity(&self) -> &IntensitySpec {
        &self.intensity
    }

    /// `Z¹ ~ U[min, max]`, `Z² ~ Bernoulli(p)`, `Z³ ~ Poisson(λ)`.
    pub fn draw_baseline<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let p = &self.params;
        let z1 = p.min_z1 + (p.max_z1 - p.min_z1) * rng.random::<f64>();
        let z2 = if rng.random::<f64>() < p.p_z2 { 1.0 } else { 0.0 };
        let z3: f64 = Poisson::new(p.lambda_z3)
            .expect("lambda_z3 validated positive")
            .sample(rng);
        vec![z1, z2, z3]
    }

    fn noise<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let d = self.params.d_x();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.noise_factor * z
    }

    /// One covariate transition. Returns `(X(t+1), X⁰(t+1))`.
    pub fn step_covariates<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        x0: &[f64],
        treated: bool,
        rng: &mut R,
    ) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        if !treated {
            let eps = self.noise(rng);
            let next: Vec<f64> = (0..x.len()).map(|j| p.kappa_d0[j] * x[j] + eps[j]).collect();
            return (next.clone(), next);
        }
        let eps = self.noise(rng);
        let next = (0..x.len())
            .map(|j| x[j] + p.kappa_d1[j] * (TREATED_TARGET - x[j]) + eps[j])
            .collect();
        let eps0 = self.noise(rng);
        let from = match p.counterfactual_rule {
            CounterfactualRule::SelfConsistent => x0,
            CounterfactualRule::ObservedState => x,
        };
        let next0 = (0..x.len()).map(|j| p.kappa_d0[j] * from[j] + eps0[j]).collect();
        (next, next0)
    }

    /// Probability that an untreated subject in state `x` starts treatment.
    pub fn treatment_probability(&self, x: &[f64]) -> f64 {
        let p = &self.params;
        let load: f64 = p.lambda.iter().sum();
        let index: f64 = p.lambda.iter().zip(x).map(|(l, v)| l * v).sum();
        let prob = p.m * load * index.exp();
        if prob.is_nan() {
            return 0.0;
        }
        prob.clamp(0.0, 1.0)
    }

    pub fn draw_treatment<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> bool {
        let prob = self.treatment_probability(x);
        rng.random::<f64>() < prob
    }

    /// Event count on one unit-free interval under a fixed state.
    pub fn draw_events<R: Rng + ?Sized>(
        &self,
        treated: bool,
        z: &[f64],
        x: &[f64],
        interval: (f64, f64),
        rng: &mut R,
    ) -> Result<u64> {
        let mu = self.intensity.rate(treated, z, x);
        Ok(thinning_sample(|_| mu, interval, mu, rng, self.params.event_cap, false)?.count)
    }

    fn simulate_subject<R: Rng + ?Sized>(&self, id: u64, rng: &mut R) -> Result<SubjectRecord> {
        let p = &self.params;
        let d = p.d_x();
        let k_max = p.horizon;
        let baseline = self.draw_baseline(rng);
        let mut x: Vec<f64> = (0..d)
            .map(|j| p.min_x[j] + (p.max_x[j] - p.min_x[j]) * rng.random::<f64>())
            .collect();
        let mut x0 = x.clone();
        let mut covariates = DMatrix::zeros(k_max + 1, d);
        let mut counterfactuals = DMatrix::zeros(k_max + 1, d);
        let mut event_counts = Vec::with_capacity(k_max);
        let mut treatment_start = None;
        for t in 0..k_max {
            for j in 0..d {
                covariates[(t, j)] = x[j];
                counterfactuals[(t, j)] = x0[j];
            }
            let treated = treatment_start.is_some();
            event_counts.push(self.draw_events(treated, &baseline, &x, (t as f64, t as f64 + 1.0), rng)?);
            let (next, next0) = self.step_covariates(&x, &x0, treated, rng);
            if !treated && self.draw_treatment(&x, rng) {
                treatment_start = Some(t + 1);
            }
            x = next;
            x0 = next0;
        }
        for j in 0..d {
            covariates[(k_max, j)] = x[j];
            counterfactuals[(k_max, j)] = x0[j];
        }
        Ok(SubjectRecord {
            id,
            baseline,
            covariates,
            treatment_start,
            event_counts,
            follow_up_end: k_max,
            counterfactuals: Some(counterfactuals),
        })
    }

    /// Simulates `params.n` subjects (ids `1..=n`) from one stream.
    pub fn simulate_with<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PanelDataset> {
        let subjects = (1..=self.params.n as u64)
            .map(|id| self.simulate_subject(id, rng))
            .collect::<Result<Vec<_>>>()?;
        PanelDataset::new(self.params.grid(), BASELINE_DIM, self.params.d_x(), subjects)
    }
}

/// Stream used by [`simulate_cohort`] and by replicate `r` of a run.
pub fn cohort_stream(seed: u64, label: &str, index: u64) -> StreamRng {
    rng::stream(seed, label, index)
}

/// Simulates one cohort from the `("simulate", 0)` stream of `params.seed`.
pub fn simulate_cohort(params: &SimParams) -> Result<PanelDataset> {
    let sim = CohortSimulator::new(params.clone())?;
    let mut rng = cohort_stream(params.seed, "simulate", 0);
    sim.simulate_with(&mut rng)
}
