//! Command-line front end: `simulate`, `fit-var`, `estimate`, `benchmark`
//! and `report`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
//! failure (including too many failed replicates).

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::additive::{
    cumulative_effects, fit, fit_debiased_with, CoefficientPaths, Correction, EstimatorKind,
    FallbackPolicy, PadSign,
};
use crate::bench::{
    format_table, read_summary_csv, run_benchmark, write_replicates_csv, write_summary_csv,
    BenchmarkConfig,
};
use crate::error::{Error, Result};
use crate::panel::{load_panel, write_panel, CovariateSource, PanelSchema};
use crate::sim::{cohort_stream, CohortSimulator, SimParams};
use crate::var::{error_covariance, error_covariance_from, fit_var, forecast_panel, VarModel};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "debiased-att", version, about = "Debiased ATT estimation with forecast counterfactuals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate cohorts and write one panel CSV per replicate.
    Simulate(Common),
    /// Fit the VAR(1) counterfactual model on a panel.
    FitVar(PanelArgs),
    /// Fit the selected estimators on a panel.
    Estimate(PanelArgs),
    /// Replicated MISE comparison against a Monte-Carlo truth.
    Benchmark(BenchArgs),
    /// Render the text table from a benchmark summary CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Built-in scenario (paper-1cov, paper-3cov, paper-6cov).
    #[arg(long)]
    pub preset: Option<String>,
    /// Scenario file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Parameter override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Comma-separated estimator list.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// Indefinite corrected Gram handling: psd-floor, ridge:<λ> or fail.
    #[arg(long, default_value = "psd-floor")]
    pub fallback: String,
    /// Sign of the bias pad in the corrected Gram: add or subtract.
    #[arg(long, default_value = "add")]
    pub pad_sign: String,
}

#[derive(Debug, Args)]
pub struct PanelArgs {
    /// Panel CSV.
    #[arg(long)]
    pub panel: PathBuf,
    /// Previously fitted VAR model file (estimate only).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Noise levels to sweep; each sets `sigma`.
    #[arg(long, value_delimiter = ',')]
    pub sigmas: Option<Vec<String>>,
    /// Cohorts pooled for the Monte-Carlo truth.
    #[arg(long, default_value_t = 100)]
    pub truth_reps: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Benchmark summary CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidParameter(_) | Error::UnknownKey(_) => EXIT_CONFIG,
        Error::RankDeficient(_)
        | Error::SingularInterval { .. }
        | Error::SingularSystem(_)
        | Error::ThinningBound { .. }
        | Error::EventCap { .. }
        | Error::TooManyFailures { .. } => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code. Errors go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => cmd_simulate(&c),
        Command::FitVar(a) => cmd_fit_var(&a),
        Command::Estimate(a) => cmd_estimate(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

/// Scenario from `--config` or `--preset` (default `paper-1cov`), then
/// `--set` overrides and `--seed`.
pub fn scenario(common: &Common) -> Result<(String, SimParams)> {
    let (name, mut params) = match (&common.config, &common.preset) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidParameter("use either --preset or --config".into()))
        }
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let name = path.file_stem().map_or("config".into(), |s| s.to_string_lossy().into_owned());
            (name, SimParams::from_config(&text)?)
        }
        (None, preset) => {
            let name = preset.clone().unwrap_or_else(|| "paper-1cov".into());
            let params = SimParams::preset(&name)?;
            (name, params)
        }
    };
    for kv in &common.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidParameter(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        params.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        params.seed = seed;
    }
    params.validate()?;
    Ok((name, params))
}

fn correction(common: &Common) -> Result<Correction> {
    Ok(Correction {
        sign: common.pad_sign.parse::<PadSign>()?,
        fallback: common.fallback.parse::<FallbackPolicy>()?,
    })
}

fn estimators(common: &Common) -> Result<Option<Vec<EstimatorKind>>> {
    common
        .estimators
        .as_ref()
        .map(|list| list.iter().map(|s| s.parse()).collect())
        .transpose()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>> {
    Ok(std::io::BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn params_json(params: &SimParams) -> Value {
    Value::Object(params.to_pairs().into_iter().map(|(k, v)| (k, Value::String(v))).collect())
}

fn write_manifest(dir: &Path, mut manifest: Value) -> Result<()> {
    manifest["version"] = json!(env!("CARGO_PKG_VERSION"));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write_file(&dir.join("manifest.json"), text + "\n")
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(j) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?
            .install(f)),
    }
}

/// Writes `panel_rep<r>.csv` for `r = 0..reps`, replicate `r` drawn from
/// the `("replicate", r)` stream of the seed.
pub fn cmd_simulate(common: &Common) -> Result<()> {
    let (name, params) = scenario(common)?;
    if common.reps == 0 {
        return Err(Error::InvalidParameter("--reps must be at least 1".into()));
    }
    ensure_dir(&common.out)?;
    let sim = CohortSimulator::new(params.clone())?;
    let files: Vec<String> = with_pool(common.jobs, || {
        (0..common.reps)
            .into_par_iter()
            .map(|r| {
                let panel = sim.simulate_with(&mut cohort_stream(params.seed, "replicate", r as u64))?;
                let file = format!("panel_rep{r}.csv");
                write_panel(&panel, common.out.join(&file))?;
                Ok(file)
            })
            .collect::<Result<_>>()
    })??;
    write_manifest(
        &common.out,
        json!({
            "command": "simulate",
            "scenario": name,
            "seed": params.seed,
            "reps": common.reps,
            "streams": "replicate/<r>",
            "params": params_json(&params),
            "files": files,
        }),
    )?;
    println!("wrote {} panel(s) to {}", files.len(), common.out.display());
    Ok(())
}

pub fn cmd_fit_var(args: &PanelArgs) -> Result<()> {
    let panel = load_panel(&args.panel, &PanelSchema::default())?;
    let model = fit_var(&panel)?;
    ensure_dir(&args.common.out)?;
    model.save(args.common.out.join("var_model.txt"))?;
    write_manifest(
        &args.common.out,
        json!({
            "command": "fit-var",
            "panel": args.panel.display().to_string(),
            "n_obs": model.n_obs,
            "dof": model.dof,
            "files": ["var_model.txt"],
        }),
    )?;
    print!("{}", model.to_text());
    Ok(())
}

fn write_paths(dir: &Path, paths: &CoefficientPaths) -> Result<Vec<String>> {
    let label = paths.estimator.label();
    let coef = format!("coef_{label}.csv");
    let cumulative = format!("cumulative_{label}.csv");
    let averages = format!("averages_{label}.csv");
    let mut w = create_file(&dir.join(&coef))?;
    paths
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(dir.join(&coef), e))?;
    let mut w = create_file(&dir.join(&cumulative))?;
    cumulative_effects(paths)
        .write_csv(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(dir.join(&cumulative), e))?;
    let mut text = String::from("estimator,coef_name,time_average\n");
    for (name, v) in paths.names.iter().zip(paths.time_averages()) {
        let v = v.map_or_else(|| "NA".to_string(), |v| v.to_string());
        text.push_str(&format!("{label},{name},{v}\n"));
    }
    write_file(&dir.join(&averages), text)?;
    Ok(vec![coef, cumulative, averages])
}

/// Fits the selected estimators and writes coefficient, cumulative and
/// time-average CSVs per estimator, plus the VAR model when forecasts are
/// used.
pub fn cmd_estimate(args: &PanelArgs) -> Result<()> {
    let common = &args.common;
    let correction = correction(common)?;
    let requested = estimators(common)?;
    let panel = load_panel(&args.panel, &PanelSchema::default())?;
    let selected = match requested {
        Some(list) => list,
        None => {
            let mut list = vec![EstimatorKind::Naive, EstimatorKind::Uncorrected, EstimatorKind::Debiased];
            if panel.has_counterfactuals() {
                list.insert(0, EstimatorKind::Oracle);
            }
            list
        }
    };
    ensure_dir(&common.out)?;
    let mut files = Vec::new();
    let needs_forecast = selected.iter().any(|e| {
        matches!(e, EstimatorKind::Uncorrected | EstimatorKind::Debiased | EstimatorKind::DebiasedTrue)
    });
    let model = match (&args.model, needs_forecast) {
        (Some(path), true) => Some(VarModel::load(path)?),
        (None, true) => {
            let model = fit_var(&panel)?;
            model.save(common.out.join("var_model.txt"))?;
            files.push("var_model.txt".to_string());
            Some(model)
        }
        (_, false) => None,
    };
    let forecasts = model.as_ref().map(|m| forecast_panel(m, &panel)).transpose()?;
    let horizon = panel.grid().intervals();
    let mut scenario_used = None;
    for &estimator in &selected {
        let paths = match estimator {
            EstimatorKind::Naive => fit(&panel, CovariateSource::Observed)?,
            EstimatorKind::Oracle => fit(&panel, CovariateSource::TrueCounterfactual)?,
            EstimatorKind::Uncorrected => fit(
                &panel,
                CovariateSource::ForecastCounterfactual(forecasts.as_ref().expect("forecasts fitted")),
            )?,
            EstimatorKind::Debiased => {
                let errors = error_covariance(model.as_ref().expect("model fitted"), horizon);
                fit_debiased_with(&panel, forecasts.as_ref().expect("forecasts fitted"), &errors, correction, estimator)?
            }
            EstimatorKind::DebiasedTrue => {
                if common.preset.is_none() && common.config.is_none() {
                    return Err(Error::InvalidParameter(
                        "debiased-true needs the generator parameters (--preset or --config)".into(),
                    ));
                }
                let (name, params) = scenario(common)?;
                if params.d_x() != panel.d_x() {
                    return Err(Error::InvalidParameter(format!(
                        "scenario has {} covariates, panel {}",
                        params.d_x(),
                        panel.d_x()
                    )));
                }
                let errors = error_covariance_from(&params.transition(), &params.sigma, horizon);
                scenario_used = Some((name, params));
                fit_debiased_with(&panel, forecasts.as_ref().expect("forecasts fitted"), &errors, correction, estimator)?
            }
            EstimatorKind::Candidate => {
                return Err(Error::InvalidParameter("candidate is not an estimator".into()))
            }
        };
        files.extend(write_paths(&common.out, &paths)?);
        println!(
            "{estimator}: {} intervals, {} with fallback",
            paths.intervals(),
            paths.fallback.iter().filter(|f| **f).count()
        );
    }
    write_manifest(
        &common.out,
        json!({
            "command": "estimate",
            "panel": args.panel.display().to_string(),
            "model": args.model.as_ref().map(|p| p.display().to_string()),
            "estimators": selected.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
            "fallback": correction.fallback.to_string(),
            "pad_sign": correction.sign.to_string(),
            "scenario": scenario_used.as_ref().map(|(n, _)| n.clone()),
            "params": scenario_used.as_ref().map(|(_, p)| params_json(p)),
            "files": files,
        }),
    )
}

fn table_estimators(common: &Common) -> Result<Vec<EstimatorKind>> {
    Ok(estimators(common)?.unwrap_or_else(|| EstimatorKind::FITTED.to_vec()))
}

/// Runs the benchmark for each noise level and writes
/// `benchmark_replicates.csv`, `benchmark_summary.csv`,
/// `benchmark_table.txt` and the manifest. Timing goes to stdout only.
pub fn cmd_benchmark(args: &BenchArgs) -> Result<()> {
    let common = &args.common;
    let (name, base) = scenario(common)?;
    let columns = table_estimators(common)?;
    let correction = correction(common)?;
    if common.reps == 0 {
        return Err(Error::InvalidParameter("--reps must be at least 1".into()));
    }
    let levels: Vec<Option<String>> = match &args.sigmas {
        Some(list) => list.iter().cloned().map(Some).collect(),
        None => vec![None],
    };
    let mut scenarios = Vec::new();
    let mut results = Vec::new();
    for level in &levels {
        let mut params = base.clone();
        if let Some(s) = level {
            params.set("sigma", s)?;
            params.validate()?;
        }
        let mut config = BenchmarkConfig::new(name.clone(), params.clone(), common.reps);
        config.truth_reps = args.truth_reps;
        config.correction = correction;
        config.jobs = common.jobs;
        let result = run_benchmark(&config)?;
        println!(
            "{name} sigma={}: {} reps, {} failed, {:.2?}",
            result.sigma.map_or("matrix".into(), |s| s.to_string()),
            result.reps,
            result.failed_replicates,
            result.runtime
        );
        scenarios.push(params_json(&params));
        results.push(result);
    }
    ensure_dir(&common.out)?;
    let path = common.out.join("benchmark_replicates.csv");
    let mut w = create_file(&path)?;
    write_replicates_csv(&results, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&path, e))?;
    let rows: Vec<_> = results.iter().flat_map(|r| r.summary_rows()).collect();
    write_summary_csv(&rows, create_file(&common.out.join("benchmark_summary.csv"))?)?;
    let table = format_table(&rows, &columns);
    write_file(&common.out.join("benchmark_table.txt"), &table)?;
    print!("{table}");
    write_manifest(
        &common.out,
        json!({
            "command": "benchmark",
            "scenario": name,
            "seed": base.seed,
            "reps": common.reps,
            "truth_reps": args.truth_reps,
            "streams": {"replicates": "replicate/<r>", "truth": "truth/<r>"},
            "sigmas": levels,
            "fallback": correction.fallback.to_string(),
            "pad_sign": correction.sign.to_string(),
            "params": scenarios,
            "files": ["benchmark_replicates.csv", "benchmark_summary.csv", "benchmark_table.txt"],
        }),
    )
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let file = fs::File::open(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let rows = read_summary_csv(file)?;
    let table = format_table(&rows, &table_estimators(&args.common)?);
    ensure_dir(&args.common.out)?;
    write_file(&args.common.out.join("benchmark_table.txt"), &table)?;
    print!("{table}");
    Ok(())
}
