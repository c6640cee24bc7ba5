//! Fit the naive, oracle, uncorrected and debiased estimators on one
//! simulated cohort and print the cumulative treatment effect of each.

use debiased_att::panel::CovariateSource;
use debiased_att::var::forecast_panel;
use debiased_att::{cumulative_effects, fit, fit_debiased, fit_var, simulate_cohort, Correction, SimParams};

fn main() -> debiased_att::Result<()> {
    let mut params = SimParams::preset("paper-1cov")?;
    params.set("sigma", "1.6")?;
    let panel = simulate_cohort(&params)?;
    let model = fit_var(&panel)?;
    let forecasts = forecast_panel(&model, &panel)?;

    let fits = [
        fit(&panel, CovariateSource::Observed)?,
        fit(&panel, CovariateSource::TrueCounterfactual)?,
        fit(&panel, CovariateSource::ForecastCounterfactual(&forecasts))?,
        fit_debiased(&panel, &model, Correction::default())?,
    ];

    print!("{:>3}", "k");
    for f in &fits {
        print!(" {:>12}", f.estimator.label());
    }
    println!();
    let curves: Vec<Vec<f64>> = fits
        .iter()
        .map(|f| cumulative_effects(f).column(f.treatment_index()))
        .collect();
    for k in 0..curves[0].len() {
        print!("{k:>3}");
        for c in &curves {
            print!(" {:>12.4}", c[k]);
        }
        println!();
    }
    Ok(())
}
