//! Fit the VAR(1) on untreated person-time, forecast one treated subject's
//! counterfactual path and compare it with the simulated truth.

use debiased_att::var::{error_covariance, forecast_counterfactuals};
use debiased_att::{fit_var, simulate_cohort, SimParams};

fn main() -> debiased_att::Result<()> {
    let params = SimParams::preset("paper-1cov")?;
    let panel = simulate_cohort(&params)?;
    let model = fit_var(&panel)?;
    print!("{}", model.to_text());

    let errors = error_covariance(&model, params.horizon);
    for l in 1..=4 {
        println!("Σ̂({l}) = {:.4}", errors.get(l).expect("horizon in range")[(0, 0)]);
    }

    let subject = panel
        .subjects()
        .iter()
        .find(|s| s.treatment_start.is_some_and(|s| s >= 2))
        .expect("some subject starts treatment after t = 1");
    let path = forecast_counterfactuals(&model, subject)?;
    let truth = subject.counterfactuals.as_ref().expect("simulated panels carry X0");
    println!("subject {} treated from k = {}", subject.id, path.start);
    println!("{:>3} {:>4} {:>10} {:>10} {:>10}", "k", "l", "observed", "forecast", "true X0");
    for k in path.start..=path.end() {
        println!(
            "{k:>3} {:>4} {:>10.3} {:>10.3} {:>10.3}",
            path.steps(k).expect("k on path"),
            subject.covariates[(k, 0)],
            path.value(k).expect("k on path")[0],
            truth[(k, 0)]
        );
    }
    Ok(())
}
