//! Simulate one cohort from a built-in scenario and summarise treatment
//! uptake and event counts per interval.
//!
//! ```sh
//! cargo run --release --example simulate_cohort -- paper-3cov 2000
//! ```

use debiased_att::{simulate_cohort, SimParams};

fn main() -> debiased_att::Result<()> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "paper-1cov".into());
    let mut params = SimParams::preset(&preset)?;
    if let Some(n) = args.next() {
        params.set("n", &n)?;
    }
    let panel = simulate_cohort(&params)?;

    println!("{preset}: {} subjects, {} covariate(s)", panel.len(), panel.d_x());
    println!("{:>3} {:>9} {:>12} {:>10}", "k", "treated", "mean events", "mean X1");
    for k in 0..panel.grid().intervals() {
        let treated = panel.subjects().iter().filter(|s| s.treated_at(k)).count();
        let events: u64 = panel.subjects().iter().map(|s| s.events(k)).sum();
        let x1: f64 = panel.subjects().iter().map(|s| s.covariates[(k, 0)]).sum();
        let n = panel.len() as f64;
        println!("{k:>3} {treated:>9} {:>12.3} {:>10.3}", events as f64 / n, x1 / n);
    }
    Ok(())
}
