//! Replicated comparison of the five estimators over a grid of noise levels.
//!
//! ```sh
//! cargo run --release --example benchmark -- 100 0.4 0.8 1.2 1.6 n=1000
//! ```

use debiased_att::additive::EstimatorKind;
use debiased_att::bench::{format_table, run_benchmark, BenchmarkConfig};
use debiased_att::SimParams;

fn main() -> debiased_att::Result<()> {
    let mut args = std::env::args().skip(1);
    let reps: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(20);
    let (sets, mut sigmas): (Vec<String>, Vec<String>) = args.partition(|a| a.contains('='));
    if sigmas.is_empty() {
        sigmas = vec!["0.4".into(), "1.6".into()];
    }
    let mut results = Vec::new();
    for sigma in &sigmas {
        let mut params = SimParams::preset("paper-1cov")?;
        for kv in &sets {
            let (k, v) = kv.split_once('=').expect("partitioned on '='");
            params.set(k, v)?;
        }
        params.set("sigma", sigma)?;
        let result = run_benchmark(&BenchmarkConfig::new("paper-1cov", params, reps))?;
        eprintln!("sigma {sigma}: {:.1?}", result.runtime);
        for c in &result.comparisons {
            eprintln!("  debiased vs {:<13} p = {:.3e}", c.other.to_string(), c.test.p_value);
        }
        results.push(result);
    }
    let rows: Vec<_> = results.iter().flat_map(|r| r.summary_rows()).collect();
    print!("{}", format_table(&rows, &EstimatorKind::FITTED));
    Ok(())
}
