//! Paired signed-rank test: normal approximation next to the exact
//! conditional distribution.

use debiased_att::stats::{wilcoxon_exact_p, wilcoxon_signed_rank};

fn main() -> debiased_att::Result<()> {
    let corrected = [0.031, 0.029, 0.052, 0.018, 0.040, 0.022, 0.047, 0.035, 0.026, 0.038, 0.044, 0.030];
    let uncorrected = [0.045, 0.030, 0.061, 0.025, 0.039, 0.031, 0.058, 0.041, 0.027, 0.049, 0.044, 0.036];
    let r = wilcoxon_signed_rank(&corrected, &uncorrected)?;
    println!("W+ = {}, z = {:.3}, pairs used = {}", r.statistic, r.z, r.n_used);
    println!("p (normal) = {:.4}", r.p_value);
    println!("p (exact)  = {:.4}", wilcoxon_exact_p(&corrected, &uncorrected)?);
    Ok(())
}
