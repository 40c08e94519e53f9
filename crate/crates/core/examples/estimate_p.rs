// Estimates the positive rate of a pair universe: a lower bound from the
// positives EDS found, a MAP estimate from a random sample, and the Chebyshev
// budget needed for a target error.
//
// ```bash
// cargo run -p eds-core --example estimate_p
// ```

use std::collections::HashSet;

use eds_core::annotation::{budget_report, chebyshev_budget, estimate_p, lower_bound_p, sample_random_pairs};
use eds_core::discovery::{build_suspects_per_model, union_dedupe};
use eds_core::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> eds_core::Result<()> {
    let syn = generate(&SyntheticConfig {
        num_items: 2_000,
        num_queries: 100,
        positives_per_query: 4,
        ..SyntheticConfig::default()
    })?;
    let per_model = syn
        .models
        .iter()
        .map(|m| build_suspects_per_model(m, &syn.corpus, 6))
        .collect::<eds_core::Result<Vec<_>>>()?;
    let suspects = union_dedupe(&per_model)?;
    let found = suspects.pairs().iter().filter(|p| syn.is_positive(&p.pair)).count() as u64;
    let p_lb = lower_bound_p(found, &syn.corpus)?;
    println!("EDS found {found} positives: p_lb = {p_lb:.6}");

    let (epsilon, q) = (0.01, 0.05);
    let b = chebyshev_budget(epsilon, q)?;
    let sample = sample_random_pairs(&syn.corpus, &HashSet::new(), b as usize, 2024)?;
    let a = sample.pairs.iter().filter(|p| syn.is_positive(p)).count() as u64;
    let est = estimate_p(a, b, p_lb)?.with_error_bound(epsilon, q)?;
    println!(
        "random sample: {a} positives in {b} draws (seed {}) -> p_hat = {:.6}",
        sample.seed, est.p_hat
    );
    println!("true planted rate {:.6}", syn.positive_rate());

    let report = budget_report(epsilon, q, Some(est.p_hat), None)?;
    println!(
        "epsilon {epsilon}, q {q}: budget {} labels, bound {:.4}{}",
        report.budget,
        report.bound.unwrap_or(f64::NAN),
        if report.vacuous == Some(true) { " (vacuous)" } else { "" }
    );

    // The figures from a 52,712-image catalog with 2,000 queries.
    let reported = estimate_p(2, 2000, 0.00045)?;
    println!("2 positives in 2,000 draws over p_lb 0.00045 -> p_hat = {}", reported.p_hat);
    Ok(())
}

fn main() -> eds_core::Result<()> {
    run_example()
}
