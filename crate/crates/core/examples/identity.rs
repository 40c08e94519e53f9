// Uses identity labels as an alternative ground truth: two items are a
// positive pair exactly when they share an identity.
//
// ```bash
// cargo run -p eds-core --example identity
// ```

use eds_core::corpus::identity_ground_truth;
use eds_core::metrics::{evaluate, EvalConfig};
use eds_core::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> eds_core::Result<()> {
    let syn = generate(&SyntheticConfig {
        num_items: 400,
        num_queries: 20,
        ..SyntheticConfig::default()
    })?;
    let gt = identity_ground_truth(&syn.corpus)?;
    println!(
        "identity labels: {} pairs, {} positive ({:?})",
        gt.len(),
        gt.num_positives(),
        gt.source()
    );
    for model in &syn.models {
        let r = evaluate(model, &syn.corpus, &gt, &EvalConfig::default(), &[])?;
        println!(
            "{:<6} HR@1 {:.3}  HR@5 {:.3}  MRR@9 {:.3}  macro ROC-AUC {:.4}",
            r.model,
            r.hr[&1],
            r.hr[&5],
            r.mrr[&9],
            r.roc_auc_macro.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}

fn main() -> eds_core::Result<()> {
    run_example()
}
