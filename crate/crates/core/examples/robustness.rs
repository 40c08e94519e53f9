// Leave-one-out robustness: drops the pairs that only one generator proposed,
// re-evaluates every model, and checks that the model ranking holds.
//
// ```bash
// cargo run -p eds-core --example robustness
// ```

use eds_core::discovery::{build_suspects_per_model, union_dedupe};
use eds_core::robustness::{loo_report, LooConfig, PermutationMode};
use eds_core::synthetic::{generate, SyntheticConfig, SyntheticModel};

pub fn run_example() -> eds_core::Result<()> {
    let syn = generate(&SyntheticConfig {
        num_items: 800,
        num_queries: 40,
        models: vec![
            SyntheticModel::new("vit", 0.2),
            SyntheticModel::new("clip", 0.5),
            SyntheticModel::new("resnet", 0.9),
            SyntheticModel::new("dino", 0.35),
        ],
        ..SyntheticConfig::default()
    })?;
    let per_model = syn
        .models
        .iter()
        .map(|m| build_suspects_per_model(m, &syn.corpus, 6))
        .collect::<eds_core::Result<Vec<_>>>()?;
    let suspects = union_dedupe(&per_model)?;
    let gt = syn.truth_on(suspects.pairs().iter().map(|p| &p.pair));

    let config = LooConfig {
        permutation: PermutationMode::Exact,
    };
    let report = loo_report(&syn.corpus, &syn.models, &suspects, &gt, &config)?;

    print!("{:<14}", "subset");
    for m in &report.models {
        print!("{m:>9}");
    }
    println!("{:>8}{:>9}", "SC", "p");
    print!("{:<14}", "full");
    for m in &report.models {
        print!("{:>9.3}", report.full[m].macro_.unwrap_or(f64::NAN));
    }
    println!();
    for sub in &report.per_subset {
        print!("{:<14}", format!("-{} ({})", sub.excluded_model, sub.num_pairs));
        for m in &report.models {
            print!("{:>9.3}", sub.cells[m].macro_.unwrap_or(f64::NAN));
        }
        println!(
            "{:>8.3}{:>9.4}",
            sub.spearman_macro.sc.unwrap_or(f64::NAN),
            sub.spearman_macro.p_value.unwrap_or(f64::NAN)
        );
    }
    for (m, s) in &report.summary {
        if let Some(ms) = s.macro_ {
            println!("{m}: macro AUC {:.3} +/- {:.3} across subsets", ms.mean, ms.std);
        }
    }
    println!("ranking on full labels: {:?}", report.ranking(None).unwrap_or_default());
    Ok(())
}

fn main() -> eds_core::Result<()> {
    run_example()
}
