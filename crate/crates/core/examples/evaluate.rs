// Scores each model of an ensemble against labels resolved on the suspect
// set, first with the annotated hard negatives and then with negatives
// sampled from a window further down each ranking.
//
// ```bash
// cargo run -p eds-core --example evaluate
// ```

use eds_core::discovery::{build_suspects_per_model, union_dedupe};
use eds_core::metrics::{evaluate, EvalConfig, HitAveraging, NegativeSource, SamplingConfig};
use eds_core::synthetic::{generate, SyntheticConfig};

fn fmt(v: Option<f64>) -> String {
    v.map_or("   n/a".into(), |x| format!("{x:6.3}"))
}

pub fn run_example() -> eds_core::Result<()> {
    let syn = generate(&SyntheticConfig::default())?;
    let per_model = syn
        .models
        .iter()
        .map(|m| build_suspects_per_model(m, &syn.corpus, 6))
        .collect::<eds_core::Result<Vec<_>>>()?;
    let suspects = union_dedupe(&per_model)?;
    // The planted labels stand in for resolved expert votes.
    let gt = syn.truth_on(suspects.pairs().iter().map(|p| &p.pair));

    let regimes = [
        ("annotated", NegativeSource::Annotated),
        (
            "sampled",
            NegativeSource::Sampled(SamplingConfig {
                window_lo: 50,
                window_hi: 200,
                count: 5,
                ..SamplingConfig::default()
            }),
        ),
    ];
    for (label, negatives) in regimes {
        println!("{label} negatives");
        println!("  model    HR@1   HR@5  MRR@5  ROC-mi ROC-ma  PR-mi  PR-ma");
        for model in &syn.models {
            let config = EvalConfig {
                ks: vec![1, 5],
                negatives: negatives.clone(),
                hit_averaging: HitAveraging::PerPair,
            };
            let r = evaluate(model, &syn.corpus, &gt, &config, &syn.models)?;
            println!(
                "  {:<6} {:6.3} {:6.3} {:6.3} {} {} {} {}",
                r.model,
                r.hr[&1],
                r.hr[&5],
                r.mrr[&5],
                fmt(r.roc_auc_micro),
                fmt(r.roc_auc_macro),
                fmt(r.pr_auc_micro),
                fmt(r.pr_auc_macro)
            );
        }
    }

    let per_query = evaluate(
        &syn.models[0],
        &syn.corpus,
        &gt,
        &EvalConfig {
            hit_averaging: HitAveraging::PerQuery,
            ..EvalConfig::default()
        },
        &[],
    )?;
    println!(
        "{} HR@5 averaged per query: {:.3} over {} queries ({} skipped)",
        per_query.model, per_query.hr[&5], per_query.queries_evaluated, per_query.queries_skipped
    );
    Ok(())
}

fn main() -> eds_core::Result<()> {
    run_example()
}
