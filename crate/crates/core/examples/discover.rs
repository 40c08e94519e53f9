// Builds a suspect set from a three-model ensemble and reports how much the
// models overlap and what EDS saves over brute-force labeling.
//
// ```bash
// cargo run -p eds-core --example discover
// ```

use eds_core::discovery::{build_suspects_per_model, cost_report, duplication_stats, overlap_matrix, union_dedupe};
use eds_core::formats::{read_suspects, write_suspects};
use eds_core::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> eds_core::Result<()> {
    let syn = generate(&SyntheticConfig::default())?;
    let k = 6;

    let per_model = syn
        .models
        .iter()
        .map(|m| build_suspects_per_model(m, &syn.corpus, k))
        .collect::<eds_core::Result<Vec<_>>>()?;
    let suspects = union_dedupe(&per_model)?;
    println!(
        "{} queries, {} models, k = {k}: {} suspect pairs (at most {})",
        suspects.queries().len(),
        suspects.models().len(),
        suspects.len(),
        suspects.upper_bound()
    );

    let first = &suspects.pairs()[0];
    let by: Vec<String> = first.proposers.iter().map(|p| format!("{} at rank {}", p.model, p.rank)).collect();
    println!("first pair {} proposed by {}", first.pair, by.join(", "));

    let overlap = overlap_matrix(&suspects)?;
    for (name, row) in overlap.models.iter().zip(&overlap.values) {
        let cells: Vec<String> = row
            .iter()
            .map(|v| v.map_or("-".into(), |x| format!("{x:5.1}")))
            .collect();
        println!("overlap {name:>6}: {}", cells.join(" "));
    }
    let dup = duplication_stats(&suspects)?;
    println!(
        "avg {:.1} candidates per query of {} nominal, duplication rate {:.1}%",
        dup.avg_candidates_per_query,
        dup.per_model_cap * suspects.models().len(),
        100.0 * dup.duplication_rate
    );

    let cost = cost_report(&syn.corpus, &suspects, syn.positive_rate())?;
    println!(
        "brute force {} labels, EDS {} labels, speedup {:.0}x",
        cost.brute_force_ops, cost.eds_ops, cost.speedup
    );

    let planted_found = suspects.pairs().iter().filter(|p| syn.is_positive(&p.pair)).count();
    println!(
        "suspects contain {planted_found} of {} planted positives",
        syn.planted().len()
    );

    let dir = std::env::temp_dir().join(format!("eds-discover-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|source| eds_core::Error::Io { path: dir.clone(), source })?;
    let path = dir.join("suspects.jsonl");
    write_suspects(&path, &suspects)?;
    let back = read_suspects(&path, Some(k))?;
    assert_eq!(back.pairs(), suspects.pairs());
    println!("round-tripped {} pairs through {}", back.len(), path.display());
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

fn main() -> eds_core::Result<()> {
    run_example()
}
