// The state behind the annotation service: batches handed to experts, votes
// appended to a durable log, progress, and recovery by replaying the log.
//
// ```bash
// cargo run -p eds-core --example annotation_store
// ```

use chrono::{Duration, TimeZone, Utc};
use eds_core::annotation::ExpertId;
use eds_core::discovery::{build_suspects_per_model, union_dedupe};
use eds_core::service::AnnotationStore;
use eds_core::synthetic::{generate, SyntheticConfig};

pub fn run_example() -> eds_core::Result<()> {
    let syn = generate(&SyntheticConfig {
        num_items: 200,
        num_queries: 5,
        ..SyntheticConfig::default()
    })?;
    let per_model = syn
        .models
        .iter()
        .map(|m| build_suspects_per_model(m, &syn.corpus, 3))
        .collect::<eds_core::Result<Vec<_>>>()?;
    let suspects = union_dedupe(&per_model)?;
    let experts = ["alice", "bob"]
        .into_iter()
        .map(ExpertId::new)
        .collect::<eds_core::Result<Vec<_>>>()?;

    let dir = std::env::temp_dir().join(format!("eds-store-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|source| eds_core::Error::Io { path: dir.clone(), source })?;
    let log = dir.join("votes.jsonl");

    let mut clock = Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap();
    {
        let mut store = AnnotationStore::open(&suspects, experts.clone(), &log)?.with_snapshots_every(10);
        // Alice works through everything; Bob only gets through one batch.
        for (expert, rounds) in [(&experts[0], usize::MAX), (&experts[1], 1)] {
            for _ in 0..rounds {
                let batch = store.next_batch(expert, 4)?;
                if batch.pairs.is_empty() {
                    break;
                }
                for task in &batch.pairs {
                    let pair = store.pair(task.pair_id).cloned().expect("dispatched pair exists");
                    let label = i64::from(syn.is_positive(&pair));
                    clock += Duration::seconds(5);
                    store.submit_vote(expert, task.pair_id, label, clock)?;
                }
            }
        }
        let p = store.progress();
        println!(
            "{} pairs, {} fully reviewed, running p_k {:.3}",
            p.total_pairs, p.fully_reviewed, p.running_p_k
        );
        for (expert, done) in &p.per_expert_done {
            println!("  {expert}: {done} votes");
        }
        let next = store.next_batch(&experts[1], 2)?;
        for t in &next.pairs {
            println!("bob next: #{} {} vs {} ({})", t.pair_id, t.query, t.candidate, t.candidate_image_url);
        }
    }

    // A fresh process rebuilds everything from the log alone.
    let store = AnnotationStore::open(&suspects, experts, &log)?;
    let p = store.progress();
    println!("after replay: {} votes, {} fully reviewed", p.votes_logged, p.fully_reviewed);
    let gt = store.ground_truth();
    println!("resolved {} pairs, {} positive", gt.len(), gt.num_positives());
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

fn main() -> eds_core::Result<()> {
    run_example()
}
