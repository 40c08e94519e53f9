// Three experts vote on suspect pairs, one changes their mind, and the votes
// resolve by strict majority with ties going negative.
//
// ```bash
// cargo run -p eds-core --example annotate_and_resolve
// ```

use chrono::{Duration, TimeZone, Utc};
use eds_core::annotation::{ExpertId, Vote, VoteBook};
use eds_core::corpus::{ItemId, Pair};

pub fn run_example() -> eds_core::Result<()> {
    let pair = |q: &str, c: &str| -> eds_core::Result<Pair> { Ok(Pair::new(ItemId::new(q)?, ItemId::new(c)?)) };
    let pairs = vec![
        pair("dress_01", "dress_17")?,
        pair("dress_01", "dress_42")?,
        pair("shoe_03", "shoe_09")?,
        pair("shoe_03", "bag_11")?,
    ];
    let experts = ["alice", "bob", "carol"]
        .into_iter()
        .map(ExpertId::new)
        .collect::<eds_core::Result<Vec<_>>>()?;
    let mut book = VoteBook::new(pairs.clone(), experts.clone())?;

    let start = Utc.with_ymd_and_hms(2024, 5, 1, 9, 0, 0).unwrap();
    let ballots = [
        // (pair, expert, label)
        (0, 0, true),
        (0, 1, true),
        (0, 2, false),
        (1, 0, false),
        (1, 1, true),
        (2, 0, true),
        (2, 1, true),
        (2, 2, true),
        (3, 0, false),
        (3, 1, false),
    ];
    for (i, (p, e, label)) in ballots.into_iter().enumerate() {
        book.record_vote(Vote {
            pair: pairs[p].clone(),
            expert: experts[e].clone(),
            label,
            ts: start + Duration::minutes(i as i64),
        })?;
    }
    // Carol revisits the first pair; her later vote supersedes the earlier one.
    book.record_vote(Vote {
        pair: pairs[0].clone(),
        expert: experts[2].clone(),
        label: true,
        ts: start + Duration::hours(1),
    })?;

    println!("{} votes logged, {} effective", book.log().len(), book.effective_vote_count());
    for (pair, resolved) in book.resolve() {
        println!(
            "{pair}: {}/{} positive -> {}",
            resolved.num_positive,
            resolved.num_votes,
            if resolved.label { "duplicate" } else { "different" }
        );
    }
    for pair in book.incomplete() {
        println!("still missing votes: {pair}");
    }

    let gt = book.ground_truth();
    println!("ground truth: {} pairs, {} positive", gt.len(), gt.num_positives());
    Ok(())
}

fn main() -> eds_core::Result<()> {
    run_example()
}
