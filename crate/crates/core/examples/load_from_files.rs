// Writes a corpus manifest and two models to disk in the exchange formats,
// then loads them back and ranks candidates.
//
// ```bash
// cargo run -p eds-core --example load_from_files
// ```

use std::collections::BTreeMap;

use eds_core::corpus::{rank_candidates, Corpus, EmbeddingTable, ItemId};
use eds_core::formats::{load_manifest, load_model, write_embeddings, write_manifest, write_scores};

pub fn run_example() -> eds_core::Result<()> {
    let dir = std::env::temp_dir().join(format!("eds-files-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|source| eds_core::Error::Io { path: dir.clone(), source })?;

    let names = ["red_dress", "red_dress_alt", "blue_shirt", "green_shoe"];
    let ids = names.into_iter().map(ItemId::new).collect::<eds_core::Result<Vec<_>>>()?;
    let images: BTreeMap<ItemId, std::path::PathBuf> = ids
        .iter()
        .map(|i| (i.clone(), dir.join(format!("{i}.jpg"))))
        .collect();
    let corpus = Corpus::new(ids.clone(), ids[..2].to_vec())?.with_image_paths(images);
    write_manifest(dir.join("manifest.tsv"), &corpus)?;

    let mut table = EmbeddingTable::new(3)?;
    for (id, v) in ids.iter().zip([[0.9, 0.1, 0.0], [0.8, 0.2, 0.1], [0.1, 0.9, 0.2], [0.0, 0.2, 0.9]]) {
        table.insert(id.clone(), &v)?;
    }
    write_embeddings(dir.join("colour.emb"), "colour", &table)?;
    let rows = vec![
        (ids[0].clone(), ids[1].clone(), 0.95),
        (ids[0].clone(), ids[2].clone(), 0.10),
        (ids[0].clone(), ids[3].clone(), 0.05),
        (ids[1].clone(), ids[0].clone(), 0.95),
        (ids[1].clone(), ids[2].clone(), 0.20),
        (ids[1].clone(), ids[3].clone(), 0.00),
    ];
    write_scores(dir.join("reranker.tsv"), "reranker", rows)?;

    let corpus = load_manifest(dir.join("manifest.tsv"))?;
    for (file, name) in [("colour.emb", "colour"), ("reranker.tsv", "reranker")] {
        let model = load_model(dir.join(file), name)?;
        for q in corpus.queries() {
            let list = rank_candidates(&model, q, &corpus, 2)?;
            let top: Vec<String> = list
                .entries
                .iter()
                .map(|e| format!("{} ({:.3})", e.candidate, e.score))
                .collect();
            println!("{name:<8} {q}: {}", top.join(", "));
        }
    }
    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}

fn main() -> eds_core::Result<()> {
    run_example()
}
