//! Seeded corpora with planted positives, for examples and tests.
//!
//! Query `j` owns a latent center. The query and its planted positives are
//! noisy copies of that center; every other item gets an independent random
//! latent. Each model sees the latents through its own noise, so a model's
//! noise level controls how well it surfaces the planted positives.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::annotation::{GroundTruth, GroundTruthSource};
use crate::corpus::{Corpus, EmbeddingTable, ItemId, ModelHandle, Pair, ScoreList};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticModel {
    pub name: String,
    /// Norm of the per-item noise relative to the unit-norm latent.
    pub noise: f64,
    /// Emit negated cosine scores as a score list instead of embeddings.
    pub inverted: bool,
}

impl SyntheticModel {
    pub fn new(name: impl Into<String>, noise: f64) -> Self {
        SyntheticModel {
            name: name.into(),
            noise,
            inverted: false,
        }
    }

    pub fn inverted(name: impl Into<String>, noise: f64) -> Self {
        SyntheticModel {
            inverted: true,
            ..Self::new(name, noise)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub num_items: usize,
    pub num_queries: usize,
    pub positives_per_query: usize,
    pub dim: usize,
    /// Spread of a group member around its center.
    pub group_noise: f64,
    pub models: Vec<SyntheticModel>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_items: 1_000,
            num_queries: 50,
            positives_per_query: 3,
            dim: 32,
            group_noise: 0.5,
            models: vec![
                SyntheticModel::new("alpha", 0.5),
                SyntheticModel::new("beta", 0.8),
                SyntheticModel::new("gamma", 1.1),
            ],
            seed: 7,
        }
    }
}

pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub models: Vec<ModelHandle>,
    planted: BTreeSet<Pair>,
}

impl SyntheticCorpus {
    pub fn planted(&self) -> &BTreeSet<Pair> {
        &self.planted
    }

    pub fn is_positive(&self, pair: &Pair) -> bool {
        self.planted.contains(pair)
    }

    /// Fraction of all (query, candidate) pairs that are planted positives.
    pub fn positive_rate(&self) -> f64 {
        self.planted.len() as f64 / self.corpus.num_pairs() as f64
    }

    /// Labels `pairs` against the planted positives.
    pub fn truth_on<'a>(&self, pairs: impl IntoIterator<Item = &'a Pair>) -> GroundTruth {
        let labels: BTreeMap<Pair, bool> = pairs
            .into_iter()
            .map(|p| (p.clone(), self.is_positive(p)))
            .collect();
        GroundTruth::from_labels(labels, 1, GroundTruthSource::Synthetic)
    }

    pub fn model(&self, name: &str) -> Option<&ModelHandle> {
        self.models.iter().find(|m| m.name() == name)
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    v
}

fn perturb(rng: &mut ChaCha8Rng, base: &[f64], scale: f64) -> Vec<f64> {
    let noise = unit_gaussian(rng, base.len());
    base.iter().zip(noise).map(|(b, n)| b + scale * n).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn item_name(i: usize) -> String {
    format!("item{i:05}")
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let grouped = config.num_queries * (1 + config.positives_per_query);
    if config.num_queries == 0 || grouped > config.num_items {
        return Err(Error::invalid(format!(
            "{} queries with {} positives each need at least {grouped} items, have {}",
            config.num_queries, config.positives_per_query, config.num_items
        )));
    }
    if config.dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ids: Vec<ItemId> = (0..config.num_items)
        .map(|i| ItemId::new(item_name(i)))
        .collect::<Result<_>>()?;

    // Items 0..Q are queries; query j's positives follow at Q + j * P.
    let q = config.num_queries;
    let per = config.positives_per_query;
    let mut latents = vec![Vec::new(); config.num_items];
    let mut identities = BTreeMap::new();
    let mut planted = BTreeSet::new();
    for j in 0..q {
        let center = unit_gaussian(&mut rng, config.dim);
        latents[j] = perturb(&mut rng, &center, config.group_noise);
        identities.insert(ids[j].clone(), format!("g{j}"));
        for t in 0..per {
            let i = q + j * per + t;
            latents[i] = perturb(&mut rng, &center, config.group_noise);
            identities.insert(ids[i].clone(), format!("g{j}"));
            planted.insert(Pair::new(ids[j].clone(), ids[i].clone()));
        }
    }
    for i in grouped..config.num_items {
        latents[i] = unit_gaussian(&mut rng, config.dim);
        identities.insert(ids[i].clone(), format!("u{i}"));
    }

    let corpus = Corpus::new(ids.clone(), ids[..q].to_vec())?.with_identity_labels(identities);

    let mut models = Vec::with_capacity(config.models.len());
    for spec in &config.models {
        let views: Vec<Vec<f64>> = latents
            .iter()
            .map(|l| perturb(&mut rng, l, spec.noise))
            .collect();
        if spec.inverted {
            let mut scores = ScoreList::new();
            for qi in 0..q {
                for (ci, view) in views.iter().enumerate() {
                    if ci != qi {
                        scores.insert(ids[qi].clone(), ids[ci].clone(), -cosine(&views[qi], view))?;
                    }
                }
            }
            models.push(ModelHandle::from_scores(spec.name.clone(), scores));
        } else {
            let mut table = EmbeddingTable::new(config.dim)?;
            for (id, view) in ids.iter().zip(&views) {
                table.insert(id.clone(), view)?;
            }
            models.push(ModelHandle::from_embeddings(spec.name.clone(), table)?);
        }
    }

    Ok(SyntheticCorpus {
        corpus,
        models,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::rank_candidates;

    #[test]
    fn generation_is_seeded() {
        let config = SyntheticConfig::default();
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        let q = &a.corpus.queries()[3];
        let ra = rank_candidates(&a.models[0], q, &a.corpus, 5).unwrap();
        let rb = rank_candidates(&b.models[0], q, &b.corpus, 5).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a.planted(), b.planted());
    }

    #[test]
    fn planted_rate() {
        let s = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(s.planted().len(), 150);
        assert!((s.positive_rate() - 3.0 / 999.0).abs() < 1e-12);
    }

    #[test]
    fn low_noise_model_finds_planted_positives() {
        let s = generate(&SyntheticConfig::default()).unwrap();
        let mut found = 0;
        for q in s.corpus.queries() {
            let list = rank_candidates(&s.models[0], q, &s.corpus, 3).unwrap();
            found += list
                .candidates()
                .filter(|c| s.is_positive(&Pair::new(q.clone(), (*c).clone())))
                .count();
        }
        assert!(found as f64 >= 0.9 * s.planted().len() as f64, "found {found}");
    }

    #[test]
    fn inverted_model_ranks_positives_last() {
        let config = SyntheticConfig {
            num_items: 100,
            num_queries: 5,
            models: vec![SyntheticModel::inverted("anti", 0.1)],
            ..SyntheticConfig::default()
        };
        let s = generate(&config).unwrap();
        let q = &s.corpus.queries()[0];
        let list = rank_candidates(&s.models[0], q, &s.corpus, 3).unwrap();
        assert!(list.candidates().all(|c| !s.is_positive(&Pair::new(q.clone(), c.clone()))));
    }

    #[test]
    fn too_few_items() {
        let config = SyntheticConfig {
            num_items: 10,
            ..SyntheticConfig::default()
        };
        assert!(generate(&config).is_err());
    }
}
