//! Ensemble suspect-set construction: each model proposes its top-k
//! candidates per query, and the proposals are merged into one deduplicated
//! pool that records which models proposed each pair.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{rank_candidates, Corpus, ItemId, ModelHandle, ModelSource, Pair};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Proposal {
    pub model: String,
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectPair {
    pub pair: Pair,
    /// Sorted by model name; no model appears twice.
    pub proposers: Vec<Proposal>,
}

impl SuspectPair {
    pub fn proposed_by(&self, model: &str) -> bool {
        self.proposers.iter().any(|p| p.model == model)
    }
}

/// The top-k proposals of a single model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSuspects {
    pub model: String,
    pub k: usize,
    /// Every query the model was asked about, including ones with no candidates.
    pub queries: Vec<ItemId>,
    /// `(pair, rank)` in query order, then rank order.
    pub entries: Vec<(Pair, usize)>,
}

/// Collects the pairs `(q, c)` with `R_m(q, c) < k` for every query.
pub fn build_suspects_per_model(
    model: &ModelHandle,
    corpus: &Corpus,
    k: usize,
) -> Result<ModelSuspects> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let per_query: Vec<Vec<(Pair, usize)>> = corpus
        .queries()
        .par_iter()
        .map(|q| {
            let list = rank_candidates(model, q, corpus, k)?;
            let needed = k.min(corpus.num_candidates(q));
            if matches!(model.source(), ModelSource::Scores(_)) && list.len() < needed {
                return Err(Error::InsufficientScores {
                    model: model.name().to_string(),
                    query: q.to_string(),
                    available: list.len(),
                    needed,
                });
            }
            Ok(list
                .entries
                .into_iter()
                .map(|e| (Pair::new(q.clone(), e.candidate), e.rank))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(ModelSuspects {
        model: model.name().to_string(),
        k,
        queries: corpus.queries().to_vec(),
        entries: per_query.into_iter().flatten().collect(),
    })
}

/// The deduplicated union of several models' proposals.
#[derive(Clone, Debug, PartialEq)]
pub struct SuspectSet {
    k: usize,
    models: Vec<String>,
    queries: BTreeSet<ItemId>,
    pairs: Vec<SuspectPair>,
    per_model: BTreeMap<String, BTreeSet<Pair>>,
}

/// Merges per-model proposals. The result does not depend on input order.
pub fn union_dedupe(per_model: &[ModelSuspects]) -> Result<SuspectSet> {
    let Some(first) = per_model.first() else {
        return Err(Error::invalid("no per-model suspect sets given"));
    };
    let k = first.k;
    let mut merged: BTreeMap<Pair, Vec<Proposal>> = BTreeMap::new();
    let mut queries = BTreeSet::new();
    let mut models = BTreeSet::new();
    for set in per_model {
        if set.k != k {
            return Err(Error::MismatchedK(k, set.k));
        }
        if !models.insert(set.model.clone()) {
            return Err(Error::DuplicateModel(set.model.clone()));
        }
        queries.extend(set.queries.iter().cloned());
        for (pair, rank) in &set.entries {
            merged.entry(pair.clone()).or_default().push(Proposal {
                model: set.model.clone(),
                rank: *rank,
            });
        }
    }
    let pairs = merged
        .into_iter()
        .map(|(pair, mut proposers)| {
            proposers.sort();
            SuspectPair { pair, proposers }
        })
        .collect();
    SuspectSet::assemble(k, models.into_iter().collect(), queries, pairs)
}

impl SuspectSet {
    /// Rebuilds a suspect set from stored pairs (e.g. a suspects file).
    /// Models and queries are taken from the pairs themselves.
    pub fn from_pairs(k: usize, pairs: Vec<SuspectPair>) -> Result<Self> {
        let models: BTreeSet<String> = pairs
            .iter()
            .flat_map(|p| p.proposers.iter().map(|x| x.model.clone()))
            .collect();
        let queries = pairs.iter().map(|p| p.pair.query.clone()).collect();
        let mut pairs = pairs;
        for p in &mut pairs {
            p.proposers.sort();
        }
        pairs.sort_by(|a, b| a.pair.cmp(&b.pair));
        SuspectSet::assemble(k, models.into_iter().collect(), queries, pairs)
    }

    fn assemble(
        k: usize,
        models: Vec<String>,
        queries: BTreeSet<ItemId>,
        pairs: Vec<SuspectPair>,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        let mut per_model: BTreeMap<String, BTreeSet<Pair>> =
            models.iter().map(|m| (m.clone(), BTreeSet::new())).collect();
        for (i, sp) in pairs.iter().enumerate() {
            if i > 0 && pairs[i - 1].pair >= sp.pair {
                return Err(Error::invalid(format!("duplicate suspect pair {}", sp.pair)));
            }
            if sp.pair.query == sp.pair.candidate {
                return Err(Error::invalid(format!("self pair {}", sp.pair)));
            }
            if sp.proposers.is_empty() {
                return Err(Error::invalid(format!("pair {} has no proposers", sp.pair)));
            }
            for (j, p) in sp.proposers.iter().enumerate() {
                if p.rank >= k {
                    return Err(Error::invalid(format!(
                        "pair {} proposed by `{}` at rank {} >= k = {k}",
                        sp.pair, p.model, p.rank
                    )));
                }
                if j > 0 && sp.proposers[j - 1].model == p.model {
                    return Err(Error::DuplicateModel(p.model.clone()));
                }
                per_model
                    .get_mut(&p.model)
                    .expect("model registered")
                    .insert(sp.pair.clone());
            }
        }
        Ok(SuspectSet {
            k,
            models,
            queries,
            pairs,
            per_model,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Model names in ascending order.
    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn queries(&self) -> &BTreeSet<ItemId> {
        &self.queries
    }

    /// Pairs sorted by (query, candidate).
    pub fn pairs(&self) -> &[SuspectPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn model_pairs(&self, model: &str) -> Option<&BTreeSet<Pair>> {
        self.per_model.get(model)
    }

    pub fn get(&self, pair: &Pair) -> Option<&SuspectPair> {
        self.pairs
            .binary_search_by(|p| p.pair.cmp(pair))
            .ok()
            .map(|i| &self.pairs[i])
    }

    pub fn contains(&self, pair: &Pair) -> bool {
        self.get(pair).is_some()
    }

    /// `|M| · |Q| · k`
    pub fn upper_bound(&self) -> usize {
        self.models.len() * self.queries.len() * self.k
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub models: Vec<String>,
    /// Percentages; the diagonal is `None`.
    pub values: Vec<Vec<Option<f64>>>,
}

impl OverlapMatrix {
    /// Mean of the off-diagonal entries.
    pub fn mean_off_diagonal(&self) -> f64 {
        let vals: Vec<f64> = self.values.iter().flatten().filter_map(|v| *v).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }
}

/// Pairwise overlap between generators, in percent of the nominal per-model
/// size `|Q| · k`.
pub fn overlap_matrix(s: &SuspectSet) -> Result<OverlapMatrix> {
    if s.models.len() < 2 {
        return Err(Error::invalid("overlap needs at least two models"));
    }
    let nominal = (s.queries.len() * s.k) as f64;
    let values = s
        .models
        .iter()
        .map(|a| {
            s.models
                .iter()
                .map(|b| {
                    if a == b {
                        return None;
                    }
                    let common = s.per_model[a].intersection(&s.per_model[b]).count();
                    Some(100.0 * common as f64 / nominal)
                })
                .collect()
        })
        .collect();
    Ok(OverlapMatrix {
        models: s.models.clone(),
        values,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuplicationStats {
    pub avg_candidates_per_query: f64,
    pub max_per_query: usize,
    /// Largest number of candidates a single model contributed to one query.
    pub per_model_cap: usize,
    pub duplication_rate: f64,
}

/// `1 − avg / (models × cap)`
pub fn duplication_rate(avg_candidates_per_query: f64, num_models: usize, cap: usize) -> f64 {
    1.0 - avg_candidates_per_query / (num_models * cap) as f64
}

pub fn duplication_stats(s: &SuspectSet) -> Result<DuplicationStats> {
    if s.is_empty() {
        return Err(Error::invalid("empty suspect set"));
    }
    let mut per_query: BTreeMap<&ItemId, usize> = s.queries.iter().map(|q| (q, 0)).collect();
    for p in &s.pairs {
        *per_query.get_mut(&p.pair.query).expect("query registered") += 1;
    }
    let mut cap = 0;
    for pairs in s.per_model.values() {
        let mut counts: HashMap<&ItemId, usize> = HashMap::new();
        for p in pairs {
            *counts.entry(&p.query).or_default() += 1;
        }
        cap = cap.max(counts.values().copied().max().unwrap_or(0));
    }
    let avg = s.pairs.len() as f64 / per_query.len() as f64;
    Ok(DuplicationStats {
        avg_candidates_per_query: avg,
        max_per_query: per_query.values().copied().max().unwrap_or(0),
        per_model_cap: cap,
        duplication_rate: duplication_rate(avg, s.models.len(), cap),
    })
}

/// An exact, reduced fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub fn new(num: u64, den: u64) -> Self {
        let g = gcd(num, den).max(1);
        Ratio {
            num: num / g,
            den: den / g,
        }
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// `Σ_q |D_{-q}|`, labeling operations per expert without EDS.
    pub brute_force_ops: u64,
    /// `|S_k|`
    pub eds_ops: u64,
    /// `|M| · |Q| · k`
    pub eds_upper_bound: u64,
    /// `brute_force_ops / eds_ops`
    pub speedup: f64,
    /// `brute_force_ops / eds_upper_bound`, i.e. `|D_{-q}| / (|M| k)` when
    /// every query has the same pool size.
    pub nominal_ratio: Ratio,
    pub p_hat: f64,
    pub random_expected_trials_per_positive: f64,
}

/// Labeling cost of brute force, random sampling and EDS from raw counts.
pub fn cost_from_counts(
    brute_force_ops: u64,
    num_queries: u64,
    num_models: u64,
    k: u64,
    eds_ops: u64,
    p_hat: f64,
) -> Result<CostReport> {
    if !(p_hat > 0.0 && p_hat <= 1.0) {
        return Err(Error::invalid(format!("p_hat = {p_hat} must lie in (0, 1]")));
    }
    let eds_upper_bound = num_queries * num_models * k;
    if eds_upper_bound == 0 || eds_ops == 0 {
        return Err(Error::invalid("empty suspect set"));
    }
    Ok(CostReport {
        brute_force_ops,
        eds_ops,
        eds_upper_bound,
        speedup: brute_force_ops as f64 / eds_ops as f64,
        nominal_ratio: Ratio::new(brute_force_ops, eds_upper_bound),
        p_hat,
        random_expected_trials_per_positive: 1.0 / p_hat,
    })
}

pub fn cost_report(corpus: &Corpus, s: &SuspectSet, p_hat: f64) -> Result<CostReport> {
    cost_from_counts(
        corpus.num_pairs(),
        corpus.queries().len() as u64,
        s.models.len() as u64,
        s.k as u64,
        s.len() as u64,
        p_hat,
    )
}
