//! Ranking metrics over a labeled pair set.
//!
//! Rank-position metrics (HR@k, MRR@k) reward a model for placing labeled
//! positives near the top of its own ranking, which favors the models that
//! generated the labeled pool. ROC-AUC only compares labeled positives with
//! labeled (or sampled) negatives and is the bias-robust alternative:
//!
//! * per-query ROC-AUC is the fraction of (positive, negative) pairs the model
//!   orders correctly, using its zero-based ranks;
//! * macro ROC-AUC averages per-query values over evaluable queries;
//! * micro ROC-AUC pools raw similarity scores across queries (ties count 1/2).
//!
//! PR-AUC is average precision with step interpolation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::GroundTruth;
use crate::corpus::{Corpus, ItemId, ModelHandle, Pair, QueryRanking};
use crate::error::{Error, Result};

/// Which rank lists supply the sampled-negative window.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "models")]
pub enum WindowPool {
    /// The evaluated model's own ranking.
    #[default]
    EvaluatedModel,
    /// The union of the named models' rankings.
    Models(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub window_lo: usize,
    pub window_hi: usize,
    pub count: usize,
    pub seed: u64,
    #[serde(default)]
    pub pool: WindowPool,
    /// Keep the annotated negatives alongside the sampled ones.
    #[serde(default)]
    pub include_annotated: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            window_lo: 100,
            window_hi: 500,
            count: 5,
            seed: 42,
            pool: WindowPool::EvaluatedModel,
            include_annotated: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NegativeSource {
    /// Only the pairs labeled negative (the hard negatives).
    #[default]
    Annotated,
    Sampled(SamplingConfig),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitAveraging {
    /// Mean over every positive pair.
    #[default]
    PerPair,
    /// Mean over queries of the per-query mean.
    PerQuery,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    Micro,
    Macro,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub negatives: NegativeSource,
    #[serde(default)]
    pub hit_averaging: HitAveraging,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: vec![1, 5, 9],
            negatives: NegativeSource::Annotated,
            hit_averaging: HitAveraging::PerPair,
        }
    }
}

/// Positives and negatives of one query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryEvalSet {
    pub query: ItemId,
    pub positives: BTreeSet<ItemId>,
    pub negatives: BTreeSet<ItemId>,
    /// Fewer sampled negatives than requested were available.
    pub shortfall: bool,
}

impl QueryEvalSet {
    pub fn is_evaluable(&self) -> bool {
        !self.positives.is_empty() && !self.negatives.is_empty()
    }
}

/// Ranking results for one model, computed once and reused across label sets.
#[derive(Clone, Debug)]
pub struct RankedModel {
    name: String,
    rankings: BTreeMap<ItemId, QueryRanking>,
}

impl RankedModel {
    pub fn build<'a>(
        model: &ModelHandle,
        corpus: &Corpus,
        queries: impl IntoIterator<Item = &'a ItemId>,
    ) -> Result<Self> {
        let queries: Vec<&ItemId> = queries.into_iter().collect();
        let rankings = queries
            .par_iter()
            .map(|q| Ok(((*q).clone(), QueryRanking::compute(model, q, corpus)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(RankedModel {
            name: model.name().to_string(),
            rankings,
        })
    }

    /// Ranks every query that has labels in `gt`.
    pub fn for_ground_truth(model: &ModelHandle, corpus: &Corpus, gt: &GroundTruth) -> Result<Self> {
        let queries: BTreeSet<&ItemId> = gt.labels().keys().map(|p| &p.query).collect();
        Self::build(model, corpus, queries)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn ranking(&self, query: &ItemId) -> Option<&QueryRanking> {
        self.rankings.get(query)
    }

    fn require(&self, query: &ItemId) -> Result<&QueryRanking> {
        self.ranking(query).ok_or_else(|| Error::UnknownItem {
            model: self.name.clone(),
            item: query.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampledNegatives {
    pub items: Vec<ItemId>,
    pub shortfall: bool,
}

/// Samples `count` candidates uniformly without replacement from ranks
/// `[lo, hi)` of the given rankings, skipping anything already labeled for
/// `query`. Deterministic for a given seed and query.
pub fn sample_negatives(
    rankings: &[&QueryRanking],
    gt: &GroundTruth,
    query: &ItemId,
    lo: usize,
    hi: usize,
    count: usize,
    seed: u64,
) -> Result<SampledNegatives> {
    if lo >= hi {
        return Err(Error::invalid(format!("empty window [{lo}, {hi})")));
    }
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let pool: BTreeSet<&ItemId> = rankings
        .iter()
        .flat_map(|r| r.window(lo, hi))
        .filter(|c| *c != query && !gt.is_labeled(query, c))
        .collect();
    let pool: Vec<&ItemId> = pool.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(query.as_str()));
    let mut items: Vec<ItemId> = pool
        .choose_multiple(&mut rng, count.min(pool.len()))
        .map(|c| (*c).clone())
        .collect();
    items.sort();
    Ok(SampledNegatives {
        shortfall: items.len() < count,
        items,
    })
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Per-query ROC-AUC from zero-based ranks: the fraction of (positive,
/// negative) pairs with the positive ranked strictly ahead. `None` when either
/// side is empty.
pub fn auc_from_ranks(positive_ranks: &[usize], negative_ranks: &[usize]) -> Option<f64> {
    if positive_ranks.is_empty() || negative_ranks.is_empty() {
        return None;
    }
    let mut neg = negative_ranks.to_vec();
    neg.sort_unstable();
    let correct: u64 = positive_ranks
        .iter()
        .map(|p| (neg.len() - neg.partition_point(|n| n <= p)) as u64)
        .sum();
    Some(correct as f64 / (positive_ranks.len() * negative_ranks.len()) as f64)
}

/// Probability that a random positive outscores a random negative, ties 1/2.
/// Computed with mid-ranks, so the result equals the pairwise count exactly.
pub fn auc_from_scores(positive: &[f64], negative: &[f64]) -> Option<f64> {
    if positive.is_empty() || negative.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|s| (*s, true))
        .chain(negative.iter().map(|s| (*s, false)))
        .collect();
    all.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    // Twice the rank sum keeps mid-ranks integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1..=j share the mid-rank (i+1+j)/2.
        let pos_in_group = all[i..j].iter().filter(|x| x.1).count() as u128;
        twice_rank_sum += pos_in_group * (i + 1 + j) as u128;
        i = j;
    }
    let p = positive.len() as u128;
    let n = negative.len() as u128;
    let twice_u = twice_rank_sum - p * (p + 1);
    Some(twice_u as f64 / (2 * p * n) as f64)
}

/// Average precision of labels listed best-first (no ties).
pub fn average_precision_ranked(labels: &[bool]) -> Option<f64> {
    let total = labels.iter().filter(|l| **l).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, label) in labels.iter().enumerate() {
        if *label {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Average precision of scored labels. Tied scores form one threshold step.
pub fn average_precision(scored: &[(f64, bool)]) -> Option<f64> {
    let total = scored.iter().filter(|x| x.1).count();
    if total == 0 {
        return None;
    }
    let mut sorted = scored.to_vec();
    sorted.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    let (mut tp, mut seen, mut sum) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        let group_pos = sorted[i..j].iter().filter(|x| x.1).count();
        tp += group_pos;
        seen += j - i;
        if group_pos > 0 {
            sum += group_pos as f64 * tp as f64 / seen as f64;
        }
        i = j;
    }
    Some(sum / total as f64)
}

/// One query's contribution to every metric.
#[derive(Clone, Debug)]
struct QueryOutcome {
    positive_ranks: Vec<usize>,
    roc_auc: Option<f64>,
    ap: Option<f64>,
    pooled: Vec<(f64, bool)>,
    shortfall: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model: String,
    pub hr: BTreeMap<usize, f64>,
    pub mrr: BTreeMap<usize, f64>,
    pub roc_auc_micro: Option<f64>,
    pub roc_auc_macro: Option<f64>,
    pub pr_auc_micro: Option<f64>,
    pub pr_auc_macro: Option<f64>,
    pub negative_source: NegativeSource,
    pub hit_averaging: HitAveraging,
    pub queries_evaluated: usize,
    pub queries_skipped: usize,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    /// Queries whose sampling window ran short of candidates.
    pub sampling_shortfalls: usize,
}

/// Builds the per-query evaluation sets for `ranked` under `source`.
pub fn eval_sets(
    ranked: &RankedModel,
    gt: &GroundTruth,
    source: &NegativeSource,
    pool: &[&RankedModel],
) -> Result<Vec<QueryEvalSet>> {
    gt.by_query()
        .into_iter()
        .map(|(q, labels)| {
            let positives: BTreeSet<ItemId> = labels.positives.into_iter().cloned().collect();
            let annotated: BTreeSet<ItemId> = labels.negatives.into_iter().cloned().collect();
            let (negatives, shortfall) = match source {
                NegativeSource::Annotated => (annotated, false),
                NegativeSource::Sampled(cfg) => {
                    let rankings: Vec<&QueryRanking> = match &cfg.pool {
                        WindowPool::EvaluatedModel => vec![ranked.require(q)?],
                        WindowPool::Models(names) => names
                            .iter()
                            .map(|n| {
                                pool.iter()
                                    .find(|m| m.name() == n)
                                    .ok_or_else(|| Error::invalid(format!("unknown pool model `{n}`")))?
                                    .require(q)
                            })
                            .collect::<Result<_>>()?,
                    };
                    let sampled = sample_negatives(
                        &rankings,
                        gt,
                        q,
                        cfg.window_lo,
                        cfg.window_hi,
                        cfg.count,
                        cfg.seed,
                    )?;
                    let mut negatives: BTreeSet<ItemId> = sampled.items.into_iter().collect();
                    if cfg.include_annotated {
                        negatives.extend(annotated);
                    }
                    (negatives, sampled.shortfall)
                }
            };
            Ok(QueryEvalSet {
                query: q.clone(),
                positives,
                negatives,
                shortfall,
            })
        })
        .collect()
}

fn rank_of(ranking: &QueryRanking, model: &str, c: &ItemId) -> Result<usize> {
    ranking.rank(c).ok_or_else(|| Error::UnknownItem {
        model: model.to_string(),
        item: c.to_string(),
    })
}

fn query_outcome(ranked: &RankedModel, set: &QueryEvalSet) -> Result<QueryOutcome> {
    let ranking = ranked.require(&set.query)?;
    let pos: Vec<(usize, f64)> = set
        .positives
        .iter()
        .map(|c| {
            let r = rank_of(ranking, ranked.name(), c)?;
            Ok((r, ranking.score(c).expect("ranked")))
        })
        .collect::<Result<_>>()?;
    let neg: Vec<(usize, f64)> = set
        .negatives
        .iter()
        .map(|c| {
            let r = rank_of(ranking, ranked.name(), c)?;
            Ok((r, ranking.score(c).expect("ranked")))
        })
        .collect::<Result<_>>()?;
    let positive_ranks: Vec<usize> = pos.iter().map(|x| x.0).collect();
    let negative_ranks: Vec<usize> = neg.iter().map(|x| x.0).collect();
    let roc_auc = auc_from_ranks(&positive_ranks, &negative_ranks);
    let ap = roc_auc.and_then(|_| {
        let mut ordered: Vec<(usize, bool)> = pos
            .iter()
            .map(|x| (x.0, true))
            .chain(neg.iter().map(|x| (x.0, false)))
            .collect();
        ordered.sort_unstable();
        let labels: Vec<bool> = ordered.into_iter().map(|x| x.1).collect();
        average_precision_ranked(&labels)
    });
    let pooled = pos
        .iter()
        .map(|x| (x.1, true))
        .chain(neg.iter().map(|x| (x.1, false)))
        .collect();
    Ok(QueryOutcome {
        positive_ranks,
        roc_auc,
        ap,
        pooled,
        shortfall: set.shortfall,
    })
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .into_iter()
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn hit_metric(
    outcomes: &[QueryOutcome],
    averaging: HitAveraging,
    contribution: impl Fn(usize) -> f64,
) -> Option<f64> {
    match averaging {
        HitAveraging::PerPair => mean(
            outcomes
                .iter()
                .flat_map(|o| o.positive_ranks.iter().map(|r| contribution(*r))),
        ),
        HitAveraging::PerQuery => mean(
            outcomes
                .iter()
                .filter_map(|o| mean(o.positive_ranks.iter().map(|r| contribution(*r)))),
        ),
    }
}

/// Evaluates a pre-ranked model. `pool` supplies the rankings of other
/// models when sampled negatives come from their windows.
pub fn evaluate_ranked(
    ranked: &RankedModel,
    gt: &GroundTruth,
    config: &EvalConfig,
    pool: &[&RankedModel],
) -> Result<MetricReport> {
    if config.ks.contains(&0) {
        return Err(Error::invalid("k must be at least 1"));
    }
    let sets = eval_sets(ranked, gt, &config.negatives, pool)?;
    // Fixed query order keeps the reductions below identical for any thread count.
    let outcomes: Vec<QueryOutcome> = sets
        .par_iter()
        .map(|s| query_outcome(ranked, s))
        .collect::<Result<_>>()?;

    let mut hr = BTreeMap::new();
    let mut mrr = BTreeMap::new();
    for &k in &config.ks {
        let hit = |r: usize| if r < k { 1.0 } else { 0.0 };
        let rr = |r: usize| if r < k { 1.0 / (r + 1) as f64 } else { 0.0 };
        if let Some(v) = hit_metric(&outcomes, config.hit_averaging, hit) {
            hr.insert(k, v);
        }
        if let Some(v) = hit_metric(&outcomes, config.hit_averaging, rr) {
            mrr.insert(k, v);
        }
    }

    let evaluated = outcomes.iter().filter(|o| o.roc_auc.is_some()).count();
    let pooled: Vec<(f64, bool)> = outcomes.iter().flat_map(|o| o.pooled.iter().copied()).collect();
    let pos_scores: Vec<f64> = pooled.iter().filter(|x| x.1).map(|x| x.0).collect();
    let neg_scores: Vec<f64> = pooled.iter().filter(|x| !x.1).map(|x| x.0).collect();
    let roc_auc_micro = auc_from_scores(&pos_scores, &neg_scores);

    Ok(MetricReport {
        model: ranked.name().to_string(),
        hr,
        mrr,
        roc_auc_micro,
        roc_auc_macro: mean(outcomes.iter().filter_map(|o| o.roc_auc)),
        pr_auc_micro: roc_auc_micro.and_then(|_| average_precision(&pooled)),
        pr_auc_macro: mean(outcomes.iter().filter_map(|o| o.ap)),
        negative_source: config.negatives.clone(),
        hit_averaging: config.hit_averaging,
        queries_evaluated: evaluated,
        queries_skipped: outcomes.len() - evaluated,
        positive_pairs: pos_scores.len(),
        negative_pairs: neg_scores.len(),
        sampling_shortfalls: outcomes.iter().filter(|o| o.shortfall).count(),
    })
}

/// Ranks and evaluates `model`. `pool_models` are only consulted when the
/// sampled-negative window names other models.
pub fn evaluate(
    model: &ModelHandle,
    corpus: &Corpus,
    gt: &GroundTruth,
    config: &EvalConfig,
    pool_models: &[ModelHandle],
) -> Result<MetricReport> {
    let ranked = RankedModel::for_ground_truth(model, corpus, gt)?;
    let pool = match &config.negatives {
        NegativeSource::Sampled(SamplingConfig {
            pool: WindowPool::Models(names),
            ..
        }) => names
            .iter()
            .map(|n| {
                let m = pool_models
                    .iter()
                    .chain(std::iter::once(model))
                    .find(|m| m.name() == n)
                    .ok_or_else(|| Error::invalid(format!("unknown pool model `{n}`")))?;
                RankedModel::for_ground_truth(m, corpus, gt)
            })
            .collect::<Result<Vec<_>>>()?,
        _ => Vec::new(),
    };
    let pool_refs: Vec<&RankedModel> = pool.iter().collect();
    evaluate_ranked(&ranked, gt, config, &pool_refs)
}

fn annotated(ks: Vec<usize>, negatives: NegativeSource) -> EvalConfig {
    EvalConfig {
        ks,
        negatives,
        hit_averaging: HitAveraging::PerPair,
    }
}

/// Mean over positive pairs of `1[R(q, c) < k]`.
pub fn hr_at_k(model: &ModelHandle, corpus: &Corpus, gt: &GroundTruth, k: usize) -> Result<f64> {
    let report = evaluate(model, corpus, gt, &annotated(vec![k], NegativeSource::Annotated), &[])?;
    report.hr.get(&k).copied().ok_or(Error::NoPositives)
}

/// Mean over positive pairs of `1/(R(q, c) + 1)` if `R(q, c) < k`, else 0.
pub fn mrr_at_k(model: &ModelHandle, corpus: &Corpus, gt: &GroundTruth, k: usize) -> Result<f64> {
    let report = evaluate(model, corpus, gt, &annotated(vec![k], NegativeSource::Annotated), &[])?;
    report.mrr.get(&k).copied().ok_or(Error::NoPositives)
}

/// Per-query ROC-AUC; `None` when the query lacks positives or negatives.
pub fn roc_auc_query(model: &ModelHandle, corpus: &Corpus, set: &QueryEvalSet) -> Result<Option<f64>> {
    let ranking = QueryRanking::compute(model, &set.query, corpus)?;
    let ranks = |items: &BTreeSet<ItemId>| -> Result<Vec<usize>> {
        items.iter().map(|c| rank_of(&ranking, model.name(), c)).collect()
    };
    Ok(auc_from_ranks(&ranks(&set.positives)?, &ranks(&set.negatives)?))
}

pub fn roc_auc_macro(
    model: &ModelHandle,
    corpus: &Corpus,
    gt: &GroundTruth,
    negatives: &NegativeSource,
    pool_models: &[ModelHandle],
) -> Result<f64> {
    evaluate(model, corpus, gt, &annotated(vec![], negatives.clone()), pool_models)?
        .roc_auc_macro
        .ok_or(Error::NoEvaluableQueries)
}

pub fn roc_auc_micro(
    model: &ModelHandle,
    corpus: &Corpus,
    gt: &GroundTruth,
    negatives: &NegativeSource,
    pool_models: &[ModelHandle],
) -> Result<f64> {
    evaluate(model, corpus, gt, &annotated(vec![], negatives.clone()), pool_models)?
        .roc_auc_micro
        .ok_or(Error::SingleClass)
}

pub fn pr_auc(
    model: &ModelHandle,
    corpus: &Corpus,
    gt: &GroundTruth,
    negatives: &NegativeSource,
    mode: Averaging,
    pool_models: &[ModelHandle],
) -> Result<f64> {
    let report = evaluate(model, corpus, gt, &annotated(vec![], negatives.clone()), pool_models)?;
    match mode {
        Averaging::Micro => report.pr_auc_micro.ok_or(Error::SingleClass),
        Averaging::Macro => report.pr_auc_macro.ok_or(Error::NoEvaluableQueries),
    }
}

/// Pairs `(q, c)` a report could not rank because the candidate falls outside
/// the corpus; useful to validate a labels file before evaluation.
pub fn unrankable_pairs(gt: &GroundTruth, corpus: &Corpus) -> Vec<Pair> {
    gt.labels()
        .keys()
        .filter(|p| p.query == p.candidate || !corpus.contains_item(&p.candidate))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::GroundTruthSource;
    use crate::corpus::ScoreList;

    fn id(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    #[test]
    fn auc_rank_examples() {
        assert_eq!(auc_from_ranks(&[0, 2], &[1, 3]), Some(0.75));
        assert_eq!(auc_from_ranks(&[0, 1], &[2, 3]), Some(1.0));
        assert_eq!(auc_from_ranks(&[2, 3], &[0, 1]), Some(0.0));
        assert_eq!(auc_from_ranks(&[], &[1]), None);
        assert_eq!(auc_from_ranks(&[1], &[]), None);
    }

    #[test]
    fn auc_score_examples() {
        assert_eq!(auc_from_scores(&[0.9, 0.4], &[0.7, 0.1]), Some(0.75));
        assert_eq!(auc_from_scores(&[0.9, 0.8], &[0.7, 0.1]), Some(1.0));
        assert_eq!(auc_from_scores(&[0.5], &[0.5]), Some(0.5));
        assert_eq!(auc_from_scores(&[], &[0.5]), None);
    }

    #[test]
    fn average_precision_examples() {
        let ap = average_precision_ranked(&[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(average_precision_ranked(&[true, true, false]), Some(1.0));
        assert_eq!(average_precision_ranked(&[false, true]), Some(0.5));
        assert_eq!(average_precision_ranked(&[false]), None);

        let scored = [(0.9, true), (0.5, false), (0.1, true)];
        assert_eq!(average_precision(&scored), average_precision_ranked(&[true, false, true]));
        // One tied group: precision 1/2 applies to the only positive.
        assert_eq!(average_precision(&[(0.5, true), (0.5, false)]), Some(0.5));
    }

    fn score_model(name: &str, rows: &[(&str, &str, f64)]) -> ModelHandle {
        let mut s = ScoreList::new();
        for (q, c, v) in rows {
            s.insert(id(q), id(c), *v).unwrap();
        }
        ModelHandle::from_scores(name, s)
    }

    fn labels(rows: &[(&str, &str, bool)]) -> GroundTruth {
        GroundTruth::from_labels(
            rows.iter()
                .map(|(q, c, l)| (Pair::new(id(q), id(c)), *l))
                .collect(),
            1,
            GroundTruthSource::Synthetic,
        )
    }

    fn items(n: usize) -> Vec<ItemId> {
        (0..n).map(|i| id(&format!("c{i}"))).collect()
    }

    /// Scores that put c{i} at rank i for query `q`.
    fn ladder(q: &str, n: usize) -> Vec<(String, String, f64)> {
        (0..n)
            .map(|i| (q.to_string(), format!("c{i}"), (n - i) as f64))
            .collect()
    }

    fn as_refs(rows: &[(String, String, f64)]) -> Vec<(&str, &str, f64)> {
        rows.iter().map(|(a, b, c)| (a.as_str(), b.as_str(), *c)).collect()
    }

    #[test]
    fn hr_and_mrr_examples() {
        let rows = ladder("q", 10);
        let m = score_model("m", &as_refs(&rows));
        let corpus = Corpus::new(items(10), vec![id("q")]).unwrap();

        let gt = labels(&[("q", "c4", true)]);
        assert_eq!(hr_at_k(&m, &corpus, &gt, 5).unwrap(), 1.0);
        let gt = labels(&[("q", "c5", true)]);
        assert_eq!(hr_at_k(&m, &corpus, &gt, 5).unwrap(), 0.0);
        let gt = labels(&[("q", "c0", true), ("q", "c7", true)]);
        assert_eq!(hr_at_k(&m, &corpus, &gt, 5).unwrap(), 0.5);

        let gt = labels(&[("q", "c0", true)]);
        assert_eq!(mrr_at_k(&m, &corpus, &gt, 5).unwrap(), 1.0);
        let gt = labels(&[("q", "c2", true)]);
        assert!((mrr_at_k(&m, &corpus, &gt, 3).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let gt = labels(&[("q", "c0", true), ("q", "c2", true)]);
        assert!((mrr_at_k(&m, &corpus, &gt, 5).unwrap() - 2.0 / 3.0).abs() < 1e-4);

        let gt = labels(&[("q", "c0", false)]);
        assert!(matches!(hr_at_k(&m, &corpus, &gt, 5), Err(Error::NoPositives)));
    }

    #[test]
    fn per_query_ranks_drive_auc() {
        let rows = ladder("q", 4);
        let m = score_model("m", &as_refs(&rows));
        let corpus = Corpus::new(items(4), vec![id("q")]).unwrap();
        let set = QueryEvalSet {
            query: id("q"),
            positives: [id("c0"), id("c2")].into(),
            negatives: [id("c1"), id("c3")].into(),
            shortfall: false,
        };
        assert_eq!(roc_auc_query(&m, &corpus, &set).unwrap(), Some(0.75));
    }

    #[test]
    fn macro_skips_queries_without_both_classes() {
        let mut rows = ladder("q1", 6);
        rows.extend(ladder("q2", 6));
        rows.extend(ladder("q3", 6));
        let m = score_model("m", &as_refs(&rows));
        let corpus = Corpus::new(items(6), vec![id("q1"), id("q2"), id("q3")]).unwrap();
        // q1: positive at rank 2 of 6 -> 3/5; q2: positive at rank 1 -> 4/5; q3 has no negatives.
        let gt = labels(&[
            ("q1", "c2", true),
            ("q1", "c0", false),
            ("q1", "c1", false),
            ("q1", "c3", false),
            ("q1", "c4", false),
            ("q1", "c5", false),
            ("q2", "c1", true),
            ("q2", "c0", false),
            ("q2", "c2", false),
            ("q2", "c3", false),
            ("q2", "c4", false),
            ("q2", "c5", false),
            ("q3", "c0", true),
        ]);
        let report = evaluate(&m, &corpus, &gt, &EvalConfig::default(), &[]).unwrap();
        assert!((report.roc_auc_macro.unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(report.queries_evaluated, 2);
        assert_eq!(report.queries_skipped, 1);
    }

    #[test]
    fn no_evaluable_queries_is_an_error() {
        let rows = ladder("q", 3);
        let m = score_model("m", &as_refs(&rows));
        let corpus = Corpus::new(items(3), vec![id("q")]).unwrap();
        let gt = labels(&[("q", "c0", true)]);
        assert!(matches!(
            roc_auc_macro(&m, &corpus, &gt, &NegativeSource::Annotated, &[]),
            Err(Error::NoEvaluableQueries)
        ));
        assert!(matches!(
            roc_auc_micro(&m, &corpus, &gt, &NegativeSource::Annotated, &[]),
            Err(Error::SingleClass)
        ));
    }

    #[test]
    fn sampling_exhaustion_determinism_and_exclusion() {
        let rows = ladder("q", 10);
        let m = score_model("m", &as_refs(&rows));
        let corpus = Corpus::new(items(10), vec![id("q")]).unwrap();
        let ranking = QueryRanking::compute(&m, &id("q"), &corpus).unwrap();
        let gt = labels(&[("q", "c0", true), ("q", "c6", false)]);

        // Window [5, 9) holds c5..c8; c6 is labeled, leaving 3.
        let s = sample_negatives(&[&ranking], &gt, &id("q"), 5, 9, 5, 1).unwrap();
        assert_eq!(s.items, vec![id("c5"), id("c7"), id("c8")]);
        assert!(s.shortfall);

        let a = sample_negatives(&[&ranking], &gt, &id("q"), 1, 10, 3, 9).unwrap();
        let b = sample_negatives(&[&ranking], &gt, &id("q"), 1, 10, 3, 9).unwrap();
        assert_eq!(a, b);
        assert!(!a.shortfall);
        assert!(!a.items.contains(&id("c6")));
        assert!(sample_negatives(&[&ranking], &gt, &id("q"), 3, 3, 1, 0).is_err());
    }

    #[test]
    fn sampled_negatives_feed_the_report() {
        let rows = ladder("q", 20);
        let m = score_model("m", &as_refs(&rows));
        let corpus = Corpus::new(items(20), vec![id("q")]).unwrap();
        let gt = labels(&[("q", "c1", true)]);
        let config = EvalConfig {
            ks: vec![5],
            negatives: NegativeSource::Sampled(SamplingConfig {
                window_lo: 10,
                window_hi: 20,
                count: 4,
                seed: 3,
                ..Default::default()
            }),
            hit_averaging: HitAveraging::PerPair,
        };
        let r = evaluate(&m, &corpus, &gt, &config, &[]).unwrap();
        assert_eq!(r.negative_pairs, 4);
        assert_eq!(r.roc_auc_macro, Some(1.0));
        assert_eq!(r.roc_auc_micro, Some(1.0));
        assert_eq!(r.sampling_shortfalls, 0);
    }

    #[test]
    fn per_query_hit_averaging() {
        let mut rows = ladder("q1", 10);
        rows.extend(ladder("q2", 10));
        let m = score_model("m", &as_refs(&rows));
        let corpus = Corpus::new(items(10), vec![id("q1"), id("q2")]).unwrap();
        // q1: two hits at k=5; q2: one miss.
        let gt = labels(&[("q1", "c0", true), ("q1", "c1", true), ("q2", "c8", true)]);
        let mut config = EvalConfig { ks: vec![5], ..Default::default() };
        let per_pair = evaluate(&m, &corpus, &gt, &config, &[]).unwrap();
        assert!((per_pair.hr[&5] - 2.0 / 3.0).abs() < 1e-12);
        config.hit_averaging = HitAveraging::PerQuery;
        let per_query = evaluate(&m, &corpus, &gt, &config, &[]).unwrap();
        assert_eq!(per_query.hr[&5], 0.5);
    }
}
