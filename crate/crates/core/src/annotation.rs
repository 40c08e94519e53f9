//! Expert votes, majority-vote label resolution, and estimation of the base
//! positive rate of the pair universe.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, ItemId, Pair};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ExpertId(String);

impl ExpertId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == ',') {
            return Err(Error::invalid(format!("invalid expert id `{id}`")));
        }
        Ok(ExpertId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ExpertId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        ExpertId::new(value)
    }
}

impl From<ExpertId> for String {
    fn from(id: ExpertId) -> String {
        id.0
    }
}

impl std::str::FromStr for ExpertId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExpertId::new(s)
    }
}

impl fmt::Display for ExpertId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Converts a wire label (0 or 1) to a boolean.
pub fn parse_label(raw: i64) -> Result<bool> {
    match raw {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(Error::InvalidLabel(other)),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vote {
    pub pair: Pair,
    pub expert: ExpertId,
    pub label: bool,
    pub ts: DateTime<Utc>,
}

/// Effective votes: the latest vote per (pair, expert). Later timestamps win;
/// equal timestamps fall back to log order.
pub fn effective_votes(log: &[Vote]) -> BTreeMap<Pair, BTreeMap<ExpertId, bool>> {
    let mut latest: BTreeMap<(&Pair, &ExpertId), &Vote> = BTreeMap::new();
    for v in log {
        latest
            .entry((&v.pair, &v.expert))
            .and_modify(|cur| {
                if v.ts >= cur.ts {
                    *cur = v;
                }
            })
            .or_insert(v);
    }
    let mut out: BTreeMap<Pair, BTreeMap<ExpertId, bool>> = BTreeMap::new();
    for ((pair, expert), v) in latest {
        out.entry(pair.clone())
            .or_default()
            .insert(expert.clone(), v.label);
    }
    out
}

/// Strict majority; ties and minorities resolve negative.
pub fn majority(positives: usize, total: usize) -> bool {
    2 * positives > total
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedLabel {
    pub label: bool,
    pub num_votes: usize,
    pub num_positive: usize,
}

/// Resolves every voted pair by strict majority over its effective votes.
/// Pairs without votes are absent from the output.
pub fn resolve_labels(log: &[Vote]) -> BTreeMap<Pair, ResolvedLabel> {
    effective_votes(log)
        .into_iter()
        .map(|(pair, votes)| {
            let num_positive = votes.values().filter(|l| **l).count();
            let resolved = ResolvedLabel {
                label: majority(num_positive, votes.len()),
                num_votes: votes.len(),
                num_positive,
            };
            (pair, resolved)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundTruthSource {
    ExpertResolved,
    IdentityDerived,
    Synthetic,
}

/// Binary labels over (query, candidate) pairs.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    labels: BTreeMap<Pair, bool>,
    votes_per_pair: BTreeMap<Pair, usize>,
    num_experts: usize,
    vote_log: Vec<Vote>,
    source: GroundTruthSource,
}

impl GroundTruth {
    pub fn from_labels(
        labels: BTreeMap<Pair, bool>,
        num_experts: usize,
        source: GroundTruthSource,
    ) -> Self {
        GroundTruth {
            labels,
            votes_per_pair: BTreeMap::new(),
            num_experts: num_experts.max(1),
            vote_log: Vec::new(),
            source,
        }
    }

    /// Resolved labels with per-pair vote counts, e.g. read back from a labels file.
    pub fn from_resolved(resolved: BTreeMap<Pair, ResolvedLabel>, num_experts: usize) -> Self {
        let votes_per_pair = resolved.iter().map(|(p, r)| (p.clone(), r.num_votes)).collect();
        let labels = resolved.into_iter().map(|(p, r)| (p, r.label)).collect();
        GroundTruth {
            labels,
            votes_per_pair,
            num_experts: num_experts.max(1),
            vote_log: Vec::new(),
            source: GroundTruthSource::ExpertResolved,
        }
    }

    pub fn from_votes(log: Vec<Vote>, num_experts: usize) -> Self {
        let mut gt = Self::from_resolved(resolve_labels(&log), num_experts);
        gt.vote_log = log;
        gt
    }

    pub fn labels(&self) -> &BTreeMap<Pair, bool> {
        &self.labels
    }

    pub fn label(&self, pair: &Pair) -> Option<bool> {
        self.labels.get(pair).copied()
    }

    pub fn num_votes(&self, pair: &Pair) -> Option<usize> {
        self.votes_per_pair.get(pair).copied()
    }

    pub fn num_experts(&self) -> usize {
        self.num_experts
    }

    pub fn vote_log(&self) -> &[Vote] {
        &self.vote_log
    }

    pub fn source(&self) -> GroundTruthSource {
        self.source
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_positives(&self) -> usize {
        self.labels.values().filter(|l| **l).count()
    }

    pub fn is_labeled(&self, query: &ItemId, candidate: &ItemId) -> bool {
        self.labels
            .contains_key(&Pair::new(query.clone(), candidate.clone()))
    }

    /// Labeled pairs grouped per query, in query order.
    pub fn by_query(&self) -> BTreeMap<&ItemId, QueryLabels<'_>> {
        let mut out: BTreeMap<&ItemId, QueryLabels<'_>> = BTreeMap::new();
        for (pair, label) in &self.labels {
            let entry = out.entry(&pair.query).or_default();
            if *label {
                entry.positives.push(&pair.candidate);
            } else {
                entry.negatives.push(&pair.candidate);
            }
        }
        out
    }

    /// Keeps only the pairs accepted by `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&Pair) -> bool) -> GroundTruth {
        let labels: BTreeMap<Pair, bool> = self
            .labels
            .iter()
            .filter(|(p, _)| keep(p))
            .map(|(p, l)| (p.clone(), *l))
            .collect();
        let votes_per_pair = self
            .votes_per_pair
            .iter()
            .filter(|(p, _)| labels.contains_key(*p))
            .map(|(p, n)| (p.clone(), *n))
            .collect();
        GroundTruth {
            labels,
            votes_per_pair,
            num_experts: self.num_experts,
            vote_log: Vec::new(),
            source: self.source,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct QueryLabels<'a> {
    pub positives: Vec<&'a ItemId>,
    pub negatives: Vec<&'a ItemId>,
}

/// An append-only vote log bound to a fixed pair set and expert roster.
#[derive(Clone, Debug)]
pub struct VoteBook {
    pairs: BTreeSet<Pair>,
    experts: BTreeSet<ExpertId>,
    log: Vec<Vote>,
}

impl VoteBook {
    pub fn new(
        pairs: impl IntoIterator<Item = Pair>,
        experts: impl IntoIterator<Item = ExpertId>,
    ) -> Result<Self> {
        let experts: BTreeSet<ExpertId> = experts.into_iter().collect();
        if experts.is_empty() {
            return Err(Error::invalid("at least one expert is required"));
        }
        Ok(VoteBook {
            pairs: pairs.into_iter().collect(),
            experts,
            log: Vec::new(),
        })
    }

    pub fn check(&self, v: &Vote) -> Result<()> {
        if !self.experts.contains(&v.expert) {
            return Err(Error::UnknownExpert(v.expert.to_string()));
        }
        if !self.pairs.contains(&v.pair) {
            return Err(Error::UnknownPair {
                query: v.pair.query.to_string(),
                candidate: v.pair.candidate.to_string(),
            });
        }
        Ok(())
    }

    /// Appends a vote; it supersedes any earlier vote by the same expert on
    /// the same pair.
    pub fn record_vote(&mut self, v: Vote) -> Result<()> {
        self.check(&v)?;
        self.log.push(v);
        Ok(())
    }

    pub fn log(&self) -> &[Vote] {
        &self.log
    }

    pub fn experts(&self) -> &BTreeSet<ExpertId> {
        &self.experts
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    pub fn effective_vote_count(&self) -> usize {
        effective_votes(&self.log).values().map(BTreeMap::len).sum()
    }

    pub fn resolve(&self) -> BTreeMap<Pair, ResolvedLabel> {
        resolve_labels(&self.log)
    }

    /// Resolved pairs that have fewer than one vote per expert.
    pub fn incomplete(&self) -> Vec<Pair> {
        self.resolve()
            .into_iter()
            .filter(|(_, r)| r.num_votes < self.experts.len())
            .map(|(p, _)| p)
            .collect()
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth::from_votes(self.log.clone(), self.experts.len())
    }
}

/// Observed lower bound on the positive rate of the pair universe:
/// `num_positives / |A|` with `|A| = Σ_q |D_{-q}|`.
pub fn lower_bound_p(num_positives: u64, corpus: &Corpus) -> Result<f64> {
    lower_bound_p_for_universe(num_positives, corpus.num_pairs())
}

pub fn lower_bound_p_for_universe(num_positives: u64, universe: u64) -> Result<f64> {
    if universe == 0 {
        return Err(Error::EmptyCorpus);
    }
    if num_positives > universe {
        return Err(Error::invalid(format!(
            "{num_positives} positives exceed the {universe} pairs in the universe"
        )));
    }
    Ok(num_positives as f64 / universe as f64)
}

/// MAP estimate of the positive rate under a uniform prior on `[p_lb, 1]`
/// and a binomial likelihood of `a` positives in `b` random draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PEstimate {
    pub a: u64,
    pub b: u64,
    pub p_lb: f64,
    pub p_hat: f64,
    pub epsilon: Option<f64>,
    pub q_prob: Option<f64>,
    /// `p_hat / (b ε²)`, the Chebyshev bound on `P(|p̂ − p| ≥ ε)`.
    pub chebyshev_bound: Option<f64>,
}

impl PEstimate {
    pub fn with_error_bound(mut self, epsilon: f64, q_prob: f64) -> Result<Self> {
        check_open_unit("epsilon", epsilon)?;
        check_open_unit("q", q_prob)?;
        self.epsilon = Some(epsilon);
        self.q_prob = Some(q_prob);
        self.chebyshev_bound = Some(chebyshev_bound(self.p_hat, self.b, epsilon));
        Ok(self)
    }
}

pub fn estimate_p(a: u64, b: u64, p_lb: f64) -> Result<PEstimate> {
    if b == 0 {
        return Err(Error::invalid("sample size b must be at least 1"));
    }
    if a > b {
        return Err(Error::invalid(format!("a = {a} exceeds b = {b}")));
    }
    if !(0.0..=1.0).contains(&p_lb) {
        return Err(Error::invalid(format!("p_lb = {p_lb} outside [0, 1]")));
    }
    let p_hat = p_lb.max(a as f64 / b as f64);
    Ok(PEstimate {
        a,
        b,
        p_lb,
        p_hat,
        epsilon: None,
        q_prob: None,
        chebyshev_bound: None,
    })
}

/// Right-hand side `p / (b ε²)` of the Chebyshev error bound.
pub fn chebyshev_bound(p: f64, b: u64, epsilon: f64) -> f64 {
    p / (b as f64 * epsilon * epsilon)
}

fn check_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} = {v} must lie in (0, 1)")))
    }
}

/// Number of random labels needed to bound the estimation error by `epsilon`
/// with failure probability `q_prob`: `ceil(1 / (ε q))`.
pub fn chebyshev_budget(epsilon: f64, q_prob: f64) -> Result<u64> {
    check_open_unit("epsilon", epsilon)?;
    check_open_unit("q", q_prob)?;
    let exact = 1.0 / (epsilon * q_prob);
    // 0.01 * 0.05 is not exactly 5e-4; snap results within rounding noise of an integer.
    let nearest = exact.round();
    let b = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    Ok(b as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub epsilon: f64,
    pub q_prob: f64,
    pub budget: u64,
    pub p: Option<f64>,
    pub bound: Option<f64>,
    /// The bound is at least 1 and therefore says nothing.
    pub vacuous: Option<bool>,
}

/// Budget plus, when `p` is known, the bound evaluated at that budget (or at
/// `b_override` when given).
pub fn budget_report(
    epsilon: f64,
    q_prob: f64,
    p: Option<f64>,
    b_override: Option<u64>,
) -> Result<BudgetReport> {
    let budget = chebyshev_budget(epsilon, q_prob)?;
    let b = b_override.unwrap_or(budget);
    let bound = p.map(|p| chebyshev_bound(p, b, epsilon));
    Ok(BudgetReport {
        epsilon,
        q_prob,
        budget,
        p,
        bound,
        vacuous: bound.map(|v| v >= 1.0),
    })
}

/// Pairs drawn uniformly without replacement from the pair universe minus
/// `exclude`. The seed is kept so the sample can be regenerated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomSample {
    pub seed: u64,
    pub pairs: Vec<Pair>,
}

pub fn sample_random_pairs(
    corpus: &Corpus,
    exclude: &HashSet<Pair>,
    b: usize,
    seed: u64,
) -> Result<RandomSample> {
    let offsets: Vec<u64> = corpus
        .queries()
        .iter()
        .scan(0u64, |acc, q| {
            let start = *acc;
            *acc += corpus.num_candidates(q) as u64;
            Some(start)
        })
        .collect();
    let universe = corpus.num_pairs();
    let queries: HashSet<&ItemId> = corpus.queries().iter().collect();
    let excluded_in_universe = exclude
        .iter()
        .filter(|p| {
            p.query != p.candidate
                && corpus.contains_item(&p.candidate)
                && queries.contains(&p.query)
        })
        .count() as u64;
    let available = universe - excluded_in_universe;
    if (b as u64) > available {
        return Err(Error::invalid(format!(
            "requested {b} random pairs but only {available} are available"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn = HashSet::with_capacity(b);
    let mut pairs = Vec::with_capacity(b);
    while pairs.len() < b {
        let g = rng.gen_range(0..universe);
        let qi = offsets.partition_point(|&o| o <= g) - 1;
        let query = &corpus.queries()[qi];
        let candidate = corpus
            .candidate_at(query, (g - offsets[qi]) as usize)
            .expect("offset within candidate pool");
        let pair = Pair::new(query.clone(), candidate.clone());
        if exclude.contains(&pair) || !drawn.insert(pair.clone()) {
            continue;
        }
        pairs.push(pair);
    }
    Ok(RandomSample { seed, pairs })
}
