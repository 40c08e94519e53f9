//! Items, queries and the similarity models that rank candidates for a query.
//!
//! A model is either an embedding table (cosine similarity) or a precomputed
//! score list. Either way it yields a deterministic ordering of the candidate
//! pool `items \ {q}`: score descending, ties broken by ascending [`ItemId`].

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::annotation::{GroundTruth, GroundTruthSource};
use crate::error::{Error, Result};

/// Opaque item identifier. Non-empty and free of whitespace so it can live in
/// a TSV column.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ItemId(String);

impl ItemId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(Error::InvalidId(id));
        }
        Ok(ItemId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ItemId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        ItemId::new(value)
    }
}

impl From<ItemId> for String {
    fn from(id: ItemId) -> String {
        id.0
    }
}

impl std::str::FromStr for ItemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ItemId::new(s)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for ItemId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// A (query, candidate) pair. Ordered by query, then candidate.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub query: ItemId,
    pub candidate: ItemId,
}

impl Pair {
    pub fn new(query: ItemId, candidate: ItemId) -> Self {
        Pair { query, candidate }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.query, self.candidate)
    }
}

/// The candidate catalog and the query set.
///
/// Queries may be disjoint from items (images in the wild). When a query is
/// also an item it is never its own candidate.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    items: Vec<ItemId>,
    item_index: HashMap<ItemId, usize>,
    queries: Vec<ItemId>,
    image_paths: BTreeMap<ItemId, PathBuf>,
    id_labels: Option<BTreeMap<ItemId, String>>,
    category_labels: Option<BTreeMap<ItemId, String>>,
}

impl Corpus {
    pub fn new(items: Vec<ItemId>, queries: Vec<ItemId>) -> Result<Self> {
        let mut item_index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if item_index.insert(item.clone(), i).is_some() {
                return Err(Error::DuplicateId(item.to_string()));
            }
        }
        let mut seen = HashSet::with_capacity(queries.len());
        for q in &queries {
            if !seen.insert(q) {
                return Err(Error::DuplicateId(q.to_string()));
            }
        }
        Ok(Corpus {
            items,
            item_index,
            queries,
            ..Default::default()
        })
    }

    pub fn with_image_paths(mut self, paths: BTreeMap<ItemId, PathBuf>) -> Self {
        self.image_paths = paths;
        self
    }

    pub fn with_identity_labels(mut self, labels: BTreeMap<ItemId, String>) -> Self {
        self.id_labels = Some(labels);
        self
    }

    pub fn with_category_labels(mut self, labels: BTreeMap<ItemId, String>) -> Self {
        self.category_labels = Some(labels);
        self
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn queries(&self) -> &[ItemId] {
        &self.queries
    }

    pub fn contains_item(&self, id: &ItemId) -> bool {
        self.item_index.contains_key(id)
    }

    pub fn item_position(&self, id: &ItemId) -> Option<usize> {
        self.item_index.get(id).copied()
    }

    /// The `j`-th candidate of `query` in item order, skipping the query itself.
    pub fn candidate_at(&self, query: &ItemId, j: usize) -> Option<&ItemId> {
        let j = match self.item_position(query) {
            Some(pos) if j >= pos => j + 1,
            _ => j,
        };
        self.items.get(j)
    }

    /// Candidate pool for `query`: every item except the query itself.
    pub fn candidates<'a>(&'a self, query: &'a ItemId) -> impl Iterator<Item = &'a ItemId> + 'a {
        self.items.iter().filter(move |c| *c != query)
    }

    /// `|D_{-q}|`
    pub fn num_candidates(&self, query: &ItemId) -> usize {
        self.items.len() - usize::from(self.contains_item(query))
    }

    /// Size of the full pair universe: the sum of candidate pool sizes over queries.
    pub fn num_pairs(&self) -> u64 {
        self.queries
            .iter()
            .map(|q| self.num_candidates(q) as u64)
            .sum()
    }

    pub fn image_path(&self, id: &ItemId) -> Option<&PathBuf> {
        self.image_paths.get(id)
    }

    pub fn identity(&self, id: &ItemId) -> Option<&str> {
        self.id_labels.as_ref()?.get(id).map(String::as_str)
    }

    pub fn category(&self, id: &ItemId) -> Option<&str> {
        self.category_labels.as_ref()?.get(id).map(String::as_str)
    }

    pub fn has_identity_labels(&self) -> bool {
        self.id_labels.is_some()
    }
}

/// Dense vectors keyed by item, stored at 64-bit precision.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<ItemId, usize>,
    ids: Vec<ItemId>,
    values: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(EmbeddingTable {
            dim,
            index: HashMap::new(),
            ids: Vec::new(),
            values: Vec::new(),
            sq_norms: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, id: ItemId, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector for `{id}` has {} values, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("vector for `{id}` has a non-finite value")));
        }
        let sq_norm = vector.iter().map(|v| v * v).sum::<f64>();
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.values.extend_from_slice(vector);
        self.sq_norms.push(sq_norm);
        Ok(())
    }

    pub fn get(&self, id: &ItemId) -> Option<&[f64]> {
        let row = *self.index.get(id)?;
        Some(&self.values[row * self.dim..(row + 1) * self.dim])
    }

    pub fn ids(&self) -> &[ItemId] {
        &self.ids
    }

    fn row(&self, id: &ItemId) -> Option<(&[f64], f64)> {
        let row = *self.index.get(id)?;
        Some((&self.values[row * self.dim..(row + 1) * self.dim], self.sq_norms[row]))
    }
}

/// Precomputed `(query, candidate) -> score` table.
#[derive(Clone, Debug, Default)]
pub struct ScoreList {
    scores: HashMap<ItemId, HashMap<ItemId, f64>>,
}

impl ScoreList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: ItemId, candidate: ItemId, score: f64) -> Result<()> {
        if !score.is_finite() {
            return Err(Error::invalid(format!(
                "score for ({query}, {candidate}) is not finite"
            )));
        }
        let row = self.scores.entry(query.clone()).or_default();
        if row.insert(candidate.clone(), score).is_some() {
            return Err(Error::DuplicateId(format!("{query}\t{candidate}")));
        }
        Ok(())
    }

    pub fn get(&self, query: &ItemId, candidate: &ItemId) -> Option<f64> {
        self.scores.get(query)?.get(candidate).copied()
    }

    pub fn has_query(&self, query: &ItemId) -> bool {
        self.scores.contains_key(query)
    }

    pub fn num_rows(&self) -> usize {
        self.scores.values().map(HashMap::len).sum()
    }
}

#[derive(Clone, Debug)]
pub enum ModelSource {
    Embeddings(EmbeddingTable),
    Scores(ScoreList),
}

/// A named similarity model.
#[derive(Clone, Debug)]
pub struct ModelHandle {
    name: String,
    source: ModelSource,
}

impl ModelHandle {
    /// Wraps an embedding table. Zero-norm vectors are rejected here so that
    /// cosine similarity is always defined.
    pub fn from_embeddings(name: impl Into<String>, table: EmbeddingTable) -> Result<Self> {
        let name = name.into();
        if let Some(row) = table.sq_norms.iter().position(|n| *n == 0.0) {
            return Err(Error::ZeroNorm {
                model: name,
                item: table.ids[row].to_string(),
            });
        }
        Ok(ModelHandle {
            name,
            source: ModelSource::Embeddings(table),
        })
    }

    pub fn from_scores(name: impl Into<String>, scores: ScoreList) -> Self {
        ModelHandle {
            name: name.into(),
            source: ModelSource::Scores(scores),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn source(&self) -> &ModelSource {
        &self.source
    }

    pub fn dim(&self) -> Option<usize> {
        match &self.source {
            ModelSource::Embeddings(t) => Some(t.dim()),
            ModelSource::Scores(_) => None,
        }
    }

    /// Cosine similarity for embedding sources, the stored score for score lists.
    pub fn similarity(&self, q: &ItemId, c: &ItemId) -> Result<f64> {
        match &self.source {
            ModelSource::Embeddings(table) => {
                let (a, na) = table.row(q).ok_or_else(|| self.unknown(q))?;
                let (b, nb) = table.row(c).ok_or_else(|| self.unknown(c))?;
                Ok(cosine(a, na, b, nb))
            }
            ModelSource::Scores(list) => {
                if !list.has_query(q) {
                    return Err(self.unknown(q));
                }
                list.get(q, c).ok_or_else(|| self.unknown(c))
            }
        }
    }

    /// Checks that the model can score every query of the corpus, and for
    /// embedding tables, every item as well.
    pub fn check_coverage(&self, corpus: &Corpus) -> Result<()> {
        match &self.source {
            ModelSource::Embeddings(table) => {
                for id in corpus.items().iter().chain(corpus.queries()) {
                    if table.row(id).is_none() {
                        return Err(self.unknown(id));
                    }
                }
            }
            ModelSource::Scores(list) => {
                for q in corpus.queries() {
                    if !list.has_query(q) {
                        return Err(self.unknown(q));
                    }
                }
            }
        }
        Ok(())
    }

    fn unknown(&self, id: &ItemId) -> Error {
        Error::UnknownItem {
            model: self.name.clone(),
            item: id.to_string(),
        }
    }

    /// Scores every candidate of `query`. Candidates a score list does not
    /// cover get `None` and sort after all scored candidates.
    pub(crate) fn score_pool<'a>(
        &self,
        query: &'a ItemId,
        corpus: &'a Corpus,
    ) -> Result<Vec<(&'a ItemId, Option<f64>)>> {
        match &self.source {
            ModelSource::Embeddings(table) => {
                let (qv, qn) = table.row(query).ok_or_else(|| self.unknown(query))?;
                corpus
                    .candidates(query)
                    .map(|c| {
                        let (cv, cn) = table.row(c).ok_or_else(|| self.unknown(c))?;
                        Ok((c, Some(cosine(qv, qn, cv, cn))))
                    })
                    .collect()
            }
            ModelSource::Scores(list) => {
                let row = list.scores.get(query).ok_or_else(|| self.unknown(query))?;
                Ok(corpus
                    .candidates(query)
                    .map(|c| (c, row.get(c).copied()))
                    .collect())
            }
        }
    }
}

/// Cosine from squared norms; identical vectors give exactly 1.
fn cosine(a: &[f64], sq_a: f64, b: &[f64], sq_b: f64) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (sq_a * sq_b).sqrt()).clamp(-1.0, 1.0)
}

/// Ordering used for every ranking: higher score first, unscored last, then
/// ascending id.
pub(crate) fn rank_order(a: (&ItemId, Option<f64>), b: (&ItemId, Option<f64>)) -> Ordering {
    let by_score = match (a.1, b.1) {
        (Some(x), Some(y)) => y.partial_cmp(&x).unwrap_or(Ordering::Equal),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    by_score.then_with(|| a.0.cmp(b.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub candidate: ItemId,
    pub score: f64,
    pub rank: usize,
}

/// Top candidates for one query under one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankList {
    pub query: ItemId,
    pub entries: Vec<RankEntry>,
    /// Set when fewer than the requested number of candidates were available.
    pub truncated: bool,
}

impl RankList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn candidates(&self) -> impl Iterator<Item = &ItemId> {
        self.entries.iter().map(|e| &e.candidate)
    }
}

/// Returns the `top_n` best candidates for `query`.
///
/// For score-list models only scored candidates are eligible; if fewer than
/// `top_n` exist, all of them are returned with `truncated` set.
pub fn rank_candidates(
    model: &ModelHandle,
    query: &ItemId,
    corpus: &Corpus,
    top_n: usize,
) -> Result<RankList> {
    if top_n == 0 {
        return Err(Error::invalid("top_n must be at least 1"));
    }
    let mut pool: Vec<(&ItemId, f64)> = model
        .score_pool(query, corpus)?
        .into_iter()
        .filter_map(|(c, s)| s.map(|s| (c, s)))
        .collect();
    let cmp = |a: &(&ItemId, f64), b: &(&ItemId, f64)| rank_order((a.0, Some(a.1)), (b.0, Some(b.1)));
    let truncated = pool.len() < top_n;
    if pool.len() > top_n {
        pool.select_nth_unstable_by(top_n - 1, cmp);
        pool.truncate(top_n);
    }
    pool.sort_unstable_by(cmp);
    Ok(RankList {
        query: query.clone(),
        entries: pool
            .into_iter()
            .enumerate()
            .map(|(rank, (c, score))| RankEntry {
                candidate: c.clone(),
                score,
                rank,
            })
            .collect(),
        truncated,
    })
}

/// The full ranking of a query's candidate pool, with the rank of every
/// candidate (including candidates a score list leaves unscored).
#[derive(Clone, Debug)]
pub struct QueryRanking {
    pub query: ItemId,
    order: Vec<(ItemId, Option<f64>)>,
    position: HashMap<ItemId, usize>,
}

impl QueryRanking {
    pub fn compute(model: &ModelHandle, query: &ItemId, corpus: &Corpus) -> Result<Self> {
        let mut pool = model.score_pool(query, corpus)?;
        pool.sort_unstable_by(|a, b| rank_order(*a, *b));
        let order: Vec<(ItemId, Option<f64>)> =
            pool.into_iter().map(|(c, s)| (c.clone(), s)).collect();
        let position = order
            .iter()
            .enumerate()
            .map(|(i, (c, _))| (c.clone(), i))
            .collect();
        Ok(QueryRanking {
            query: query.clone(),
            order,
            position,
        })
    }

    /// Zero-based rank of `candidate`, `None` if it is not in the pool.
    pub fn rank(&self, candidate: &ItemId) -> Option<usize> {
        self.position.get(candidate).copied()
    }

    /// Score of `candidate`; unscored candidates report negative infinity.
    pub fn score(&self, candidate: &ItemId) -> Option<f64> {
        let (_, s) = &self.order[self.rank(candidate)?];
        Some(s.unwrap_or(f64::NEG_INFINITY))
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Candidates at ranks `lo..hi` (clamped to the pool size).
    pub fn window(&self, lo: usize, hi: usize) -> impl Iterator<Item = &ItemId> {
        let hi = hi.min(self.order.len());
        let lo = lo.min(hi);
        self.order[lo..hi].iter().map(|(c, _)| c)
    }
}

/// Ground truth where `(q, c)` is positive iff both carry the same identity
/// label. Items without an identity label are left unlabeled.
pub fn identity_ground_truth(corpus: &Corpus) -> Result<GroundTruth> {
    if !corpus.has_identity_labels() {
        return Err(Error::MissingIdentityLabels);
    }
    let mut labels = BTreeMap::new();
    for q in corpus.queries() {
        let Some(q_id) = corpus.identity(q) else {
            continue;
        };
        for c in corpus.candidates(q) {
            if let Some(c_id) = corpus.identity(c) {
                labels.insert(Pair::new(q.clone(), c.clone()), q_id == c_id);
            }
        }
    }
    Ok(GroundTruth::from_labels(labels, 1, GroundTruthSource::IdentityDerived))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    fn table(rows: &[(&str, &[f64])]) -> ModelHandle {
        let mut t = EmbeddingTable::new(rows[0].1.len()).unwrap();
        for (name, v) in rows {
            t.insert(id(name), v).unwrap();
        }
        ModelHandle::from_embeddings("m", t).unwrap()
    }

    #[test]
    fn item_id_rejects_whitespace_and_empty() {
        assert!(ItemId::new("").is_err());
        assert!(ItemId::new("a b").is_err());
        assert!(ItemId::new("a\tb").is_err());
        assert!(ItemId::new("img_001.jpg").is_ok());
    }

    #[test]
    fn cosine_examples() {
        let m = table(&[("a", &[1.0, 1.0]), ("b", &[1.0, 0.0]), ("c", &[0.0, 1.0]), ("d", &[1.0, 1.0])]);
        assert_eq!(m.similarity(&id("a"), &id("d")).unwrap(), 1.0);
        assert_eq!(m.similarity(&id("b"), &id("c")).unwrap(), 0.0);
        let s = m.similarity(&id("a"), &id("b")).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert!(matches!(
            m.similarity(&id("a"), &id("zz")),
            Err(Error::UnknownItem { .. })
        ));
    }

    #[test]
    fn zero_norm_is_rejected() {
        let mut t = EmbeddingTable::new(2).unwrap();
        t.insert(id("a"), &[0.0, 0.0]).unwrap();
        assert!(matches!(
            ModelHandle::from_embeddings("m", t),
            Err(Error::ZeroNorm { .. })
        ));
    }

    #[test]
    fn one_dimensional_ranking() {
        let m = table(&[("q", &[1.0]), ("a", &[1.0]), ("b", &[-1.0])]);
        let corpus = Corpus::new(vec![id("a"), id("b")], vec![id("q")]).unwrap();
        let list = rank_candidates(&m, &id("q"), &corpus, 2).unwrap();
        assert_eq!(
            list.entries,
            vec![
                RankEntry { candidate: id("a"), score: 1.0, rank: 0 },
                RankEntry { candidate: id("b"), score: -1.0, rank: 1 },
            ]
        );
        assert!(!list.truncated);
    }

    #[test]
    fn self_exclusion_and_truncation() {
        let m = table(&[("a", &[1.0, 0.0]), ("b", &[0.5, 0.5]), ("c", &[0.0, 1.0])]);
        let corpus = Corpus::new(vec![id("a"), id("b"), id("c")], vec![id("a")]).unwrap();
        let list = rank_candidates(&m, &id("a"), &corpus, 3).unwrap();
        assert_eq!(list.len(), 2);
        assert!(list.truncated);
        assert!(list.candidates().all(|c| c != &id("a")));
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let m = table(&[("q", &[1.0, 0.0]), ("z", &[1.0, 1.0]), ("y", &[1.0, 1.0]), ("x", &[0.0, 1.0])]);
        let corpus = Corpus::new(vec![id("z"), id("y"), id("x")], vec![id("q")]).unwrap();
        let list = rank_candidates(&m, &id("q"), &corpus, 3).unwrap();
        let order: Vec<&str> = list.candidates().map(ItemId::as_str).collect();
        assert_eq!(order, ["y", "z", "x"]);
    }

    #[test]
    fn score_list_ranks_only_scored_candidates() {
        let mut s = ScoreList::new();
        s.insert(id("q"), id("a"), 0.2).unwrap();
        s.insert(id("q"), id("b"), 0.9).unwrap();
        let m = ModelHandle::from_scores("s", s);
        let corpus = Corpus::new(vec![id("a"), id("b"), id("c")], vec![id("q")]).unwrap();
        let list = rank_candidates(&m, &id("q"), &corpus, 3).unwrap();
        let order: Vec<&str> = list.candidates().map(ItemId::as_str).collect();
        assert_eq!(order, ["b", "a"]);
        assert!(list.truncated);

        let full = QueryRanking::compute(&m, &id("q"), &corpus).unwrap();
        assert_eq!(full.rank(&id("c")), Some(2));
        assert_eq!(full.score(&id("c")), Some(f64::NEG_INFINITY));
    }

    #[test]
    fn identity_truth_three_items() {
        let corpus = Corpus::new(vec![id("a"), id("b"), id("c")], vec![id("a")])
            .unwrap()
            .with_identity_labels(
                [("a", "x"), ("b", "x"), ("c", "y")]
                    .into_iter()
                    .map(|(i, l)| (id(i), l.to_string()))
                    .collect(),
            );
        let gt = identity_ground_truth(&corpus).unwrap();
        assert_eq!(gt.label(&Pair::new(id("a"), id("b"))), Some(true));
        assert_eq!(gt.label(&Pair::new(id("a"), id("c"))), Some(false));
        assert_eq!(gt.len(), 2);
    }

    #[test]
    fn identity_truth_requires_labels() {
        let corpus = Corpus::new(vec![id("a")], vec![id("a")]).unwrap();
        assert!(matches!(
            identity_ground_truth(&corpus),
            Err(Error::MissingIdentityLabels)
        ));
    }

    #[test]
    fn identity_truth_pair_counts() {
        let both = |labels: &[(&str, &str)]| {
            let ids: Vec<ItemId> = labels.iter().map(|(i, _)| id(i)).collect();
            Corpus::new(ids.clone(), ids)
                .unwrap()
                .with_identity_labels(labels.iter().map(|(i, l)| (id(i), l.to_string())).collect())
        };
        let gt = identity_ground_truth(&both(&[("a", "x"), ("b", "x")])).unwrap();
        assert_eq!(gt.num_positives(), 2);
        let gt = identity_ground_truth(&both(&[("a", "x"), ("b", "y"), ("c", "z")])).unwrap();
        assert_eq!(gt.num_positives(), 0);
    }
}
