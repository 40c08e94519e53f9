//! Leave-one-out stability of model rankings.
//!
//! For every generator in the suspect set, the labels are restricted to pairs
//! that some *other* generator also proposed, every model is re-evaluated on
//! that subset, and the resulting model ranking is compared with the ranking
//! on the full label set by Spearman correlation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::GroundTruth;
use crate::corpus::{Corpus, ModelHandle};
use crate::discovery::SuspectSet;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_ranked, EvalConfig, HitAveraging, NegativeSource, RankedModel};

#[derive(Clone, Debug)]
pub struct LooSubset {
    pub excluded_model: String,
    pub labels: GroundTruth,
}

/// One subset per generator; a pair survives unless `excluded_model` was its
/// only proposer.
pub fn leave_one_out_subsets(s: &SuspectSet, gt: &GroundTruth) -> Result<Vec<LooSubset>> {
    for pair in gt.labels().keys() {
        if !s.contains(pair) {
            return Err(Error::UnknownPair {
                query: pair.query.to_string(),
                candidate: pair.candidate.to_string(),
            });
        }
    }
    Ok(s.models()
        .iter()
        .map(|excluded| LooSubset {
            excluded_model: excluded.clone(),
            labels: gt.filter(|pair| {
                s.get(pair)
                    .expect("checked above")
                    .proposers
                    .iter()
                    .any(|p| &p.model != excluded)
            }),
        })
        .collect())
}

/// Ranks with ties replaced by their average (1-based).
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Twice the centered average ranks. Average ranks are half-integers, so
/// these are exact integers and correlation numerators can be compared
/// without rounding error.
fn centered_ranks(values: &[f64]) -> Vec<i64> {
    let n = values.len() as i64;
    average_ranks(values)
        .into_iter()
        .map(|r| (2.0 * r) as i64 - (n + 1))
        .collect()
}

fn check_inputs(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "rankings have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::invalid("spearman needs at least two values"));
    }
    Ok(())
}

struct Centered {
    a: Vec<i64>,
    b: Vec<i64>,
    norm: f64,
}

fn centered_pair(a: &[f64], b: &[f64]) -> Result<Centered> {
    check_inputs(a, b)?;
    let ca = centered_ranks(a);
    let cb = centered_ranks(b);
    let ssa: i64 = ca.iter().map(|x| x * x).sum();
    let ssb: i64 = cb.iter().map(|x| x * x).sum();
    if ssa == 0 || ssb == 0 {
        return Err(Error::ZeroVariance);
    }
    Ok(Centered {
        a: ca,
        b: cb,
        norm: ((ssa as f64) * (ssb as f64)).sqrt(),
    })
}

fn dot(a: &[i64], b: &[i64]) -> i64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    let c = centered_pair(a, b)?;
    Ok((dot(&c.a, &c.b) as f64 / c.norm).clamp(-1.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PermutationMode {
    /// Exact enumeration up to 10 values, Monte-Carlo with 10,000 draws beyond.
    Auto { seed: u64 },
    Exact,
    MonteCarlo { draws: u64, seed: u64 },
}

impl Default for PermutationMode {
    fn default() -> Self {
        PermutationMode::Auto { seed: 0 }
    }
}

pub const EXACT_LIMIT: usize = 10;
pub const MIN_DRAWS: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationTest {
    pub sc: f64,
    /// One-sided: the share of permutations whose SC is at least the observed one.
    pub p_value: f64,
    pub permutations: u64,
    pub exact: bool,
}

/// Permutation test of the zero-correlation null. The identity permutation is
/// always counted, so `p ≥ 1/total`.
pub fn permutation_p_value(a: &[f64], b: &[f64], mode: PermutationMode) -> Result<PermutationTest> {
    let c = centered_pair(a, b)?;
    let observed = dot(&c.a, &c.b);
    let sc = (observed as f64 / c.norm).clamp(-1.0, 1.0);
    let n = a.len();
    let (exact, draws, seed) = match mode {
        PermutationMode::Exact => (true, 0, 0),
        PermutationMode::Auto { seed } => (n <= EXACT_LIMIT, MIN_DRAWS, seed),
        PermutationMode::MonteCarlo { draws, seed } => {
            if draws < MIN_DRAWS {
                return Err(Error::invalid(format!(
                    "Monte-Carlo mode needs at least {MIN_DRAWS} draws"
                )));
            }
            (false, draws, seed)
        }
    };
    if exact {
        if n > 12 {
            return Err(Error::invalid(format!("exact enumeration of {n}! permutations")));
        }
        let (hits, total) = enumerate_at_least(&c.a, &c.b, observed);
        return Ok(PermutationTest {
            sc,
            p_value: hits as f64 / total as f64,
            permutations: total,
            exact: true,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm = c.b.clone();
    let mut hits = 1u64;
    for _ in 0..draws {
        perm.shuffle(&mut rng);
        if dot(&c.a, &perm) >= observed {
            hits += 1;
        }
    }
    Ok(PermutationTest {
        sc,
        p_value: hits as f64 / (draws + 1) as f64,
        permutations: draws + 1,
        exact: false,
    })
}

/// Heap's algorithm over all permutations of `b`.
fn enumerate_at_least(a: &[i64], b: &[i64], observed: i64) -> (u64, u64) {
    let mut perm = b.to_vec();
    let n = perm.len();
    let mut counters = vec![0usize; n];
    let mut hits = u64::from(dot(a, &perm) >= observed);
    let mut total = 1u64;
    let mut i = 0;
    while i < n {
        if counters[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(counters[i], i);
            }
            total += 1;
            if dot(a, &perm) >= observed {
                hits += 1;
            }
            counters[i] += 1;
            i = 0;
        } else {
            counters[i] = 0;
            i += 1;
        }
    }
    (hits, total)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AucCell {
    pub micro: Option<f64>,
    #[serde(rename = "macro")]
    pub macro_: Option<f64>,
    pub queries_evaluated: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpearmanCell {
    pub sc: Option<f64>,
    pub p_value: Option<f64>,
    pub models_compared: usize,
    pub exact: bool,
    /// Why the correlation is missing or special-cased.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub excluded_model: String,
    pub num_pairs: usize,
    pub cells: BTreeMap<String, AucCell>,
    pub spearman_macro: SpearmanCell,
    pub spearman_micro: SpearmanCell,
}

/// Mean and population standard deviation across the subsets where the value
/// was defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(MeanStd {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub micro: Option<MeanStd>,
    #[serde(rename = "macro")]
    pub macro_: Option<MeanStd>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LooConfig {
    pub permutation: PermutationMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub config: LooConfig,
    pub models: Vec<String>,
    pub full: BTreeMap<String, AucCell>,
    pub per_subset: Vec<SubsetResult>,
    /// Across subsets; `std` is the population standard deviation.
    pub summary: BTreeMap<String, ModelSummary>,
}

impl RobustnessReport {
    /// Models ordered best-first by macro AUC on `subset` (or the full
    /// labels); `None` for an unknown subset.
    pub fn ranking(&self, subset: Option<&str>) -> Option<Vec<String>> {
        let cells = match subset {
            None => &self.full,
            Some(name) => &self.per_subset.iter().find(|s| s.excluded_model == name)?.cells,
        };
        let mut scored: Vec<(&String, f64)> = cells
            .iter()
            .filter_map(|(m, c)| c.macro_.map(|v| (m, v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        Some(scored.into_iter().map(|(m, _)| m.clone()).collect())
    }
}

fn auc_cell(ranked: &RankedModel, gt: &GroundTruth) -> Result<AucCell> {
    let config = EvalConfig {
        ks: vec![],
        negatives: NegativeSource::Annotated,
        hit_averaging: HitAveraging::PerPair,
    };
    let r = evaluate_ranked(ranked, gt, &config, &[])?;
    Ok(AucCell {
        micro: r.roc_auc_micro,
        macro_: r.roc_auc_macro,
        queries_evaluated: r.queries_evaluated,
    })
}

fn compare(
    full: &BTreeMap<String, AucCell>,
    subset: &BTreeMap<String, AucCell>,
    pick: impl Fn(&AucCell) -> Option<f64>,
    mode: PermutationMode,
) -> SpearmanCell {
    let (a, b): (Vec<f64>, Vec<f64>) = full
        .iter()
        .filter_map(|(m, cell)| Some((pick(cell)?, pick(&subset[m])?)))
        .unzip();
    let missing = |note: &str| SpearmanCell {
        sc: None,
        p_value: None,
        models_compared: a.len(),
        exact: false,
        note: Some(note.to_string()),
    };
    if a.len() < 2 {
        return missing("fewer than two evaluable models");
    }
    match permutation_p_value(&a, &b, mode) {
        Ok(t) => SpearmanCell {
            sc: Some(t.sc),
            p_value: Some(t.p_value),
            models_compared: a.len(),
            exact: t.exact,
            note: None,
        },
        Err(Error::ZeroVariance) if average_ranks(&a) == average_ranks(&b) => SpearmanCell {
            sc: Some(1.0),
            p_value: Some(1.0),
            models_compared: a.len(),
            exact: true,
            note: Some("all models tied in both rankings".to_string()),
        },
        Err(Error::ZeroVariance) => missing("all models tied in one ranking"),
        Err(e) => missing(&e.to_string()),
    }
}

/// Evaluates every model on the full labels and on each leave-one-out subset.
pub fn loo_report(
    corpus: &Corpus,
    models: &[ModelHandle],
    s: &SuspectSet,
    gt: &GroundTruth,
    config: &LooConfig,
) -> Result<RobustnessReport> {
    let subsets = leave_one_out_subsets(s, gt)?;
    let ranked: Vec<RankedModel> = models
        .iter()
        .map(|m| RankedModel::for_ground_truth(m, corpus, gt))
        .collect::<Result<_>>()?;
    let cells = |labels: &GroundTruth| -> Result<BTreeMap<String, AucCell>> {
        ranked
            .iter()
            .map(|r| Ok((r.name().to_string(), auc_cell(r, labels)?)))
            .collect()
    };
    let full = cells(gt)?;
    let mut per_subset = Vec::with_capacity(subsets.len());
    for subset in &subsets {
        let sub = cells(&subset.labels)?;
        per_subset.push(SubsetResult {
            excluded_model: subset.excluded_model.clone(),
            num_pairs: subset.labels.len(),
            spearman_macro: compare(&full, &sub, |c| c.macro_, config.permutation),
            spearman_micro: compare(&full, &sub, |c| c.micro, config.permutation),
            cells: sub,
        });
    }
    let summary = ranked
        .iter()
        .map(|r| {
            let name = r.name();
            let collect = |pick: fn(&AucCell) -> Option<f64>| -> Vec<f64> {
                per_subset.iter().filter_map(|s| pick(&s.cells[name])).collect()
            };
            let summary = ModelSummary {
                micro: MeanStd::of(&collect(|c| c.micro)),
                macro_: MeanStd::of(&collect(|c| c.macro_)),
            };
            (name.to_string(), summary)
        })
        .collect();
    Ok(RobustnessReport {
        config: config.clone(),
        models: ranked.iter().map(|r| r.name().to_string()).collect(),
        full,
        per_subset,
        summary,
    })
}
