//! State behind the annotation service: task dispatch, durable vote ingestion
//! and progress.
//!
//! The vote log is the only source of truth. Everything else here is derived
//! from it and is rebuilt by replaying the log on open.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::annotation::{majority, parse_label, resolve_labels, ExpertId, GroundTruth, ResolvedLabel, Vote};
use crate::corpus::{ItemId, Pair};
use crate::discovery::SuspectSet;
use crate::error::{Error, Result};
use crate::formats::{read_votes, vote_to_json, write_json};

pub type PairId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskItem {
    pub pair_id: PairId,
    pub query: ItemId,
    pub candidate: ItemId,
    pub query_image_url: String,
    pub candidate_image_url: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBatch {
    pub expert: ExpertId,
    pub batch_size: usize,
    pub pairs: Vec<TaskItem>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressSnapshot {
    pub total_pairs: usize,
    /// Pairs with an effective vote from every expert.
    pub fully_reviewed: usize,
    pub per_expert_done: BTreeMap<ExpertId, usize>,
    /// Fully reviewed pairs that resolve positive.
    pub positives_so_far: usize,
    pub running_p_k: f64,
    /// `false` until at least one pair is fully reviewed.
    pub p_k_defined: bool,
    pub votes_logged: usize,
}

pub fn image_url(id: &ItemId) -> String {
    format!("/img/{id}")
}

struct LogWriter {
    path: PathBuf,
    file: File,
}

impl LogWriter {
    fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| Error::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            file,
        })
    }

    /// Writes one line and syncs it to disk.
    fn append(&mut self, v: &Vote) -> Result<()> {
        let mut line = vote_to_json(v)?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.sync_data())
            .map_err(|source| Error::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Suspect pairs, expert roster and the vote log they accumulate.
pub struct AnnotationStore {
    pairs: Vec<Pair>,
    index: HashMap<Pair, PairId>,
    experts: BTreeSet<ExpertId>,
    log: Vec<Vote>,
    effective: Vec<BTreeMap<ExpertId, (DateTime<Utc>, bool)>>,
    writer: Option<LogWriter>,
    snapshot_every: Option<usize>,
}

impl AnnotationStore {
    /// A store without persistence.
    pub fn in_memory(suspects: &SuspectSet, experts: impl IntoIterator<Item = ExpertId>) -> Result<Self> {
        let pairs: Vec<Pair> = suspects.pairs().iter().map(|p| p.pair.clone()).collect();
        let index = pairs.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        let experts: BTreeSet<ExpertId> = experts.into_iter().collect();
        if experts.is_empty() {
            return Err(Error::invalid("at least one expert is required"));
        }
        Ok(AnnotationStore {
            effective: vec![BTreeMap::new(); pairs.len()],
            pairs,
            index,
            experts,
            log: Vec::new(),
            writer: None,
            snapshot_every: None,
        })
    }

    /// Opens (or creates) the vote log at `log_path` and replays it.
    pub fn open(
        suspects: &SuspectSet,
        experts: impl IntoIterator<Item = ExpertId>,
        log_path: impl AsRef<Path>,
    ) -> Result<Self> {
        let log_path = log_path.as_ref();
        let mut store = Self::in_memory(suspects, experts)?;
        if log_path.exists() {
            for v in read_votes(log_path)? {
                store.apply(v)?;
            }
        }
        store.writer = Some(LogWriter::open(log_path)?);
        Ok(store)
    }

    /// Writes a progress snapshot next to the log every `n` votes.
    pub fn with_snapshots_every(mut self, n: usize) -> Self {
        self.snapshot_every = (n > 0).then_some(n);
        self
    }

    pub fn snapshot_path(&self) -> Option<PathBuf> {
        self.writer
            .as_ref()
            .map(|w| w.path.with_extension("snapshot.json"))
    }

    pub fn experts(&self) -> &BTreeSet<ExpertId> {
        &self.experts
    }

    pub fn pair(&self, id: PairId) -> Option<&Pair> {
        self.pairs.get(id)
    }

    pub fn pair_id(&self, pair: &Pair) -> Option<PairId> {
        self.index.get(pair).copied()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn log(&self) -> &[Vote] {
        &self.log
    }

    /// Effective votes on one pair.
    pub fn votes(&self, id: PairId) -> Option<BTreeMap<ExpertId, bool>> {
        self.effective
            .get(id)
            .map(|m| m.iter().map(|(e, (_, l))| (e.clone(), *l)).collect())
    }

    fn check_expert(&self, expert: &ExpertId) -> Result<()> {
        if self.experts.contains(expert) {
            Ok(())
        } else {
            Err(Error::UnknownExpert(expert.to_string()))
        }
    }

    fn apply(&mut self, v: Vote) -> Result<()> {
        self.check_expert(&v.expert)?;
        let id = self.pair_id(&v.pair).ok_or_else(|| Error::UnknownPair {
            query: v.pair.query.to_string(),
            candidate: v.pair.candidate.to_string(),
        })?;
        let slot = self.effective[id].entry(v.expert.clone()).or_insert((v.ts, v.label));
        if v.ts >= slot.0 {
            *slot = (v.ts, v.label);
        }
        self.log.push(v);
        Ok(())
    }

    /// Up to `batch_size` pairs this expert has not voted on, those closest
    /// to full review first, then by pair id.
    pub fn next_batch(&self, expert: &ExpertId, batch_size: usize) -> Result<TaskBatch> {
        self.check_expert(expert)?;
        let mut open: Vec<(usize, PairId)> = self
            .effective
            .iter()
            .enumerate()
            .filter(|(_, votes)| !votes.contains_key(expert))
            .map(|(id, votes)| (votes.len(), id))
            .collect();
        open.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let pairs = open
            .into_iter()
            .take(batch_size)
            .map(|(_, id)| {
                let p = &self.pairs[id];
                TaskItem {
                    pair_id: id,
                    query: p.query.clone(),
                    candidate: p.candidate.clone(),
                    query_image_url: image_url(&p.query),
                    candidate_image_url: image_url(&p.candidate),
                }
            })
            .collect();
        Ok(TaskBatch {
            expert: expert.clone(),
            batch_size,
            pairs,
        })
    }

    /// Validates, durably appends, then applies a vote.
    pub fn submit_vote(
        &mut self,
        expert: &ExpertId,
        pair_id: PairId,
        label: i64,
        ts: DateTime<Utc>,
    ) -> Result<ProgressSnapshot> {
        self.check_expert(expert)?;
        let pair = self.pair(pair_id).ok_or(Error::UnknownPairId(pair_id))?.clone();
        let vote = Vote {
            pair,
            expert: expert.clone(),
            label: parse_label(label)?,
            ts,
        };
        if let Some(w) = self.writer.as_mut() {
            w.append(&vote)?;
        }
        self.apply(vote)?;
        let snapshot = self.progress();
        if let (Some(every), Some(path)) = (self.snapshot_every, self.snapshot_path()) {
            if self.log.len().is_multiple_of(every) {
                write_json(path, &snapshot)?;
            }
        }
        Ok(snapshot)
    }

    pub fn progress(&self) -> ProgressSnapshot {
        let experts = self.experts.len();
        let mut per_expert_done: BTreeMap<ExpertId, usize> =
            self.experts.iter().map(|e| (e.clone(), 0)).collect();
        let mut fully_reviewed = 0;
        let mut positives = 0;
        for votes in &self.effective {
            for e in votes.keys() {
                *per_expert_done.get_mut(e).expect("registered expert") += 1;
            }
            if votes.len() == experts {
                fully_reviewed += 1;
                let yes = votes.values().filter(|(_, l)| *l).count();
                if majority(yes, votes.len()) {
                    positives += 1;
                }
            }
        }
        ProgressSnapshot {
            total_pairs: self.pairs.len(),
            fully_reviewed,
            per_expert_done,
            positives_so_far: positives,
            running_p_k: if fully_reviewed == 0 {
                0.0
            } else {
                positives as f64 / fully_reviewed as f64
            },
            p_k_defined: fully_reviewed > 0,
            votes_logged: self.log.len(),
        }
    }

    pub fn resolve(&self) -> BTreeMap<Pair, ResolvedLabel> {
        resolve_labels(&self.log)
    }

    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth::from_votes(self.log.clone(), self.experts.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::{Proposal, SuspectPair};
    use chrono::TimeZone;

    fn id(s: &str) -> ItemId {
        ItemId::new(s).unwrap()
    }

    fn ex(s: &str) -> ExpertId {
        ExpertId::new(s).unwrap()
    }

    fn suspects(n: usize) -> SuspectSet {
        let pairs = (0..n)
            .map(|i| SuspectPair {
                pair: Pair::new(id("q"), id(&format!("c{i:02}"))),
                proposers: vec![Proposal { model: "m".into(), rank: 0 }],
            })
            .collect();
        SuspectSet::from_pairs(1, pairs).unwrap()
    }

    fn t(s: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + s, 0).unwrap()
    }

    #[test]
    fn batches_and_exhaustion() {
        let mut store = AnnotationStore::in_memory(&suspects(10), [ex("alice")]).unwrap();
        let batch = store.next_batch(&ex("alice"), 4).unwrap();
        assert_eq!(batch.pairs.len(), 4);
        assert_eq!(batch.pairs[0].query_image_url, "/img/q");
        for id in 0..10 {
            store.submit_vote(&ex("alice"), id, 1, t(id as i64)).unwrap();
        }
        assert!(store.next_batch(&ex("alice"), 4).unwrap().pairs.is_empty());
        assert!(matches!(store.next_batch(&ex("eve"), 4), Err(Error::UnknownExpert(_))));
    }

    #[test]
    fn nearly_complete_pairs_come_first() {
        let experts = [ex("a"), ex("b"), ex("c")];
        let mut store = AnnotationStore::in_memory(&suspects(5), experts).unwrap();
        store.submit_vote(&ex("a"), 3, 1, t(0)).unwrap();
        store.submit_vote(&ex("b"), 3, 1, t(1)).unwrap();
        store.submit_vote(&ex("a"), 1, 0, t(2)).unwrap();
        let batch = store.next_batch(&ex("c"), 5).unwrap();
        let order: Vec<PairId> = batch.pairs.iter().map(|p| p.pair_id).collect();
        assert_eq!(order, [3, 1, 0, 2, 4]);
    }

    #[test]
    fn submit_vote_progress() {
        let mut store = AnnotationStore::in_memory(&suspects(3), [ex("a"), ex("b")]).unwrap();
        let p0 = store.progress();
        assert_eq!(p0.fully_reviewed, 0);
        assert!(!p0.p_k_defined);
        assert_eq!(p0.running_p_k, 0.0);

        let s = store.submit_vote(&ex("a"), 0, 1, t(0)).unwrap();
        assert_eq!(s.per_expert_done[&ex("a")], 1);
        let s = store.submit_vote(&ex("a"), 0, 1, t(1)).unwrap();
        assert_eq!(s.per_expert_done[&ex("a")], 1);
        assert_eq!(s.votes_logged, 2);

        assert!(matches!(store.submit_vote(&ex("a"), 0, 2, t(2)), Err(Error::InvalidLabel(2))));
        assert!(matches!(store.submit_vote(&ex("a"), 99, 1, t(2)), Err(Error::UnknownPairId(99))));
        assert_eq!(store.log().len(), 2);

        for pid in 0..3 {
            store.submit_vote(&ex("a"), pid, 1, t(10)).unwrap();
            store.submit_vote(&ex("b"), pid, 1, t(10)).unwrap();
        }
        let s = store.progress();
        assert_eq!(s.fully_reviewed, 3);
        assert_eq!(s.running_p_k, 1.0);
    }

    #[test]
    fn votes_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("votes.jsonl");
        let s = suspects(4);
        {
            let mut store = AnnotationStore::open(&s, [ex("a"), ex("b")], &log)
                .unwrap()
                .with_snapshots_every(2);
            store.submit_vote(&ex("a"), 0, 1, t(0)).unwrap();
            store.submit_vote(&ex("b"), 0, 0, t(1)).unwrap();
            assert!(store.snapshot_path().unwrap().exists());
        }
        let store = AnnotationStore::open(&s, [ex("a"), ex("b")], &log).unwrap();
        assert_eq!(store.log().len(), 2);
        assert_eq!(store.progress().fully_reviewed, 1);
        assert_eq!(store.progress().positives_so_far, 0);
    }

    #[test]
    fn replay_rejects_foreign_experts() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("votes.jsonl");
        let s = suspects(2);
        {
            let mut store = AnnotationStore::open(&s, [ex("a")], &log).unwrap();
            store.submit_vote(&ex("a"), 0, 1, t(0)).unwrap();
        }
        assert!(matches!(
            AnnotationStore::open(&s, [ex("b")], &log),
            Err(Error::UnknownExpert(_))
        ));
    }
}
