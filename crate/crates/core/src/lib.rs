//! Ensemble-based discovery of near-duplicate pairs, expert label resolution
//! and ranking evaluation that is robust to how the labeled pairs were found.
//!
//! The workflow runs in four stages:
//!
//! 1. [`discovery`]: every model in an ensemble proposes its top-k candidates
//!    per query, and the proposals are merged into one [`SuspectSet`].
//! 2. [`annotation`]: experts vote on the suspect pairs, votes resolve by
//!    majority, and the positive rate is estimated.
//! 3. [`metrics`]: models are scored against the resolved labels with
//!    HR@k, MRR@k, ROC-AUC and PR-AUC.
//! 4. [`robustness`]: leave-one-out subsets check that the ranking of models
//!    does not hinge on any single model having proposed the pairs.
//!
//! [`service`] holds the state behind the annotation HTTP API, [`formats`]
//! the on-disk layouts, and [`synthetic`] a seeded corpus generator.

pub mod annotation;
pub mod corpus;
pub mod discovery;
pub mod error;
pub mod formats;
pub mod metrics;
pub mod robustness;
pub mod service;
pub mod synthetic;

pub use annotation::{
    budget_report, chebyshev_bound, chebyshev_budget, estimate_p, lower_bound_p, majority,
    resolve_labels, sample_random_pairs, ExpertId, GroundTruth, GroundTruthSource, PEstimate,
    ResolvedLabel, Vote, VoteBook,
};
pub use corpus::{
    identity_ground_truth, rank_candidates, Corpus, EmbeddingTable, ItemId, ModelHandle, Pair,
    QueryRanking, RankList, ScoreList,
};
pub use discovery::{
    build_suspects_per_model, cost_report, duplication_stats, overlap_matrix, union_dedupe,
    CostReport, OverlapMatrix, SuspectPair, SuspectSet,
};
pub use error::{Error, Result};
pub use metrics::{evaluate, EvalConfig, MetricReport, NegativeSource, SamplingConfig};
pub use robustness::{loo_report, spearman, LooConfig, PermutationMode, RobustnessReport};
pub use service::{AnnotationStore, ProgressSnapshot, TaskBatch};
