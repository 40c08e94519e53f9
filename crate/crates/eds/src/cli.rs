//! Subcommands of the `eds` binary. Each one prints a JSON document to the
//! given writer; `serve` runs until interrupted.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use eds_core::annotation::{budget_report, estimate_p, ExpertId, VoteBook};
use eds_core::corpus::ModelHandle;
use eds_core::discovery::{
    build_suspects_per_model, cost_from_counts, cost_report, duplication_stats, overlap_matrix, union_dedupe,
};
use eds_core::formats::{
    data_dir, load_manifest, load_model, read_labels, read_suspects, read_votes, write_json, write_labels,
    write_suspects,
};
use eds_core::metrics::{evaluate, EvalConfig, HitAveraging, NegativeSource, SamplingConfig, WindowPool};
use eds_core::robustness::{loo_report, LooConfig, PermutationMode};
use eds_core::service::AnnotationStore;
use serde_json::{json, Value};

use crate::server::{router, serve, AppState};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] eds_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "eds", version, about = "Ensemble-based discovery, annotation and evaluation of near-duplicate pairs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the suspect set from every model's top-k candidates.
    Discover(DiscoverArgs),
    /// Pairwise overlap between the models' suspect sets.
    Overlap(OverlapArgs),
    /// Labeling cost of brute force, random sampling and EDS.
    Cost(CostArgs),
    /// Resolve a vote log into labels by strict majority.
    Resolve(ResolveArgs),
    /// MAP estimate of the positive rate from a random sample.
    EstimateP(EstimatePArgs),
    /// Random-sample size needed for a target estimation error.
    Budget(BudgetArgs),
    /// Evaluate models against resolved labels.
    Eval(EvalArgs),
    /// Leave-one-out robustness of the model ranking.
    Loo(LooArgs),
    /// Run the annotation HTTP service.
    Serve(ServeArgs),
}

/// `name=path` pointing at an embeddings or scores file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: String,
    pub path: PathBuf,
}

impl FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once('=') {
            Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok(ModelSpec {
                name: name.to_string(),
                path: PathBuf::from(path),
            }),
            _ => Err(format!("expected <name>=<file>, got `{s}`")),
        }
    }
}

/// Rank window `lo:hi`, half-open.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub lo: usize,
    pub hi: usize,
}

impl FromStr for Window {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parsed = s
            .split_once(':')
            .and_then(|(lo, hi)| Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?)));
        match parsed {
            Some((lo, hi)) if lo < hi => Ok(Window { lo, hi }),
            _ => Err(format!("expected <lo>:<hi> with lo < hi, got `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum NegativeKind {
    Annotated,
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PermutationKind {
    Auto,
    Exact,
    MonteCarlo,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Repeatable; `name=file`.
    #[arg(long = "model", visible_alias = "models", value_delimiter = ',', required = true)]
    pub models: Vec<ModelSpec>,
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    /// Defaults to `suspects.jsonl` in the data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OverlapArgs {
    #[arg(long)]
    pub suspects: PathBuf,
    /// Defaults to one more than the largest recorded rank.
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub suspects: PathBuf,
    #[arg(long)]
    pub p_hat: f64,
    /// Corpus manifest; defaults to `manifest.tsv` in the data directory
    /// unless `--items` is given.
    #[arg(long, conflicts_with = "items")]
    pub corpus: Option<PathBuf>,
    /// Corpus size |D| instead of a manifest; queries are assumed to be items.
    #[arg(long)]
    pub items: Option<u64>,
    /// Query count when no manifest is given; defaults to the queries in the suspects file.
    #[arg(long, requires = "items")]
    pub queries: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ResolveArgs {
    #[arg(long)]
    pub votes: PathBuf,
    #[arg(long)]
    pub suspects: PathBuf,
    /// Registered experts; defaults to everyone in the vote log.
    #[arg(long, value_delimiter = ',')]
    pub experts: Vec<String>,
    /// Defaults to `labels.tsv` in the data directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimatePArgs {
    /// Positives found in the random sample.
    #[arg(long)]
    pub a: u64,
    /// Random sample size.
    #[arg(long)]
    pub b: u64,
    #[arg(long)]
    pub p_lb: f64,
    #[arg(long, requires = "q")]
    pub epsilon: Option<f64>,
    #[arg(long, requires = "epsilon")]
    pub q: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    #[arg(long)]
    pub epsilon: f64,
    #[arg(long)]
    pub q: f64,
    /// Positive rate at which to evaluate the bound.
    #[arg(long)]
    pub p: Option<f64>,
    /// Evaluate the bound at this sample size instead of the budget.
    #[arg(long, requires = "p")]
    pub b: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long = "model", visible_alias = "models", value_delimiter = ',', required = true)]
    pub models: Vec<ModelSpec>,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,9")]
    pub k: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "annotated")]
    pub neg: Vec<NegativeKind>,
    #[arg(long, default_value = "100:500")]
    pub window: Window,
    #[arg(long, default_value_t = 5)]
    pub count: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Draw sampled negatives from the union of these models' windows
    /// instead of the evaluated model's own.
    #[arg(long, value_delimiter = ',')]
    pub window_models: Vec<String>,
    /// Keep annotated negatives alongside sampled ones.
    #[arg(long)]
    pub include_annotated: bool,
    /// Average HR and MRR per query instead of per positive pair.
    #[arg(long)]
    pub per_query: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LooArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long = "models", visible_alias = "model", value_delimiter = ',', required = true)]
    pub models: Vec<ModelSpec>,
    #[arg(long)]
    pub suspects: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    pub permutation: PermutationKind,
    #[arg(long, default_value_t = eds_core::robustness::MIN_DRAWS)]
    pub draws: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub suspects: PathBuf,
    /// Defaults to `votes.jsonl` in the data directory.
    #[arg(long)]
    pub votes: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub experts: Vec<String>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long)]
    pub static_ui: Option<PathBuf>,
    /// Models offered by the metrics preview.
    #[arg(long = "model", visible_alias = "models", value_delimiter = ',')]
    pub models: Vec<ModelSpec>,
    /// Defaults to `labels.tsv` in the data directory.
    #[arg(long)]
    pub labels_out: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub snapshot_every: usize,
}

fn in_data_dir(explicit: Option<&Path>, name: &str) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    let dir = data_dir();
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir.join(name))
}

fn load_models(specs: &[ModelSpec]) -> Result<Vec<ModelHandle>> {
    let mut seen = BTreeSet::new();
    specs
        .iter()
        .map(|s| {
            if !seen.insert(&s.name) {
                return Err(CliError::Usage(format!("model `{}` given twice", s.name)));
            }
            Ok(load_model(&s.path, &s.name)?)
        })
        .collect()
}

fn experts(raw: &[String]) -> Result<Vec<ExpertId>> {
    Ok(raw.iter().map(ExpertId::new).collect::<eds_core::Result<_>>()?)
}

pub fn discover(args: &DiscoverArgs) -> Result<Value> {
    let corpus = load_manifest(&args.corpus)?;
    let models = load_models(&args.models)?;
    let per_model = models
        .iter()
        .map(|m| {
            m.check_coverage(&corpus)?;
            build_suspects_per_model(m, &corpus, args.k)
        })
        .collect::<eds_core::Result<Vec<_>>>()?;
    let s = union_dedupe(&per_model)?;
    let out = in_data_dir(args.out.as_deref(), "suspects.jsonl")?;
    write_suspects(&out, &s)?;
    Ok(json!({
        "out": out,
        "k": s.k(),
        "models": s.models(),
        "queries": s.queries().len(),
        "pairs": s.len(),
        "upper_bound": s.upper_bound(),
    }))
}

pub fn overlap(args: &OverlapArgs) -> Result<Value> {
    let s = read_suspects(&args.suspects, args.k)?;
    Ok(json!({
        "k": s.k(),
        "overlap": overlap_matrix(&s)?,
        "duplication": duplication_stats(&s)?,
    }))
}

pub fn cost(args: &CostArgs) -> Result<Value> {
    let s = read_suspects(&args.suspects, args.k)?;
    let report = match (&args.corpus, args.items) {
        (Some(path), _) => cost_report(&load_manifest(path)?, &s, args.p_hat)?,
        (None, Some(items)) => {
            if items < 2 {
                return Err(CliError::Usage("--items must be at least 2".into()));
            }
            let queries = args.queries.unwrap_or(s.queries().len() as u64);
            cost_from_counts(
                queries * (items - 1),
                queries,
                s.models().len() as u64,
                s.k() as u64,
                s.len() as u64,
                args.p_hat,
            )?
        }
        (None, None) => {
            let default = data_dir().join("manifest.tsv");
            if !default.exists() {
                return Err(CliError::Usage(format!(
                    "no --corpus or --items given and {} does not exist",
                    default.display()
                )));
            }
            cost_report(&load_manifest(&default)?, &s, args.p_hat)?
        }
    };
    Ok(serde_json::to_value(report)?)
}

pub fn resolve(args: &ResolveArgs) -> Result<Value> {
    let s = read_suspects(&args.suspects, None)?;
    let log = read_votes(&args.votes)?;
    let roster = if args.experts.is_empty() {
        log.iter().map(|v| v.expert.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        experts(&args.experts)?
    };
    if roster.is_empty() {
        return Err(CliError::Usage("no experts given and the vote log is empty".into()));
    }
    let mut book = VoteBook::new(s.pairs().iter().map(|p| p.pair.clone()), roster)?;
    for v in log {
        book.record_vote(v)?;
    }
    let resolved = book.resolve();
    let out = in_data_dir(args.out.as_deref(), "labels.tsv")?;
    write_labels(&out, &resolved)?;
    let positives = resolved.values().filter(|r| r.label).count();
    let complete = resolved.values().filter(|r| r.num_votes == book.num_experts()).count();
    let complete_positives = resolved
        .values()
        .filter(|r| r.num_votes == book.num_experts() && r.label)
        .count();
    Ok(json!({
        "out": out,
        "experts": book.experts(),
        "suspects": s.len(),
        "resolved": resolved.len(),
        "positives": positives,
        "incomplete": resolved.len() - complete,
        "unvoted": s.len() - resolved.len(),
        "p_k": (complete > 0).then(|| complete_positives as f64 / complete as f64),
    }))
}

pub fn estimate(args: &EstimatePArgs) -> Result<Value> {
    let mut est = estimate_p(args.a, args.b, args.p_lb)?;
    if let (Some(epsilon), Some(q)) = (args.epsilon, args.q) {
        est = est.with_error_bound(epsilon, q)?;
    }
    Ok(serde_json::to_value(est)?)
}

pub fn budget(args: &BudgetArgs) -> Result<Value> {
    Ok(serde_json::to_value(budget_report(args.epsilon, args.q, args.p, args.b)?)?)
}

fn write_or_pass(out: Option<&Path>, value: Value) -> Result<Value> {
    if let Some(path) = out {
        write_json(path, &value)?;
    }
    Ok(value)
}

pub fn eval(args: &EvalArgs) -> Result<Value> {
    let corpus = load_manifest(&args.corpus)?;
    let models = load_models(&args.models)?;
    let gt = read_labels(&args.labels, 0)?;
    let hit_averaging = if args.per_query {
        HitAveraging::PerQuery
    } else {
        HitAveraging::PerPair
    };
    let sources: Vec<NegativeSource> = args
        .neg
        .iter()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(|kind| match kind {
            NegativeKind::Annotated => NegativeSource::Annotated,
            NegativeKind::Sampled => NegativeSource::Sampled(SamplingConfig {
                window_lo: args.window.lo,
                window_hi: args.window.hi,
                count: args.count,
                seed: args.seed,
                pool: if args.window_models.is_empty() {
                    WindowPool::EvaluatedModel
                } else {
                    WindowPool::Models(args.window_models.clone())
                },
                include_annotated: args.include_annotated,
            }),
        })
        .collect();
    let mut reports = Vec::new();
    for model in &models {
        for negatives in &sources {
            let config = EvalConfig {
                ks: args.k.clone(),
                negatives: negatives.clone(),
                hit_averaging,
            };
            reports.push(evaluate(model, &corpus, &gt, &config, &models)?);
        }
    }
    let value = json!({
        "config": {
            "k": args.k,
            "window": format!("{}:{}", args.window.lo, args.window.hi),
            "count": args.count,
            "seed": args.seed,
            "negatives": sources,
            "hit_averaging": hit_averaging,
            "labels": args.labels,
        },
        "reports": reports,
    });
    write_or_pass(args.out.as_deref(), value)
}

pub fn loo(args: &LooArgs) -> Result<Value> {
    let corpus = load_manifest(&args.corpus)?;
    let models = load_models(&args.models)?;
    let s = read_suspects(&args.suspects, None)?;
    let gt = read_labels(&args.labels, 0)?;
    let permutation = match args.permutation {
        PermutationKind::Auto => PermutationMode::Auto { seed: args.seed },
        PermutationKind::Exact => PermutationMode::Exact,
        PermutationKind::MonteCarlo => PermutationMode::MonteCarlo {
            draws: args.draws,
            seed: args.seed,
        },
    };
    let report = loo_report(&corpus, &models, &s, &gt, &LooConfig { permutation })?;
    write_or_pass(args.out.as_deref(), serde_json::to_value(report)?)
}

pub fn serve_command(args: &ServeArgs) -> Result<()> {
    let corpus = load_manifest(&args.corpus)?;
    let suspects = read_suspects(&args.suspects, None)?;
    let models = load_models(&args.models)?;
    let votes = in_data_dir(args.votes.as_deref(), "votes.jsonl")?;
    let labels_out = in_data_dir(args.labels_out.as_deref(), "labels.tsv")?;
    let store = AnnotationStore::open(&suspects, experts(&args.experts)?, &votes)?
        .with_snapshots_every(args.snapshot_every);
    tracing::info!(
        pairs = suspects.len(),
        votes = store.log().len(),
        log = %votes.display(),
        "vote log replayed"
    );
    let state = Arc::new(AppState::new(store, corpus, suspects, models, labels_out));
    let app = router(state, args.static_ui.as_deref());
    let addr = format!("{}:{}", args.host, args.port);
    let io = |source| CliError::Io {
        path: PathBuf::from(&addr),
        source,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(io)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(io)?;
        serve(listener, app).await.map_err(io)
    })
}

/// Runs one subcommand, writing its JSON output to `out`.
pub fn run(cli: Cli, out: &mut impl Write) -> Result<()> {
    let value = match &cli.command {
        Command::Discover(a) => discover(a)?,
        Command::Overlap(a) => overlap(a)?,
        Command::Cost(a) => cost(a)?,
        Command::Resolve(a) => resolve(a)?,
        Command::EstimateP(a) => estimate(a)?,
        Command::Budget(a) => budget(a)?,
        Command::Eval(a) => eval(a)?,
        Command::Loo(a) => loo(a)?,
        Command::Serve(a) => return serve_command(a),
    };
    serde_json::to_writer_pretty(&mut *out, &value)?;
    writeln!(out).map_err(|source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    })
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn model_specs() {
        let spec: ModelSpec = "clip=/tmp/clip.emb".parse().unwrap();
        assert_eq!(spec.name, "clip");
        assert_eq!(spec.path, PathBuf::from("/tmp/clip.emb"));
        assert!("clip".parse::<ModelSpec>().is_err());
        assert!("=x".parse::<ModelSpec>().is_err());
        assert!("clip=".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn windows() {
        assert_eq!("100:500".parse::<Window>().unwrap(), Window { lo: 100, hi: 500 });
        assert!("500:100".parse::<Window>().is_err());
        assert!("5:5".parse::<Window>().is_err());
        assert!("100".parse::<Window>().is_err());
    }

    #[test]
    fn documented_invocations_parse() {
        let cli = Cli::try_parse_from([
            "eds", "eval", "--corpus", "m.tsv", "--model", "a=a.emb", "--labels", "l.tsv", "--k", "5,9", "--neg",
            "sampled", "--window", "100:500", "--count", "5", "--seed", "42", "--out", "r.json",
        ])
        .unwrap();
        let Command::Eval(args) = cli.command else { panic!("expected eval") };
        assert_eq!(args.k, vec![5, 9]);
        assert_eq!(args.neg, vec![NegativeKind::Sampled]);

        let cli = Cli::try_parse_from([
            "eds", "serve", "--corpus", "m.tsv", "--suspects", "s.jsonl", "--votes", "v.jsonl", "--experts",
            "alice,bob,carol", "--port", "9000", "--static-ui", "dist",
        ])
        .unwrap();
        let Command::Serve(args) = cli.command else { panic!("expected serve") };
        assert_eq!(args.experts, ["alice", "bob", "carol"]);
        assert_eq!(args.port, 9000);

        assert!(Cli::try_parse_from(["eds", "estimate-p", "--a", "1", "--b", "2", "--p-lb", "0", "--epsilon", "0.1"]).is_err());
    }
}
