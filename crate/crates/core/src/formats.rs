//! On-disk formats.
//!
//! | file        | layout |
//! |-------------|--------|
//! | embeddings  | `#eds-embeddings v1 <model> <dim>` then `id\tv1,v2,...` |
//! | scores      | `#eds-scores v1 <model>` then `query\tcandidate\tscore` |
//! | manifest    | `id\trole\timage_path?\tidentity?\tcategory?`, role is `item`, `query` or `both` |
//! | suspects    | JSON lines `{"q","c","proposers":[{"m","r"}]}` sorted by (q, c) |
//! | votes       | JSON lines `{"q","c","expert","label","ts"}`, append-only |
//! | labels      | `query\tcandidate\tlabel\tnum_votes` |

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::annotation::{parse_label, ExpertId, GroundTruth, ResolvedLabel, Vote};
use crate::corpus::{Corpus, EmbeddingTable, ItemId, ModelHandle, Pair, ScoreList};
use crate::discovery::{Proposal, SuspectPair, SuspectSet};
use crate::error::{Error, Result};

pub const EMBEDDINGS_MAGIC: &str = "#eds-embeddings";
pub const SCORES_MAGIC: &str = "#eds-scores";
pub const FORMAT_VERSION: &str = "v1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Yields `(line_number, line)` for every line, 1-based.
fn read_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>> + '_> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(move |(i, l)| l.map(|l| (i + 1, l)).map_err(io_err(path))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn parse_id(path: &Path, line: usize, raw: &str) -> Result<ItemId> {
    ItemId::new(raw).map_err(|e| parse_err(path, line, e.to_string()))
}

/// Loads an embeddings file into a model named `model_name`.
pub fn load_embeddings(path: impl AsRef<Path>, model_name: &str) -> Result<ModelHandle> {
    let path = path.as_ref();
    let mut lines = read_lines(path)?;
    let (_, header) = lines.next().transpose()?.ok_or_else(|| Error::Empty {
        path: path.to_path_buf(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let dim = match fields.as_slice() {
        [EMBEDDINGS_MAGIC, FORMAT_VERSION, _name, dim] => dim
            .parse::<usize>()
            .ok()
            .filter(|d| *d > 0)
            .ok_or_else(|| parse_err(path, 1, format!("invalid dimension `{dim}`")))?,
        _ => {
            return Err(parse_err(
                path,
                1,
                format!("expected `{EMBEDDINGS_MAGIC} {FORMAT_VERSION} <model> <dim>`"),
            ))
        }
    };
    let mut table = EmbeddingTable::new(dim)?;
    let mut values = Vec::with_capacity(dim);
    for line in lines {
        let (n, line) = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (raw_id, raw_vec) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(path, n, "expected `id<TAB>v1,v2,...`"))?;
        let id = parse_id(path, n, raw_id)?;
        values.clear();
        for v in raw_vec.split(',') {
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| parse_err(path, n, format!("invalid number `{v}`")))?;
            if !x.is_finite() {
                return Err(parse_err(path, n, format!("non-finite value `{v}`")));
            }
            values.push(x);
        }
        if values.len() != dim {
            return Err(Error::DimensionMismatch {
                path: path.to_path_buf(),
                line: n,
                expected: dim,
                found: values.len(),
            });
        }
        if table.get(&id).is_some() {
            return Err(parse_err(path, n, format!("duplicate item id `{id}`")));
        }
        table.insert(id, &values)?;
    }
    if table.is_empty() {
        return Err(Error::Empty {
            path: path.to_path_buf(),
        });
    }
    ModelHandle::from_embeddings(model_name, table)
}

/// Writes an embeddings file. Values use the shortest representation that
/// round-trips, so a reload is bit-identical.
pub fn write_embeddings(path: impl AsRef<Path>, model_name: &str, table: &EmbeddingTable) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "{EMBEDDINGS_MAGIC} {FORMAT_VERSION} {model_name} {}", table.dim())?;
        for id in table.ids() {
            let v = table.get(id).expect("id from table");
            let joined: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
            writeln!(out, "{id}\t{}", joined.join(","))?;
        }
        out.flush()
    };
    write(&mut out).map_err(io_err(path))
}

pub fn load_scores(path: impl AsRef<Path>, model_name: &str) -> Result<ModelHandle> {
    let path = path.as_ref();
    let mut lines = read_lines(path)?;
    let (_, header) = lines.next().transpose()?.ok_or_else(|| Error::Empty {
        path: path.to_path_buf(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if !matches!(fields.as_slice(), [SCORES_MAGIC, FORMAT_VERSION, _]) {
        return Err(parse_err(
            path,
            1,
            format!("expected `{SCORES_MAGIC} {FORMAT_VERSION} <model>`"),
        ));
    }
    let mut list = ScoreList::new();
    for line in lines {
        let (n, line) = line?;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [q, c, s] = cols.as_slice() else {
            return Err(parse_err(path, n, "expected `query<TAB>candidate<TAB>score`"));
        };
        let score: f64 = s
            .trim()
            .parse()
            .map_err(|_| parse_err(path, n, format!("invalid score `{s}`")))?;
        list.insert(parse_id(path, n, q)?, parse_id(path, n, c)?, score)
            .map_err(|e| parse_err(path, n, e.to_string()))?;
    }
    if list.num_rows() == 0 {
        return Err(Error::Empty {
            path: path.to_path_buf(),
        });
    }
    Ok(ModelHandle::from_scores(model_name, list))
}

pub fn write_scores(
    path: impl AsRef<Path>,
    model_name: &str,
    rows: impl IntoIterator<Item = (ItemId, ItemId, f64)>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let write = || -> std::io::Result<()> {
        writeln!(out, "{SCORES_MAGIC} {FORMAT_VERSION} {model_name}")?;
        for (q, c, s) in rows {
            writeln!(out, "{q}\t{c}\t{s:?}")?;
        }
        out.flush()
    };
    write().map_err(io_err(path))
}

/// Loads a model from either an embeddings or a scores file, by header.
pub fn load_model(path: impl AsRef<Path>, model_name: &str) -> Result<ModelHandle> {
    let path = path.as_ref();
    let first = read_lines(path)?
        .next()
        .transpose()?
        .map(|(_, l)| l)
        .unwrap_or_default();
    if first.starts_with(SCORES_MAGIC) {
        load_scores(path, model_name)
    } else {
        load_embeddings(path, model_name)
    }
}

/// Loads a corpus manifest. Relative image paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus> {
    let path = path.as_ref();
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut items = Vec::new();
    let mut queries = Vec::new();
    let mut images = BTreeMap::new();
    let mut identities = BTreeMap::new();
    let mut categories = BTreeMap::new();
    for line in read_lines(path)? {
        let (n, line) = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 || cols.len() > 5 {
            return Err(parse_err(
                path,
                n,
                "expected `id<TAB>role[<TAB>image_path<TAB>identity<TAB>category]`",
            ));
        }
        let id = parse_id(path, n, cols[0])?;
        match cols[1] {
            "item" => items.push(id.clone()),
            "query" => queries.push(id.clone()),
            "both" => {
                items.push(id.clone());
                queries.push(id.clone());
            }
            other => return Err(parse_err(path, n, format!("unknown role `{other}`"))),
        }
        let field = |i: usize| cols.get(i).copied().filter(|s| !s.is_empty());
        if let Some(p) = field(2) {
            images.insert(id.clone(), base.join(p));
        }
        if let Some(identity) = field(3) {
            identities.insert(id.clone(), identity.to_string());
        }
        if let Some(category) = field(4) {
            categories.insert(id, category.to_string());
        }
    }
    if items.is_empty() && queries.is_empty() {
        return Err(Error::Empty {
            path: path.to_path_buf(),
        });
    }
    let mut corpus = Corpus::new(items, queries)?.with_image_paths(images);
    if !identities.is_empty() {
        corpus = corpus.with_identity_labels(identities);
    }
    if !categories.is_empty() {
        corpus = corpus.with_category_labels(categories);
    }
    Ok(corpus)
}

/// Writes a manifest; roles are derived from item and query membership.
pub fn write_manifest(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let mut write = || -> std::io::Result<()> {
        let queries: std::collections::HashSet<&ItemId> = corpus.queries().iter().collect();
        let row = |out: &mut BufWriter<File>, id: &ItemId, role: &str| {
            let image = corpus
                .image_path(id)
                .map(|p| p.display().to_string())
                .unwrap_or_default();
            writeln!(
                out,
                "{id}\t{role}\t{image}\t{}\t{}",
                corpus.identity(id).unwrap_or(""),
                corpus.category(id).unwrap_or("")
            )
        };
        for id in corpus.items() {
            row(&mut out, id, if queries.contains(id) { "both" } else { "item" })?;
        }
        for id in corpus.queries() {
            if !corpus.contains_item(id) {
                row(&mut out, id, "query")?;
            }
        }
        out.flush()
    };
    write().map_err(io_err(path))
}

#[derive(Serialize, Deserialize)]
struct ProposalRecord {
    m: String,
    r: usize,
}

#[derive(Serialize, Deserialize)]
struct SuspectRecord {
    q: ItemId,
    c: ItemId,
    proposers: Vec<ProposalRecord>,
}

pub fn write_suspects(path: impl AsRef<Path>, s: &SuspectSet) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    for sp in s.pairs() {
        let record = SuspectRecord {
            q: sp.pair.query.clone(),
            c: sp.pair.candidate.clone(),
            proposers: sp
                .proposers
                .iter()
                .map(|p| ProposalRecord {
                    m: p.model.clone(),
                    r: p.rank,
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads a suspects file. `k` defaults to one more than the largest recorded
/// rank.
pub fn read_suspects(path: impl AsRef<Path>, k: Option<usize>) -> Result<SuspectSet> {
    let path = path.as_ref();
    let mut pairs = Vec::new();
    for line in read_lines(path)? {
        let (n, line) = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: SuspectRecord =
            serde_json::from_str(&line).map_err(|e| parse_err(path, n, e.to_string()))?;
        pairs.push(SuspectPair {
            pair: Pair::new(r.q, r.c),
            proposers: r
                .proposers
                .into_iter()
                .map(|p| Proposal {
                    model: p.m,
                    rank: p.r,
                })
                .collect(),
        });
    }
    if pairs.is_empty() {
        return Err(Error::Empty {
            path: path.to_path_buf(),
        });
    }
    let inferred = pairs
        .iter()
        .flat_map(|p| p.proposers.iter().map(|x| x.rank + 1))
        .max()
        .unwrap_or(1);
    SuspectSet::from_pairs(k.unwrap_or(inferred), pairs)
}

/// Wire form of a vote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub q: ItemId,
    pub c: ItemId,
    pub expert: ExpertId,
    pub label: i64,
    pub ts: String,
}

impl From<&Vote> for VoteRecord {
    fn from(v: &Vote) -> Self {
        VoteRecord {
            q: v.pair.query.clone(),
            c: v.pair.candidate.clone(),
            expert: v.expert.clone(),
            label: i64::from(v.label),
            ts: v.ts.to_rfc3339_opts(SecondsFormat::AutoSi, true),
        }
    }
}

impl TryFrom<VoteRecord> for Vote {
    type Error = Error;

    fn try_from(r: VoteRecord) -> Result<Vote> {
        let ts = DateTime::parse_from_rfc3339(&r.ts)
            .map_err(|e| Error::invalid(format!("invalid timestamp `{}`: {e}", r.ts)))?
            .with_timezone(&Utc);
        Ok(Vote {
            pair: Pair::new(r.q, r.c),
            expert: r.expert,
            label: parse_label(r.label)?,
            ts,
        })
    }
}

pub fn vote_to_json(v: &Vote) -> Result<String> {
    Ok(serde_json::to_string(&VoteRecord::from(v))?)
}

/// Reads a vote log. A truncated final line (a write cut short by a crash) is
/// ignored; malformed lines elsewhere are errors.
pub fn read_votes(path: impl AsRef<Path>) -> Result<Vec<Vote>> {
    let path = path.as_ref();
    let lines: Vec<(usize, String)> = read_lines(path)?.collect::<Result<_>>()?;
    let last = lines.len();
    let mut votes = Vec::with_capacity(lines.len());
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<VoteRecord>(&line)
            .map_err(|e| parse_err(path, n, e.to_string()))
            .and_then(|r| Vote::try_from(r).map_err(|e| parse_err(path, n, e.to_string())));
        match parsed {
            Ok(v) => votes.push(v),
            Err(_) if n == last && !line.ends_with('}') => break,
            Err(e) => return Err(e),
        }
    }
    Ok(votes)
}

pub fn append_votes(path: impl AsRef<Path>, votes: &[Vote]) -> Result<()> {
    let path = path.as_ref();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut buf = String::new();
    for v in votes {
        buf.push_str(&vote_to_json(v)?);
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(io_err(path))?;
    file.sync_data().map_err(io_err(path))
}

pub fn write_labels(path: impl AsRef<Path>, resolved: &BTreeMap<Pair, ResolvedLabel>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let mut write = || -> std::io::Result<()> {
        for (pair, r) in resolved {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                pair.query,
                pair.candidate,
                u8::from(r.label),
                r.num_votes
            )?;
        }
        out.flush()
    };
    write().map_err(io_err(path))
}

/// Reads a labels file into an expert-resolved ground truth. A `num_experts`
/// of zero takes the largest vote count in the file.
pub fn read_labels(path: impl AsRef<Path>, num_experts: usize) -> Result<GroundTruth> {
    let path = path.as_ref();
    let mut resolved = BTreeMap::new();
    for line in read_lines(path)? {
        let (n, line) = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        let [q, c, label, votes] = cols.as_slice() else {
            return Err(parse_err(
                path,
                n,
                "expected `query<TAB>candidate<TAB>label<TAB>num_votes`",
            ));
        };
        let label = label
            .parse::<i64>()
            .map_err(|_| parse_err(path, n, format!("invalid label `{label}`")))
            .and_then(|l| parse_label(l).map_err(|e| parse_err(path, n, e.to_string())))?;
        let num_votes: usize = votes
            .parse()
            .ok()
            .filter(|v| *v >= 1)
            .ok_or_else(|| parse_err(path, n, format!("invalid vote count `{votes}`")))?;
        let pair = Pair::new(parse_id(path, n, q)?, parse_id(path, n, c)?);
        let r = ResolvedLabel {
            label,
            num_votes,
            num_positive: if label { num_votes / 2 + 1 } else { 0 },
        };
        if resolved.insert(pair, r).is_some() {
            return Err(parse_err(path, n, "duplicate pair"));
        }
    }
    let num_experts = match num_experts {
        0 => resolved.values().map(|r| r.num_votes).max().unwrap_or(1),
        n => n,
    };
    Ok(GroundTruth::from_resolved(resolved, num_experts))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")
        .and_then(|_| out.flush())
        .map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Directory for generated artifacts: `$EDS_DATA_DIR` if set, else `./eds-data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("EDS_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("eds-data"))
}
