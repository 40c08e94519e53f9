//! HTTP API for the annotation workflow.
//!
//! | route                         | purpose |
//! |-------------------------------|---------|
//! | `GET /api/tasks?expert&n`     | next batch of pairs for an expert |
//! | `POST /api/votes`             | `{pair_id, expert, label}`; acknowledged after the log is synced |
//! | `GET /api/progress`           | current [`ProgressSnapshot`] |
//! | `GET /api/pairs/{pair_id}`    | one pair with proposers and votes |
//! | `GET /img/{item_id}`          | image bytes from the corpus manifest |
//! | `POST /api/resolve`           | resolves votes and writes the labels file |
//! | `GET /api/metrics?model`      | metric preview on the labels resolved so far |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use eds_core::annotation::{majority, ExpertId, ResolvedLabel};
use eds_core::corpus::{Corpus, ItemId, ModelHandle};
use eds_core::discovery::{Proposal, SuspectSet};
use eds_core::formats::write_labels;
use eds_core::metrics::{evaluate, EvalConfig, MetricReport};
use eds_core::service::{image_url, AnnotationStore, PairId, ProgressSnapshot, TaskBatch};
use serde::{Deserialize, Serialize};
use tower::ServiceExt;
use tower_http::services::{ServeDir, ServeFile};

pub const DEFAULT_BATCH: usize = 10;

pub struct AppState {
    store: Mutex<AnnotationStore>,
    corpus: Corpus,
    suspects: SuspectSet,
    models: Vec<ModelHandle>,
    labels_out: PathBuf,
}

impl AppState {
    pub fn new(
        store: AnnotationStore,
        corpus: Corpus,
        suspects: SuspectSet,
        models: Vec<ModelHandle>,
        labels_out: impl Into<PathBuf>,
    ) -> Self {
        AppState {
            store: Mutex::new(store),
            corpus,
            suspects,
            models,
            labels_out: labels_out.into(),
        }
    }

    fn store(&self) -> MutexGuard<'_, AnnotationStore> {
        self.store.lock().unwrap_or_else(|e| e.into_inner())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl From<eds_core::Error> for ApiError {
    fn from(e: eds_core::Error) -> Self {
        use eds_core::Error as E;
        let status = match &e {
            E::UnknownExpert(_) => StatusCode::FORBIDDEN,
            E::UnknownPairId(_) | E::UnknownPair { .. } | E::UnknownItem { .. } => StatusCode::NOT_FOUND,
            E::InvalidLabel(_) | E::InvalidArgument(_) | E::InvalidId(_) => StatusCode::BAD_REQUEST,
            E::NoPositives | E::NoEvaluableQueries | E::SingleClass => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            tracing::error!(error = %e, "request failed");
        }
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
pub struct TasksQuery {
    pub expert: String,
    pub n: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VoteRequest {
    pub pair_id: PairId,
    pub expert: String,
    pub label: i64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairDetail {
    pub pair_id: PairId,
    pub query: ItemId,
    pub candidate: ItemId,
    pub query_image_url: String,
    pub candidate_image_url: String,
    pub proposers: Vec<Proposal>,
    pub votes: BTreeMap<ExpertId, bool>,
    pub resolved: Option<ResolvedLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ResolveSummary {
    pub path: PathBuf,
    pub pairs: usize,
    pub positives: usize,
    /// Pairs resolved from fewer votes than there are experts.
    pub incomplete: usize,
}

#[derive(Debug, Deserialize)]
pub struct MetricsQuery {
    pub model: String,
}

fn expert(raw: &str) -> Result<ExpertId, ApiError> {
    ExpertId::new(raw).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))
}

async fn tasks(State(state): State<Arc<AppState>>, Query(q): Query<TasksQuery>) -> ApiResult<TaskBatch> {
    let expert = expert(&q.expert)?;
    let batch = state.store().next_batch(&expert, q.n.unwrap_or(DEFAULT_BATCH))?;
    Ok(Json(batch))
}

async fn votes(State(state): State<Arc<AppState>>, Json(v): Json<VoteRequest>) -> ApiResult<ProgressSnapshot> {
    let expert = expert(&v.expert)?;
    let snapshot = state.store().submit_vote(&expert, v.pair_id, v.label, Utc::now())?;
    Ok(Json(snapshot))
}

async fn progress(State(state): State<Arc<AppState>>) -> Json<ProgressSnapshot> {
    Json(state.store().progress())
}

async fn pair(State(state): State<Arc<AppState>>, UrlPath(pair_id): UrlPath<PairId>) -> ApiResult<PairDetail> {
    let store = state.store();
    let pair = store.pair(pair_id).ok_or(eds_core::Error::UnknownPairId(pair_id))?.clone();
    let votes = store.votes(pair_id).unwrap_or_default();
    drop(store);
    let resolved = (!votes.is_empty()).then(|| {
        let yes = votes.values().filter(|l| **l).count();
        ResolvedLabel {
            label: majority(yes, votes.len()),
            num_votes: votes.len(),
            num_positive: yes,
        }
    });
    let proposers = state
        .suspects
        .get(&pair)
        .map(|s| s.proposers.clone())
        .unwrap_or_default();
    Ok(Json(PairDetail {
        pair_id,
        query_image_url: image_url(&pair.query),
        candidate_image_url: image_url(&pair.candidate),
        query: pair.query,
        candidate: pair.candidate,
        proposers,
        votes,
        resolved,
    }))
}

async fn image(
    State(state): State<Arc<AppState>>,
    UrlPath(item): UrlPath<String>,
    request: Request,
) -> Result<Response, ApiError> {
    let path = ItemId::new(item.clone())
        .ok()
        .and_then(|id| state.corpus.image_path(&id).cloned())
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no image for `{item}`")))?;
    match ServeFile::new(path).oneshot(request).await {
        Ok(response) => Ok(response.into_response()),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn resolve(State(state): State<Arc<AppState>>) -> ApiResult<ResolveSummary> {
    let (resolved, experts) = {
        let store = state.store();
        (store.resolve(), store.experts().len())
    };
    write_labels(&state.labels_out, &resolved)?;
    Ok(Json(ResolveSummary {
        path: state.labels_out.clone(),
        pairs: resolved.len(),
        positives: resolved.values().filter(|r| r.label).count(),
        incomplete: resolved.values().filter(|r| r.num_votes < experts).count(),
    }))
}

async fn metrics(State(state): State<Arc<AppState>>, Query(q): Query<MetricsQuery>) -> ApiResult<MetricReport> {
    if !state.models.iter().any(|m| m.name() == q.model) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown model `{}`", q.model)));
    }
    let gt = state.store().ground_truth();
    let report = tokio::task::spawn_blocking(move || {
        let model = state.models.iter().find(|m| m.name() == q.model).expect("checked above");
        evaluate(model, &state.corpus, &gt, &EvalConfig::default(), &state.models)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(report))
}

/// Builds the router; `static_ui` is served for every path the API does not claim.
pub fn router(state: Arc<AppState>, static_ui: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/tasks", get(tasks))
        .route("/api/votes", post(votes))
        .route("/api/progress", get(progress))
        .route("/api/pairs/{pair_id}", get(pair))
        .route("/img/{item_id}", get(image))
        .route("/api/resolve", post(resolve))
        .route("/api/metrics", get(metrics))
        .with_state(state);
    match static_ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves `router` on `listener` until Ctrl-C.
pub async fn serve(listener: tokio::net::TcpListener, router: Router) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "annotation service listening");
    axum::serve(listener, router)
        .with_graceful_shutdown(async {
            tokio::signal::ctrl_c().await.ok();
        })
        .await
}
