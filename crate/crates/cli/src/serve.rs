//! HTTP service. Backends and shared state are read-only after startup.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use strank_core::corpus::{load_qrels, read_run, Document, Query};
use strank_core::metrics::{evaluate_run, EvalReport, Gain, MetricConfig};
use strank_core::pipeline::{build_reranker, build_summarizer, load_index_bundle, BackendContext, PipelineConfig};
use strank_core::rerank::{sliding_window_rerank, RerankItem, Reranker, WindowPlan};
use strank_core::summarize::{detect_safeguard, Summarizer};
use strank_core::Error;

use crate::args::ServeArgs;
use crate::commands::{reranker_spec, summarizer_spec};

pub const REQUEST_ID_HEADER: &str = "x-request-id";

#[derive(Clone)]
pub struct AppState {
    pub summarizer: Arc<dyn Summarizer>,
    pub reranker: Arc<dyn Reranker>,
    pub window: WindowPlan,
    pub metrics: MetricConfig,
}

#[derive(Debug, Clone)]
pub struct RequestId(pub String);

async fn assign_request_id(mut req: Request, next: Next) -> Response {
    let id = uuid::Uuid::new_v4().to_string();
    req.extensions_mut().insert(RequestId(id.clone()));
    let mut resp = next.run(req).await;
    if let Ok(v) = HeaderValue::from_str(&id) {
        resp.headers_mut().insert(REQUEST_ID_HEADER, v);
    }
    resp
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    stage: &'static str,
    cause: String,
    request_id: String,
}

impl ApiError {
    fn new(status: StatusCode, stage: &'static str, cause: impl Into<String>, id: &RequestId) -> Self {
        Self {
            status,
            stage,
            cause: cause.into(),
            request_id: id.0.clone(),
        }
    }

    fn from_core(stage: &'static str, e: Error, id: &RequestId) -> Self {
        let status = if e.is_backend_unavailable() {
            StatusCode::SERVICE_UNAVAILABLE
        } else {
            match e {
                Error::Io { .. }
                | Error::MalformedRecord { .. }
                | Error::NegativeGrade { .. }
                | Error::InvalidRankedList { .. }
                | Error::EmptyIntersection
                | Error::InvalidConfig(_) => StatusCode::BAD_REQUEST,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            }
        };
        Self::new(status, stage, e.to_string(), id)
    }

    fn rejection(r: JsonRejection, id: &RequestId) -> Self {
        Self::new(r.status(), "request", r.body_text(), id)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "error": { "stage": self.stage, "cause": self.cause },
            "request_id": self.request_id,
        });
        (self.status, Json(body)).into_response()
    }
}

async fn blocking<T: Send + 'static>(
    stage: &'static str,
    id: &RequestId,
    f: impl FnOnce() -> strank_core::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(ApiError::from_core(stage, e, id)),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, stage, e.to_string(), id)),
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum DocumentInput {
    Text(String),
    Full {
        #[serde(default)]
        doc_id: Option<String>,
        #[serde(default)]
        title: String,
        body: String,
    },
}

#[derive(Debug, Deserialize)]
pub struct SummarizeRequest {
    pub query: String,
    pub document: DocumentInput,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SummarizeResponse {
    pub summary: String,
    pub is_safeguard: bool,
    pub backend: String,
    pub request_id: String,
}

async fn summarize(
    State(st): State<AppState>,
    Extension(id): Extension<RequestId>,
    body: Result<Json<SummarizeRequest>, JsonRejection>,
) -> Result<Json<SummarizeResponse>, ApiError> {
    let Json(req) = body.map_err(|r| ApiError::rejection(r, &id))?;
    let doc = match req.document {
        DocumentInput::Text(body) => Document::new("request", "", body),
        DocumentInput::Full { doc_id, title, body } => Document::new(doc_id.unwrap_or_else(|| "request".into()), title, body),
    };
    let query = Query::new("request", req.query);
    let backend = st.summarizer.clone();
    let name = backend.name();
    let summary = blocking("summarize", &id, move || backend.summarize(&query, &doc)).await?;
    Ok(Json(SummarizeResponse {
        is_safeguard: detect_safeguard(&summary),
        summary,
        backend: name,
        request_id: id.0,
    }))
}

#[derive(Debug, Deserialize)]
pub struct RerankRequest {
    pub query: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RerankResponse {
    /// 1-based indices into the request's candidates, best first.
    pub order: Vec<usize>,
    pub request_id: String,
}

async fn rerank(
    State(st): State<AppState>,
    Extension(id): Extension<RequestId>,
    body: Result<Json<RerankRequest>, JsonRejection>,
) -> Result<Json<RerankResponse>, ApiError> {
    let Json(req) = body.map_err(|r| ApiError::rejection(r, &id))?;
    let query = Query::new("request", req.query);
    let items: Vec<RerankItem> = req
        .candidates
        .into_iter()
        .enumerate()
        .map(|(i, text)| RerankItem::new((i + 1).to_string(), text))
        .collect();
    let backend = st.reranker.clone();
    let plan = st.window;
    let ranked = blocking("rerank", &id, move || sliding_window_rerank(backend.as_ref(), &query, &items, plan, "serve")).await?;
    let order = ranked.doc_ids().map(|d| d.parse().expect("positional ids")).collect();
    Ok(Json(RerankResponse { order, request_id: id.0 }))
}

#[derive(Debug, Deserialize)]
pub struct EvaluateRequest {
    pub run_path: PathBuf,
    pub qrels_path: PathBuf,
    #[serde(default)]
    pub ndcg_k: Option<usize>,
    #[serde(default)]
    pub map_k: Option<usize>,
    #[serde(default)]
    pub gain: Option<Gain>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EvaluateResponse {
    #[serde(flatten)]
    pub report: EvalReport,
    pub request_id: String,
}

async fn evaluate(
    State(st): State<AppState>,
    Extension(id): Extension<RequestId>,
    body: Result<Json<EvaluateRequest>, JsonRejection>,
) -> Result<Json<EvaluateResponse>, ApiError> {
    let Json(req) = body.map_err(|r| ApiError::rejection(r, &id))?;
    let cfg = MetricConfig {
        ndcg_k: req.ndcg_k.unwrap_or(st.metrics.ndcg_k),
        map_k: req.map_k.unwrap_or(st.metrics.map_k),
        gain: req.gain.unwrap_or(st.metrics.gain),
        ..st.metrics
    };
    let report = blocking("evaluate", &id, move || {
        let run = read_run(&req.run_path)?;
        let qrels = load_qrels(&req.qrels_path)?;
        evaluate_run(&run, &qrels, &cfg)
    })
    .await?;
    Ok(Json(EvaluateResponse { report, request_id: id.0 }))
}

async fn healthz(State(st): State<AppState>, Extension(id): Extension<RequestId>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "summarizer": st.summarizer.name(),
        "reranker": st.reranker.name(),
        "request_id": id.0,
    }))
}

async fn not_found(Extension(id): Extension<RequestId>) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "request", "no such endpoint", &id)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/summarize", post(summarize))
        .route("/v1/rerank", post(rerank))
        .route("/v1/evaluate", post(evaluate))
        .route("/healthz", get(healthz))
        .fallback(not_found)
        .with_state(state)
        .layer(middleware::from_fn(assign_request_id))
}

/// Builds backends from flags and config and probes them.
pub fn build_state(a: &ServeArgs, cfg: &PipelineConfig) -> anyhow::Result<AppState> {
    let index = match &a.index {
        Some(dir) => Some(Arc::new(load_index_bundle(dir)?.1)),
        None => None,
    };
    let ctx = BackendContext {
        index,
        qrels: a.qrels.as_ref().map(load_qrels).transpose()?.map(Arc::new),
        remote: cfg.remote.clone(),
    };
    let summarizer: Arc<dyn Summarizer> = build_summarizer(&summarizer_spec(&a.summarizer, cfg)?, &ctx)?.into();
    let reranker: Arc<dyn Reranker> = build_reranker(&reranker_spec(a.reranker, None, cfg), &ctx)?.into();
    summarizer.probe().context("summarizer probe failed")?;
    reranker.probe().context("reranker probe failed")?;
    Ok(AppState {
        summarizer,
        reranker,
        window: cfg.window,
        metrics: cfg.metrics,
    })
}

pub fn serve(a: ServeArgs, cfg: &PipelineConfig) -> anyhow::Result<()> {
    let state = build_state(&a, cfg)?;
    log::info!(
        "serving {} + {} on http://{}",
        state.summarizer.name(),
        state.reranker.name(),
        a.addr
    );
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
