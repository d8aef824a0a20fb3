use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use strank_cli::serve::{router, AppState, REQUEST_ID_HEADER};
use strank_core::corpus::{write_qrels, write_run, Corpus, QrelsTable, RankedList};
use strank_core::llm::{LlmClient, RemoteConfig};
use strank_core::metrics::MetricConfig;
use strank_core::rerank::{LexicalReranker, WindowPlan};
use strank_core::retrieval::InvertedIndex;
use strank_core::rl_data::{build_rl_data, Label, RlDataConfig};
use strank_core::summarize::{FirstPSummarizer, PromptTemplate, RemoteSummarizer, Summarizer, SAFEGUARD_PHRASE};
use strank_core::synthetic::{generate, SyntheticConfig};
use strank_core::train::{
    fill_backgrounds, prepare_candidates, train_grpo, train_sft, PolicyParams, PolicySummarizer, SftConfig, TrainEnv,
};
use strank_core::GrpoConfig;

fn app(summarizer: Arc<dyn Summarizer>) -> Router {
    router(AppState {
        summarizer,
        reranker: Arc::new(LexicalReranker::uniform()),
        window: WindowPlan::default(),
        metrics: MetricConfig::default(),
    })
}

fn firstp_app() -> Router {
    app(Arc::new(FirstPSummarizer { k: 8 }))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Option<String>, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let id = resp
        .headers()
        .get(REQUEST_ID_HEADER)
        .map(|v| v.to_str().unwrap().to_string());
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, id, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(app: &Router, uri: &str, body: Value) -> (StatusCode, Option<String>, Value) {
    call(app, "POST", uri, Some(body.to_string())).await
}

#[tokio::test]
async fn healthz_reports_version_and_request_id() {
    let (status, id, body) = call(&firstp_app(), "GET", "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["version"], env!("CARGO_PKG_VERSION"));
    let id = id.expect("request id header");
    assert!(uuid::Uuid::parse_str(&id).is_ok());
    assert_eq!(body["request_id"], id.as_str());
}

#[tokio::test]
async fn request_ids_differ() {
    let a = firstp_app();
    let (_, x, _) = call(&a, "GET", "/healthz", None).await;
    let (_, y, _) = call(&a, "GET", "/healthz", None).await;
    assert_ne!(x, y);
}

#[tokio::test]
async fn rerank_single_candidate() {
    let (status, id, body) = post(&firstp_app(), "/v1/rerank", json!({"query": "tide", "candidates": ["anything"]})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["order"], json!([1]));
    assert_eq!(body["request_id"], id.unwrap().as_str());
}

#[tokio::test]
async fn rerank_orders_by_coverage() {
    let body = json!({
        "query": "tide tables",
        "candidates": ["nothing here", SAFEGUARD_PHRASE, "tide tables for the harbor", "tide only"],
    });
    let (status, _, body) = post(&firstp_app(), "/v1/rerank", body).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["order"][0], 3);
    assert_eq!(body["order"][1], 4);
    assert_eq!(body["order"][3], 2);
}

#[tokio::test]
async fn rerank_long_list_is_a_permutation() {
    let candidates: Vec<String> = (0..45).map(|i| format!("tide {}", "x ".repeat(i % 7))).collect();
    let (status, _, body) = post(&firstp_app(), "/v1/rerank", json!({"query": "tide", "candidates": candidates})).await;
    assert_eq!(status, StatusCode::OK);
    let mut order: Vec<u64> = body["order"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    order.sort_unstable();
    assert_eq!(order, (1..=45).collect::<Vec<u64>>());
}

#[tokio::test]
async fn summarize_plain_and_structured_documents() {
    let a = firstp_app();
    let (status, _, body) = post(
        &a,
        "/v1/summarize",
        json!({"query": "q", "document": "one two three four five six seven eight nine ten"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["summary"], "one two three four five six seven eight");
    assert_eq!(body["is_safeguard"], false);
    assert_eq!(body["backend"], "firstp-8");

    let (status, _, body) = post(
        &a,
        "/v1/summarize",
        json!({"query": "q", "document": {"title": "A title", "body": "no relevant information found."}}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["summary"], "A title no relevant information found.");
    assert_eq!(body["is_safeguard"], true);
}

#[tokio::test]
async fn malformed_body_is_a_structured_client_error() {
    let (status, id, body) = call(&firstp_app(), "POST", "/v1/rerank", Some("{not json".into())).await;
    assert!(status.is_client_error());
    assert_eq!(body["error"]["stage"], "request");
    assert!(!body["error"]["cause"].as_str().unwrap().is_empty());
    assert_eq!(body["request_id"], id.unwrap().as_str());
}

#[tokio::test]
async fn unknown_route_is_structured() {
    let (status, id, body) = call(&firstp_app(), "GET", "/v2/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["stage"], "request");
    assert!(id.is_some());
}

#[tokio::test]
async fn evaluate_run_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut qrels = QrelsTable::new();
    qrels.insert("q1", "a", 2);
    qrels.insert("q1", "b", 1);
    let run = vec![RankedList::from_ordered("q1", [("b".to_string(), 2.0), ("a".to_string(), 1.0)], "t")];
    write_qrels(&qrels, dir.path().join("qrels.txt")).unwrap();
    write_run(&run, dir.path().join("run.txt")).unwrap();

    let req = json!({
        "run_path": dir.path().join("run.txt"),
        "qrels_path": dir.path().join("qrels.txt"),
    });
    let (status, _, body) = post(&firstp_app(), "/v1/evaluate", req).await;
    assert_eq!(status, StatusCode::OK);
    let want = (1.0 + 2.0 / 3f64.log2()) / (2.0 + 1.0 / 3f64.log2());
    assert!((body["mean_ndcg"].as_f64().unwrap() - want).abs() < 1e-12);
    assert_eq!(body["mean_map"].as_f64().unwrap(), 1.0);
    assert_eq!(body["per_query"][0]["query_id"], "q1");

    let req = json!({"run_path": dir.path().join("missing.txt"), "qrels_path": dir.path().join("qrels.txt")});
    let (status, _, body) = post(&firstp_app(), "/v1/evaluate", req).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["stage"], "evaluate");
    assert!(body["error"]["cause"].as_str().unwrap().contains("missing.txt"));
}

#[tokio::test]
async fn unreachable_backend_is_503() {
    let cfg = RemoteConfig {
        url: "http://127.0.0.1:9/v1/chat/completions".into(),
        max_retries: 0,
        timeout_secs: 2,
        ..Default::default()
    };
    let remote = RemoteSummarizer::new(Arc::new(LlmClient::new(cfg)), PromptTemplate::default());
    let (status, id, body) = post(&app(Arc::new(remote)), "/v1/summarize", json!({"query": "q", "document": "text"})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"]["stage"], "summarize");
    assert!(body["error"]["cause"].as_str().unwrap().contains("unavailable"));
    assert_eq!(body["request_id"], id.unwrap().as_str());
}

/// A trained policy served over HTTP rejects most held-out negatives.
#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn trained_policy_rejects_heldout_negatives() {
    let data = generate(&SyntheticConfig {
        queries: 50,
        heldout: 15,
        background_docs: 100,
        ..Default::default()
    });
    let corpus = Corpus::from_documents(data.documents.clone()).unwrap();
    let index = Arc::new(InvertedIndex::build(&data.documents).unwrap());
    let rl = RlDataConfig::default();
    let mut train = build_rl_data(&data.train, &corpus, &index, &data.qrels, &rl, None).unwrap().instances;
    let heldout = build_rl_data(&data.heldout, &corpus, &index, &data.qrels, &rl, None).unwrap().instances;
    let docs = prepare_candidates(&train, &corpus, Some(&index)).unwrap();
    let (sft, _) = train_sft(&docs, &PolicyParams::zeros(), &SftConfig::default()).unwrap();
    let ranker = LexicalReranker::new(index.clone());
    let env = TrainEnv {
        corpus: &corpus,
        index: Some(&index),
        reranker: &ranker,
    };
    fill_backgrounds(&mut train, &sft, env, 3).unwrap();
    let out = train_grpo(&train, &heldout, &sft, env, &GrpoConfig::default()).unwrap();

    let app = app(Arc::new(PolicySummarizer::new(Arc::new(out.params), Some(index.clone()), 3)));
    let mut tasks = Vec::new();
    for inst in &heldout {
        for c in inst.candidates.iter().filter(|c| c.label == Label::Negative) {
            let doc = corpus.get(&c.doc_id).unwrap();
            let body = json!({
                "query": inst.query.text,
                "document": {"doc_id": doc.doc_id, "title": doc.title, "body": doc.body},
            });
            let app = app.clone();
            tasks.push(tokio::spawn(async move { post(&app, "/v1/summarize", body).await }));
        }
    }
    let total = tasks.len();
    let mut rejected = 0;
    for t in tasks {
        let (status, _, body) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        rejected += usize::from(body["is_safeguard"] == true);
    }
    let rate = rejected as f64 / total as f64;
    assert!(total >= 50 && rate >= 0.8, "{rejected}/{total} held-out negatives rejected");
}
