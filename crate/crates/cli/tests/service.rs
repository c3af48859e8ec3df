mod common;

use std::collections::BTreeMap;
use std::process::Command;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::{built, write_config};
use gram_cli::service::UpsertResponse;
use gram_cli::stages::load_data;
use gram_cli::{router, AppState, RetrieveResponse, ServiceConfig};
use gram_core::corpus::{ProductId, ProductRecord};
use gram_core::index::RetrievalEngine;
use http_body_util::BodyExt;
use tower::ServiceExt;

fn engine(cache: usize) -> Arc<RetrievalEngine> {
    let b = built();
    let mut sc = ServiceConfig::from_store(&b.cfg, &b.store).unwrap();
    sc.cache_capacity = cache;
    Arc::new(sc.load_engine().unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: &str) -> (StatusCode, serde_json::Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn retrieve(app: &Router, query: &str, k: Option<usize>) -> RetrieveResponse {
    let body = serde_json::json!({"query": query, "k": k}).to_string();
    let (s, v) = call(app, "POST", "/retrieve", &body).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

fn test_queries() -> Vec<String> {
    let b = built();
    load_data(&b.cfg, &b.store)
        .unwrap()
        .test_queries
        .iter()
        .map(|q| q.text.clone())
        .collect()
}

#[tokio::test]
async fn retrieve_returns_sorted_products() {
    let app = router(AppState::new(engine(100)));
    let mut nonempty = 0;
    for q in test_queries() {
        let r = retrieve(&app, &q, Some(5)).await;
        assert!(r.products.len() <= 5);
        assert!(r.products.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(r.index_version, 0);
        nonempty += usize::from(!r.products.is_empty());
    }
    assert!(nonempty > 0);
    let (s, v) = call(&app, "GET", "/health", "").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
}

#[tokio::test]
async fn bad_requests_are_rejected() {
    let app = router(AppState::new(engine(0)));
    for body in [
        r#"{"query": ""}"#,
        r#"{"query": "   "}"#,
        r#"{"query": "kettle", "k": 0}"#,
        r#"{"query": 5}"#,
        r#"{"query": "kettle", "extra": 1}"#,
        r#"not json"#,
        "",
    ] {
        let (s, v) = call(&app, "POST", "/retrieve", body).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert!(v["error"].is_string());
    }
    for body in [r#"{"product_id": 1}"#, r#"{"product_id": 1, "title": "", "attributes": []}"#, "[]"] {
        let (s, _) = call(&app, "POST", "/upsert", body).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
    }
}

#[tokio::test]
async fn uninitialized_service_answers_503() {
    let app = router(AppState::uninitialized());
    let (s, _) = call(&app, "POST", "/retrieve", r#"{"query": "kettle"}"#).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (s, _) = call(&app, "POST", "/upsert", r#"{"product_id": 1, "title": "x", "attributes": []}"#).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (s, _) = call(&app, "GET", "/health", "").await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    // validation still runs first
    let (s, _) = call(&app, "POST", "/retrieve", r#"{"query": ""}"#).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

/// A product whose own title retrieves it.
fn self_retrieving(engine: &RetrievalEngine) -> ProductRecord {
    let b = built();
    let data = load_data(&b.cfg, &b.store).unwrap();
    data.products()
        .iter()
        .find(|p| {
            let r = engine.retrieve(&p.title, None).unwrap();
            r.products.iter().any(|h| h.id == p.product_id)
        })
        .cloned()
        .expect("some product is retrievable by its title")
}

#[tokio::test]
async fn upserted_product_becomes_retrievable() {
    let eng = engine(100);
    let app = router(AppState::new(eng.clone()));
    let host = self_retrieving(&eng);
    let new = ProductRecord {
        product_id: ProductId(50_000),
        ..host.clone()
    };
    let before = retrieve(&app, &host.title, None).await;
    assert!(before.products.iter().all(|p| p.id != new.product_id));

    let (s, v) = call(&app, "POST", "/upsert", &serde_json::to_string(&new).unwrap()).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let up: UpsertResponse = serde_json::from_value(v).unwrap();
    assert_eq!(up.new_version, 1);

    let after = retrieve(&app, &host.title, None).await;
    assert_eq!(after.index_version, 1);
    let hit = after.products.iter().find(|p| p.id == new.product_id).expect("upserted product retrieved");
    let twin = after.products.iter().find(|p| p.id == host.product_id).unwrap();
    assert_eq!(hit.score, twin.score);
    assert_eq!(hit.codes, twin.codes);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_retrieves_see_consistent_versions() {
    let eng = engine(0);
    let app = router(AppState::new(eng.clone()));
    let host = self_retrieving(&eng);
    let queries: Vec<String> = test_queries().into_iter().chain([host.title.clone()]).collect();

    // expected responses at version 0, and at version 1 from a twin engine
    let mut expected: BTreeMap<(u64, String), RetrieveResponse> = BTreeMap::new();
    let new = ProductRecord {
        product_id: ProductId(50_001),
        ..host.clone()
    };
    let twin = engine(0);
    for q in &queries {
        expected.insert((0, q.clone()), retrieve(&app, q, None).await);
    }
    twin.upsert(&new).unwrap();
    for q in &queries {
        let r = twin.retrieve(q, None).unwrap();
        expected.insert(
            (1, q.clone()),
            RetrieveResponse {
                products: r.products,
                index_version: r.index_version,
            },
        );
    }

    let mut tasks = Vec::new();
    for i in 0..100 {
        let a = app.clone();
        let q = queries[i % queries.len()].clone();
        tasks.push(tokio::spawn(async move {
            let r = retrieve(&a, &q, None).await;
            (q, r)
        }));
        if i == 20 {
            let app = app.clone();
            let body = serde_json::to_string(&new).unwrap();
            tasks.push(tokio::spawn(async move {
                let (s, v) = call(&app, "POST", "/upsert", &body).await;
                assert_eq!(s, StatusCode::OK, "{v}");
                (String::new(), RetrieveResponse { products: vec![], index_version: u64::MAX })
            }));
        }
    }
    let mut versions = BTreeMap::new();
    for t in tasks {
        let (q, r) = t.await.unwrap();
        if r.index_version == u64::MAX {
            continue;
        }
        assert_eq!(&r, &expected[&(r.index_version, q)]);
        *versions.entry(r.index_version).or_insert(0) += 1;
    }
    assert_eq!(versions.values().sum::<usize>(), 100);
    assert!(versions.keys().all(|v| *v <= 1));
    assert_eq!(eng.snapshot().version(), 1);
}

#[tokio::test]
async fn cli_retrieve_matches_service() {
    let b = built();
    let app = router(AppState::new(engine(100)));
    let cfg_path = b.dir.path().join("cli-config.json");
    write_config(&b.cfg, &cfg_path);
    for q in test_queries().into_iter().take(3) {
        let out = Command::new(env!("CARGO_BIN_EXE_gram"))
            .env("RUST_LOG", "warn")
            .args(["retrieve", "--k", "7", "--query", &q, "--config"])
            .arg(&cfg_path)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let cli: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let body = serde_json::json!({"query": q, "k": 7}).to_string();
        let (s, svc) = call(&app, "POST", "/retrieve", &body).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(cli, svc);
    }
}

#[test]
fn service_config_requires_existing_paths() {
    let b = built();
    let mut sc = ServiceConfig::from_store(&b.cfg, &b.store).unwrap();
    sc.validate().unwrap();
    sc.index = b.dir.path().join("missing.bin");
    assert!(sc.load_engine().is_err());
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::small_config(dir.path());
    assert!(ServiceConfig::from_store(&cfg, &gram_cli::Store::for_config(&cfg)).is_err());
}
