use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use chroma_core::colorspace::RgbImage;
use chroma_core::study::{read_store, PoolEntry, StoreRecord, Study, StudyPool, StudySettings};
use chroma_service::api::{router, AppState, OPERATOR_HEADER};

const METHODS: [&str; 4] = ["real", "full", "no_class", "no_adversarial"];

fn pool(dir: &Path, n: usize) -> StudyPool {
    let entries = (0..n)
        .map(|i| {
            let path = dir.join(format!("{i}.png"));
            RgbImage::from_fn(4, 4, |x, y| [(x * 60) as u8, (y * 60) as u8, (i * 10) as u8])
                .save(&path)
                .unwrap();
            PoolEntry {
                image_id: format!("{}-{i}", METHODS[i % 4]),
                method_id: METHODS[i % 4].into(),
                path,
            }
        })
        .collect();
    StudyPool::from_entries(entries).unwrap()
}

fn app(dir: &Path, k: usize, token: Option<&str>) -> Router {
    let study = Study::open(
        pool(dir, 12),
        StudySettings {
            k,
            seed: 11,
            time_limit_ms: Some(1500),
        },
        &dir.join("store.jsonl"),
    )
    .unwrap();
    router(Arc::new(AppState {
        study: Mutex::new(study),
        operator_token: token.map(str::to_string),
    }))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, token: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header(OPERATOR_HEADER, t);
    }
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

fn assert_blind(bytes: &[u8]) {
    let text = String::from_utf8_lossy(bytes);
    for m in METHODS {
        assert!(!text.contains(m), "payload leaks method label {m}: {text}");
    }
}

#[tokio::test]
async fn full_session_is_blind_and_versioned() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 3, Some("op"));
    let (status, body) = call(&app, "POST", "/v1/sessions", Some(json!({"participant_id": "p1"})), None).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_blind(&body);
    let s = json(&body);
    assert_eq!((s["v"].as_u64(), s["k"].as_u64(), s["cursor"].as_u64()), (Some(1), Some(3), Some(0)));
    assert_eq!(s["time_limit_ms"], 1500);
    let sid = s["session_id"].as_str().unwrap().to_string();

    for i in 0..3 {
        let (status, body) = call(&app, "GET", &format!("/v1/sessions/{sid}/current"), None, None).await;
        assert_eq!(status, StatusCode::OK);
        assert_blind(&body);
        let item = json(&body);
        assert_eq!(item["position"], i);
        let item_id = item["item_id"].as_str().unwrap();
        let (status, bytes) = call(&app, "GET", &format!("/v1/sessions/{sid}/items/{item_id}/image"), None, None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(&bytes[1..4], b"PNG");
        let verdict = if i == 1 { "unrealistic" } else { "realistic" };
        let (status, body) = call(
            &app,
            "POST",
            &format!("/v1/sessions/{sid}/judgments"),
            Some(json!({"item_id": item_id, "verdict": verdict})),
            None,
        )
        .await;
        assert_eq!(status, StatusCode::OK);
        assert_blind(&body);
        assert_eq!(json(&body)["cursor"], i + 1);
    }
    let (_, body) = call(&app, "GET", &format!("/v1/sessions/{sid}/current"), None, None).await;
    assert_eq!(json(&body)["complete"], true);

    let (status, body) = call(&app, "GET", "/v1/results", None, Some("op")).await;
    assert_eq!(status, StatusCode::OK);
    let r = json(&body);
    let judged: u64 = r["methods"].as_array().unwrap().iter().map(|m| m["judged"].as_u64().unwrap()).sum();
    let realistic: u64 = r["methods"].as_array().unwrap().iter().map(|m| m["realistic"].as_u64().unwrap()).sum();
    assert_eq!((judged, realistic), (3, 2));
    assert_eq!(r["completed_sessions"], 1);
}

#[tokio::test]
async fn protocol_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 4, None);
    let (_, body) = call(&app, "POST", "/v1/sessions", None, None).await;
    let sid = json(&body)["session_id"].as_str().unwrap().to_string();
    let (_, body) = call(&app, "GET", &format!("/v1/sessions/{sid}/current"), None, None).await;
    let first = json(&body)["item_id"].as_str().unwrap().to_string();

    let (status, body) = call(
        &app,
        "POST",
        &format!("/v1/sessions/{sid}/judgments"),
        Some(json!({"item_id": "0000000000000000", "verdict": "realistic"})),
        None,
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(json(&body)["message"].as_str().unwrap().contains(&first));

    let post = |verdict: &'static str| {
        let app = app.clone();
        let uri = format!("/v1/sessions/{sid}/judgments");
        let first = first.clone();
        async move { call(&app, "POST", &uri, Some(json!({"item_id": first, "verdict": verdict})), None).await }
    };
    assert_eq!(post("skipped").await.0, StatusCode::OK);
    let store = dir.path().join("store.jsonl");
    let before = std::fs::read(&store).unwrap();
    let (status, body) = post("realistic").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(json(&body)["error"], "protocol");
    assert_eq!(std::fs::read(&store).unwrap(), before);

    let (status, _) = call(&app, "GET", "/v1/sessions/unknown/current", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/v1/results", None, None).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, _) = call(
        &app,
        "POST",
        &format!("/v1/sessions/{sid}/judgments"),
        Some(json!({"item_id": first, "verdict": "maybe"})),
        None,
    )
    .await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn results_need_the_operator_token() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 2, Some("secret"));
    let (status, _) = call(&app, "GET", "/v1/results", None, Some("wrong")).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    let (status, body) = call(&app, "GET", "/v1/results", None, Some("secret")).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(json(&body)["error"], "empty");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_lose_no_records() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path(), 5, None);
    let mut tasks = Vec::new();
    for p in 0..8 {
        let app = app.clone();
        tasks.push(tokio::spawn(async move {
            let (_, body) = call(&app, "POST", "/v1/sessions", Some(json!({"participant_id": format!("p{p}")})), None).await;
            let sid = json(&body)["session_id"].as_str().unwrap().to_string();
            for _ in 0..5 {
                let (_, body) = call(&app, "GET", &format!("/v1/sessions/{sid}/current"), None, None).await;
                let item = json(&body)["item_id"].as_str().unwrap().to_string();
                let (status, _) = call(
                    &app,
                    "POST",
                    &format!("/v1/sessions/{sid}/judgments"),
                    Some(json!({"item_id": item, "verdict": "realistic"})),
                    None,
                )
                .await;
                assert_eq!(status, StatusCode::OK);
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let records = read_store(&dir.path().join("store.jsonl")).unwrap();
    let judgments = records.iter().filter(|r| matches!(r, StoreRecord::Judgment { .. })).count();
    assert_eq!((records.len(), judgments), (48, 40));
}
