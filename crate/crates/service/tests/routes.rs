use std::path::{Path, PathBuf};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mirror_core::backend::ReplayBackend;
use mirror_core::{analyze_document, AnalysisOptions};
use mirror_service::{build_state, router, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

const FIXTURES: [&str; 3] = ["fact", "locations", "discussion"];

fn core_tests() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests")
}

fn recorded_text(path: &Path) -> String {
    ReplayBackend::load(path).unwrap().documents()[0].text()
}

fn config(data_dir: &Path, max_text_bytes: usize) -> ServiceConfig {
    let fx = core_tests().join("fixtures");
    let raw = format!(
        r#"
data_dir = "{data}"
max_text_bytes = {max_text_bytes}

[[backends]]
type = "replay"
path = "{replay}"

[[backends]]
type = "replay"
path = "{oracle}"

[[backends]]
type = "replay"
id = "recall"
path = "{recall}"
"#,
        data = data_dir.display(),
        replay = fx.join("replay").display(),
        oracle = fx.join("cloze/oracle.jsonl").display(),
        recall = fx.join("handmade/recall_all.jsonl").display(),
    );
    ServiceConfig::parse(&raw, Path::new("test.toml"), data_dir).unwrap()
}

fn app(data_dir: &Path) -> Router {
    router(build_state(&config(data_dir, 1 << 20)).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn submit(app: &Router, body: Value) -> (StatusCode, Value) {
    let (status, text) = call(app, "POST", "/api/analyze", Some(body.to_string())).await;
    (status, serde_json::from_str(&text).unwrap())
}

/// Polls until the run leaves the pending state.
async fn settle(app: &Router, id: &str) -> Value {
    for _ in 0..500 {
        let (status, text) = call(app, "GET", &format!("/api/runs/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let run: Value = serde_json::from_str(&text).unwrap();
        if run["status"] != "pending" {
            return run;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("run {id} never finished");
}

#[tokio::test(flavor = "multi_thread")]
async fn results_match_the_engine_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    for name in FIXTURES {
        let fixture = core_tests().join(format!("fixtures/replay/{name}.jsonl"));
        let text = recorded_text(&fixture);
        let (status, body) = submit(&app, json!({ "text": text, "backend_id": "fixture-lm" })).await;
        assert_eq!(status, StatusCode::ACCEPTED);
        let id = body["run_id"].as_str().unwrap().to_string();
        assert_eq!(settle(&app, &id).await["status"], "done");
        let (status, served) = call(&app, "GET", &format!("/api/runs/{id}/result"), None).await;
        assert_eq!(status, StatusCode::OK);
        let backend = ReplayBackend::load(&core_tests().join("fixtures/replay")).unwrap();
        let direct = analyze_document(&text, &backend, &AnalysisOptions::default())
            .unwrap()
            .to_canonical_json();
        assert_eq!(served, direct, "{name}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn resubmission_returns_the_same_run() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let text = recorded_text(&core_tests().join("fixtures/replay/fact.jsonl"));
    let req = json!({ "text": text, "backend_id": "fixture-lm", "options": { "z_threshold": 2.0 } });
    let (_, first) = submit(&app, req.clone()).await;
    let id = first["run_id"].as_str().unwrap();
    settle(&app, id).await;
    let (status, second) = submit(&app, req).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(second["run_id"], first["run_id"]);
    assert_eq!(second["status"], "done");
    // the default threshold is a different run
    let (_, third) = submit(&app, json!({ "text": text, "backend_id": "fixture-lm" })).await;
    assert_ne!(third["run_id"], first["run_id"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn finished_runs_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let text = recorded_text(&core_tests().join("fixtures/replay/locations.jsonl"));
    let (id, before) = {
        let app = app(dir.path());
        let (_, body) = submit(&app, json!({ "text": text, "backend_id": "fixture-lm" })).await;
        let id = body["run_id"].as_str().unwrap().to_string();
        settle(&app, &id).await;
        let (_, result) = call(&app, "GET", &format!("/api/runs/{id}/result"), None).await;
        (id, result)
    };
    let app = app(dir.path());
    let (status, after) = call(&app, "GET", &format!("/api/runs/{id}/result"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after, before);
    let (status, body) = submit(&app, json!({ "text": text, "backend_id": "fixture-lm" })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "done");
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_runs_carry_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = submit(&app, json!({ "text": "never recorded", "backend_id": "fixture-lm" })).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let id = body["run_id"].as_str().unwrap();
    let run = settle(&app, id).await;
    assert_eq!(run["status"], "failed");
    assert!(run["error"].as_str().unwrap().contains("fixture"), "{run}");
    let (status, body) = call(&app, "GET", &format!("/api/runs/{id}/result"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert!(body.contains("run failed"));
}

#[tokio::test(flavor = "multi_thread")]
async fn request_errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(build_state(&config(dir.path(), 16)).unwrap());
    let cases = [
        (json!({ "text": "a", "backend_id": "nope" }).to_string(), StatusCode::NOT_FOUND),
        (json!({ "text": "x".repeat(17), "backend_id": "recall" }).to_string(), StatusCode::PAYLOAD_TOO_LARGE),
        (
            json!({ "text": "a", "backend_id": "recall", "options": { "top_k": 0 } }).to_string(),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (
            json!({ "text": "a", "backend_id": "recall", "options": { "topk": 3 } }).to_string(),
            StatusCode::UNPROCESSABLE_ENTITY,
        ),
        (json!({ "backend_id": "recall" }).to_string(), StatusCode::UNPROCESSABLE_ENTITY),
        ("{\"text\": ".to_string(), StatusCode::BAD_REQUEST),
    ];
    for (body, want) in cases {
        let (status, text) = call(&app, "POST", "/api/analyze", Some(body.clone())).await;
        assert_eq!(status, want, "{body}");
        let err: Value = serde_json::from_str(&text).unwrap();
        assert!(err["error"].is_string());
    }
    let (status, _) = call(&app, "GET", "/api/runs/0000", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/api/health", None).await.0, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread")]
async fn backends_are_listed_with_their_descriptors() {
    let dir = tempfile::tempdir().unwrap();
    let (status, body) = call(&app(dir.path()), "GET", "/api/backends", None).await;
    assert_eq!(status, StatusCode::OK);
    let list: Vec<Value> = serde_json::from_str(&body).unwrap();
    let ids: Vec<&str> = list.iter().map(|d| d["backend_id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["fixture-lm", "oracle", "recall"]);
    assert_eq!(list[0]["vocab_size"], 117);
    assert_eq!(list[0]["bos_id"], 0);

    let empty = ServiceConfig::parse(&format!("data_dir = \"{}\"\n", dir.path().display()), Path::new("e.toml"), dir.path()).unwrap();
    let (status, body) = call(&router(build_state(&empty).unwrap()), "GET", "/api/backends", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, "[]");
}

#[tokio::test(flavor = "multi_thread")]
async fn bench_and_memcheck_routes() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let items: Vec<Value> = std::fs::read_to_string(core_tests().join("fixtures/cloze/items.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let req = json!({ "backend_ids": ["oracle"], "items": items, "flops": { "oracle": 1e18 } });
    let (status, body) = call(&app, "POST", "/api/bench", Some(req.to_string())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let reports: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(reports[0]["overall"]["raw_accuracy"], 1.0);
    assert_eq!(reports[0]["flops"], 1e18);
    let (status, _) = call(&app, "POST", "/api/bench", Some(json!({ "backend_ids": ["oracle"], "items": [] }).to_string())).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let text = recorded_text(&core_tests().join("fixtures/handmade/recall_all.jsonl"));
    let req = json!({ "text": text, "backend_id": "recall" });
    let (status, body) = call(&app, "POST", "/api/memcheck", Some(req.to_string())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let report: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(report["mode"], "teacher_forced");
    assert_eq!(report["match_fraction"], 1.0);
}
