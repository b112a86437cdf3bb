use std::path::{Path, PathBuf};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cloudburst_cli::args::{Common, RunArgs};
use cloudburst_cli::commands::live_session;
use cloudburst_cli::gateway::{router, Gateway};
use cloudburst_cli::session::Session;
use cloudburst_core::evaluation::pipeline::{LearnedState, Mode, PipelineConfig};
use cloudburst_core::evaluation::run::{run_event, RunOptions, ScheduledDecision};
use cloudburst_core::world::generate_scenario;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const CONFIG: &str = r#"{"runtime": {"governance": {"hitl_timeout": 30}}}"#;

fn live(dir: &Path, seed: u64) -> Gateway {
    std::fs::create_dir_all(dir).unwrap();
    let config = dir.join("config.json");
    std::fs::write(&config, CONFIG).unwrap();
    let args = RunArgs {
        common: Common { config: Some(config), out: dir.join("out") },
        seed,
        mode: Mode::Mas,
    };
    Gateway::new(live_session(&args).unwrap())
}

fn run_dir(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("out/mas-seed{seed}"))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> Value {
    let (status, body) = call(app, "GET", uri, None, &[]).await;
    assert_eq!(status, StatusCode::OK, "{uri}");
    serde_json::from_slice(&body).unwrap()
}

async fn decide(app: &Router, id: u64, decision: &str) -> (StatusCode, Value) {
    let (status, body) = call(app, "POST", &format!("/hitl/{id}"), Some(json!({ "decision": decision })), &[]).await;
    (status, serde_json::from_slice(&body).unwrap())
}

/// The `data:` payloads of an SSE body, one per line.
fn sse_data(body: &[u8]) -> String {
    let text = String::from_utf8(body.to_vec()).unwrap();
    let mut out = String::new();
    for line in text.lines() {
        if let Some(d) = line.strip_prefix("data: ").or_else(|| line.strip_prefix("data:")) {
            out.push_str(d);
            out.push('\n');
        }
    }
    out
}

/// Steps until some item is pending; false if the run ended first.
fn step_until_pending(g: &Gateway) -> bool {
    loop {
        if g.lock().pending_hitl().as_array().is_some_and(|a| !a.is_empty()) {
            return true;
        }
        if g.step().is_none() {
            return false;
        }
    }
}

async fn drive(g: &Gateway, pace: f64) {
    let d = g.clone();
    tokio::task::spawn_blocking(move || d.drive(pace)).await.unwrap();
}

#[tokio::test]
async fn snapshot_is_stable_between_ticks() {
    let tmp = tempfile::tempdir().unwrap();
    let g = live(tmp.path(), 1);
    let app = router(g.clone());
    for _ in 0..6 {
        g.step();
    }
    let (_, a) = call(&app, "GET", "/state/snapshot", None, &[]).await;
    let (_, b) = call(&app, "GET", "/state/snapshot", None, &[]).await;
    assert_eq!(a, b);
    let snap: Value = serde_json::from_slice(&a).unwrap();
    assert_eq!(snap["done"], false);
    g.step();
    let c = get_json(&app, "/state/snapshot").await;
    assert!(c["clock"].as_u64() > snap["clock"].as_u64());
    assert!(c["version"].as_u64() >= snap["version"].as_u64());
}

#[tokio::test]
async fn decisions_resolve_once() {
    let tmp = tempfile::tempdir().unwrap();
    let g = live(tmp.path(), 2);
    let app = router(g.clone());
    assert!(step_until_pending(&g), "no review item");
    let pending = get_json(&app, "/hitl").await;
    let id = pending[0]["id"].as_u64().unwrap();
    let (status, item) = decide(&app, id, "approve").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["status"], "approved");
    let (status, again) = decide(&app, id, "override").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(again["item"]["status"], "approved");
    let pending = get_json(&app, "/hitl").await;
    assert!(pending.as_array().unwrap().iter().all(|i| i["id"] != id));
    let (status, _) = decide(&app, 9_999, "approve").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", &format!("/hitl/{id}"), Some(json!({"decision": "maybe"})), &[]).await;
    assert!(status.is_client_error());

    drive(&g, 0.0).await;
    let audit = std::fs::read_to_string(run_dir(tmp.path(), 2).join("audit.ndjson")).unwrap();
    let operator: Vec<Value> = audit
        .lines()
        .skip(1)
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|r| r["actor"] == "operator" && r["subject"] == format!("hitl/{id}"))
        .collect();
    assert_eq!(operator.len(), 1);
    assert_eq!(operator[0]["new_value"], "approved");
    // Finished runs still answer with the terminal status.
    let (status, _) = decide(&app, id, "approve").await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_posts_yield_one_success() {
    let tmp = tempfile::tempdir().unwrap();
    let g = live(tmp.path(), 2);
    let app = router(g.clone());
    assert!(step_until_pending(&g));
    let id = get_json(&app, "/hitl").await[0]["id"].as_u64().unwrap();
    let calls = (0..12).map(|i| {
        let app = app.clone();
        tokio::spawn(async move { decide(&app, id, if i % 2 == 0 { "approve" } else { "override" }).await.0 })
    });
    let statuses: Vec<StatusCode> = futures::future::join_all(calls).await.into_iter().map(|r| r.unwrap()).collect();
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::OK).count(), 1, "{statuses:?}");
    assert_eq!(statuses.iter().filter(|s| **s == StatusCode::CONFLICT).count(), 11);
}

#[tokio::test]
async fn timed_out_items_conflict() {
    let tmp = tempfile::tempdir().unwrap();
    let g = live(tmp.path(), 2);
    let app = router(g.clone());
    assert!(step_until_pending(&g));
    let item = get_json(&app, "/hitl").await[0].clone();
    let deadline = item["deadline"].as_u64().unwrap();
    while g.lock().snapshot()["clock"].as_u64().unwrap() <= deadline {
        g.step();
    }
    let (status, body) = decide(&app, item["id"].as_u64().unwrap(), "approve").await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["item"]["status"], "timed_out");
}

#[tokio::test]
async fn live_decisions_replay_through_the_core() {
    let tmp = tempfile::tempdir().unwrap();
    let g = live(tmp.path(), 2);
    let app = router(g.clone());
    let mut flip = false;
    while step_until_pending(&g) {
        for item in get_json(&app, "/hitl").await.as_array().unwrap() {
            flip = !flip;
            let (status, _) = decide(&app, item["id"].as_u64().unwrap(), if flip { "approve" } else { "override" }).await;
            assert_eq!(status, StatusCode::OK);
        }
    }
    let dir = run_dir(tmp.path(), 2);
    let operator: Vec<ScheduledDecision> = serde_json::from_str(&std::fs::read_to_string(dir.join("operator.json")).unwrap()).unwrap();
    assert!(!operator.is_empty());
    let config: PipelineConfig = serde_json::from_str(CONFIG).unwrap();
    let sc = generate_scenario(&config.scenario, 2).unwrap();
    let replay = run_event(&sc, &config, Mode::Mas, &LearnedState::initial(&config), &RunOptions { faults: vec![], operator }).unwrap();
    assert_eq!(std::fs::read_to_string(dir.join("audit.ndjson")).unwrap(), replay.audit().to_ndjson());
    assert_eq!(std::fs::read_to_string(dir.join("events.ndjson")).unwrap(), replay.trace().stream_ndjson());
}

#[tokio::test]
async fn replay_streams_the_live_event_log_read_only() {
    let tmp = tempfile::tempdir().unwrap();
    let g = live(tmp.path(), 3);
    let app = router(g.clone());
    drive(&g, 0.0).await;
    let (status, live_body) = call(&app, "GET", "/events", None, &[]).await;
    assert_eq!(status, StatusCode::OK);
    let dir = run_dir(tmp.path(), 3);
    let recorded = std::fs::read_to_string(dir.join("events.ndjson")).unwrap();
    assert!(recorded.lines().count() > 10);
    assert_eq!(sse_data(&live_body), recorded);
    let live_snapshot = get_json(&app, "/state/snapshot").await;
    assert_eq!(live_snapshot["done"], true);

    for pace in [0.0, 50_000.0] {
        let r = Gateway::new(Session::replay(&dir).unwrap());
        let rapp = router(r.clone());
        drive(&r, pace).await;
        let (_, body) = call(&rapp, "GET", "/events", None, &[]).await;
        assert_eq!(sse_data(&body), recorded, "pace {pace}");
        assert_eq!(get_json(&rapp, "/state/snapshot").await, live_snapshot);
        assert_eq!(get_json(&rapp, "/alerts").await, get_json(&app, "/alerts").await);
        let (status, _) = decide(&rapp, 0, "approve").await;
        assert_eq!(status, StatusCode::FORBIDDEN);
    }

    // Grid blobs referenced by the final state are served in both modes.
    let r = Gateway::new(Session::replay(&dir).unwrap());
    let rapp = router(r);
    let hash = live_snapshot["grids"]["analysis"][0].as_str().unwrap().to_string();
    let (s1, b1) = call(&app, "GET", &format!("/grids/{hash}"), None, &[]).await;
    let (s2, b2) = call(&rapp, "GET", &format!("/grids/{hash}"), None, &[]).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(b1, b2);
    let grid: Value = serde_json::from_slice(&b1).unwrap();
    assert!(grid["data"].as_array().unwrap().len() > 100);
    for bad in ["ffff", "..%2Fmanifest", "index"] {
        let (status, _) = call(&rapp, "GET", &format!("/grids/{bad}"), None, &[]).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{bad}");
    }
}

#[tokio::test]
async fn stream_resumes_after_the_last_event_id() {
    let tmp = tempfile::tempdir().unwrap();
    let g = live(tmp.path(), 4);
    let app = router(g.clone());
    drive(&g, 0.0).await;
    let (_, all) = call(&app, "GET", "/events", None, &[]).await;
    let (_, rest) = call(&app, "GET", "/events", None, &[("last-event-id", "4")]).await;
    let all: Vec<String> = sse_data(&all).lines().map(str::to_string).collect();
    let rest: Vec<String> = sse_data(&rest).lines().map(str::to_string).collect();
    assert_eq!(rest, all[5..]);
    assert!(String::from_utf8(call(&app, "GET", "/events", None, &[]).await.1).unwrap().contains("id: 0\n"));
}

#[tokio::test]
async fn pacing_changes_timing_only() {
    let tmp = tempfile::tempdir().unwrap();
    let fast = live(&tmp.path().join("fast"), 5);
    let slow = live(&tmp.path().join("slow"), 5);
    let started = std::time::Instant::now();
    drive(&fast, 0.0).await;
    let unpaced = started.elapsed();
    let started = std::time::Instant::now();
    // 300 simulated minutes per second.
    drive(&slow, 300.0).await;
    assert!(started.elapsed() > unpaced);
    let (_, a) = call(&router(fast), "GET", "/events", None, &[]).await;
    let (_, b) = call(&router(slow), "GET", "/events", None, &[]).await;
    assert_eq!(a, b);
}
