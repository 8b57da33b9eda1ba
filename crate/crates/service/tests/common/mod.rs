#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use conceptmap_core::hierarchy::LevelSizing;
use conceptmap_core::{build_hierarchy, embed_all, fixtures, BuildConfig, ExplorerArtifact};
use conceptmap_service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const TOY_CREATED_AT: &str = "2026-01-01T00:00:00Z";

/// 100 toy features in 16 dimensions, levels [100, 30, 15].
pub fn toy_artifact() -> ExplorerArtifact {
    static CELL: OnceLock<ExplorerArtifact> = OnceLock::new();
    CELL.get_or_init(|| {
        let (catalog, matrix) = fixtures::toy_catalog(100, 16, 7);
        let mut config = BuildConfig {
            sizing: LevelSizing::Fractions(vec![0.3, 0.5]),
            ..BuildConfig::default()
        };
        config.layout.deterministic = true;
        let hierarchy = build_hierarchy(&matrix, &config).unwrap();
        let positions = embed_all(&hierarchy, &config.layout, config.seed).unwrap();
        let mut a = ExplorerArtifact::new(catalog, matrix, hierarchy, positions);
        a.created_at = TOY_CREATED_AT.into();
        a
    })
    .clone()
}

pub fn app() -> Router {
    router(AppState::new(Some(toy_artifact())))
}

pub async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body.map(|b| b.to_string())).await;
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{uri}: non-JSON body ({e})"))
    };
    (status, value)
}

pub async fn call_raw(app: &Router, method: &str, uri: &str, body: Option<String>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header("content-type", "application/json");
    }
    let req = req.body(body.map(Body::from).unwrap_or_else(Body::empty)).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.json"))
}

/// Compares against `tests/golden/<name>.json`; `UPDATE_GOLDEN=1` rewrites it.
pub fn assert_golden(name: &str, actual: &Value) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, serde_json::to_string_pretty(actual).unwrap() + "\n").unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path)
        .unwrap_or_else(|_| panic!("missing golden {}; run with UPDATE_GOLDEN=1", path.display()));
    let expected: Value = serde_json::from_str(&expected).unwrap();
    assert_eq!(&expected, actual, "golden mismatch for {name}");
}

pub fn assert_error(status: StatusCode, body: &Value, want_status: u16, want_code: &str) {
    assert_eq!(status.as_u16(), want_status, "body: {body}");
    assert_eq!(body["code"], want_code, "body: {body}");
    assert!(body["message"].as_str().is_some_and(|m| !m.is_empty()));
}
