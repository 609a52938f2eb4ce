mod common;

use std::sync::{Arc, RwLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::*;
use serde_json::{json, Value};
use stancekit_service::http::router;
use tower::ServiceExt;

struct Api {
    app: Router,
}

impl Api {
    fn new(dir: &std::path::Path) -> Self {
        let world = world();
        let svc = open(&world, dir);
        Self {
            app: router(Arc::new(RwLock::new(svc))),
        }
    }

    async fn call(&self, method: &str, path: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(path);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, value)
    }
}

#[tokio::test]
async fn tokens_are_required() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(dir.path());
    let (s, body) = api.call("GET", "/v1/progress", None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    assert_eq!(body["kind"], "unauthorized");
    let (s, _) = api.call("GET", "/v1/progress", Some("wrong"), None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, _) = api.call("GET", "/v1/progress", Some("tok-a"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = api.call("GET", "/v1/nothing", Some("tok-a"), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn round_and_session_flow() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(dir.path());

    let (s, body) = api.call("POST", "/v1/rounds", Some("tok-boss"), Some(json!({"strategy": "certainty"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let (s, _) = api.call("POST", "/v1/rounds", Some("tok-a"), Some(json!({"strategy": "random", "n": 20}))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);
    let (s, _) = api.call("POST", "/v1/rounds", Some("tok-boss"), Some(json!({"strategy": "bogus"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, first) = api.call("POST", "/v1/rounds", Some("tok-boss"), Some(json!({"strategy": "random", "n": 20}))).await;
    assert_eq!(s, StatusCode::OK);
    let (_, again) = api.call("POST", "/v1/rounds", Some("tok-boss"), Some(json!({"strategy": "random", "n": 20}))).await;
    assert_eq!(first, again);
    let (_, current) = api.call("GET", "/v1/rounds/current", Some("tok-c"), None).await;
    assert_eq!(current, first);

    let (s, session) = api.call("POST", "/v1/sessions", Some("tok-a"), None).await;
    assert_eq!(s, StatusCode::OK);
    let sid = session["session_id"].as_str().unwrap().to_string();
    let (s, next) = api.call("GET", &format!("/v1/sessions/{sid}/next"), Some("tok-a"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(next["status"], "document");
    assert!(next["question"].as_str().unwrap().ends_with("stance toward gender equality?"));
    assert!(!next["text"].as_str().unwrap().is_empty());
    let doc = next["doc_id"].clone();

    let labels = format!("/v1/sessions/{sid}/labels");
    let (s, _) = api.call("POST", &labels, Some("tok-a"), Some(json!({"doc_id": doc, "label": "yes"}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (_, still) = api.call("GET", &format!("/v1/sessions/{sid}/next"), Some("tok-a"), None).await;
    assert_eq!(still, next);
    let (s, _) = api.call("POST", &labels, Some("tok-a"), Some(json!({"doc_id": doc}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = api.call("POST", &labels, Some("tok-b"), Some(json!({"doc_id": doc, "label": "neutral"}))).await;
    assert_eq!(s, StatusCode::FORBIDDEN);

    let (s, ack) = api.call("POST", &labels, Some("tok-a"), Some(json!({"doc_id": doc, "label": "neutral"}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ack["cursor"], 1);
    let (_, retry) = api.call("POST", &labels, Some("tok-a"), Some(json!({"doc_id": doc, "label": "neutral"}))).await;
    assert_eq!(retry["duplicate"], true);
    assert_eq!(retry["cursor"], 1);

    let (s, _) = api.call("POST", "/v1/rounds/close", Some("tok-boss"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, progress) = api.call("GET", "/v1/progress", Some("tok-boss"), None).await;
    assert_eq!(progress["annotators"]["ann-a"]["labeled"], 1);
    let (s, agreement) = api.call("GET", "/v1/agreement", Some("tok-boss"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(agreement.is_object());
}

#[tokio::test]
async fn exemplars() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::new(dir.path());
    let (s, _) = api
        .call("POST", "/v1/exemplars", Some("tok-a"), Some(json!({"text": "x", "intended_label": "neutral"})))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = api
        .call("POST", "/v1/exemplars", Some("tok-a"), Some(json!({"text": "", "intended_label": "positive"})))
        .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let mut last = Value::Null;
    for (tok, i) in ["tok-a", "tok-b", "tok-c"].iter().flat_map(|t| (0..10).map(move |i| (*t, i))) {
        let l = if i % 2 == 0 { "positive" } else { "negative" };
        let (s, ack) = api
            .call("POST", "/v1/exemplars", Some(tok), Some(json!({"text": format!("{tok} {i}"), "intended_label": l})))
            .await;
        assert_eq!(s, StatusCode::OK);
        last = ack;
    }
    assert_eq!(last["stored"], 30);
    let (s, _) = api
        .call("POST", "/v1/exemplars", Some("tok-boss"), Some(json!({"text": "x", "intended_label": "positive"})))
        .await;
    assert_eq!(s, StatusCode::FORBIDDEN);
}
