mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use oselect_cli::api::{router, TOKEN_HEADER};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Client {
    app: axum::Router,
}

impl Client {
    fn new() -> Self {
        Client {
            app: router(Arc::new(common::memory_service(common::special()))),
        }
    }

    async fn call(&self, method: &str, uri: &str, token: Option<&str>, body: Option<String>) -> (StatusCode, Value, String) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header(TOKEN_HEADER, t);
        }
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b)),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let text = String::from_utf8(bytes.to_vec()).unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::Null), text)
    }

    async fn create(&self, annotator: &str) -> (String, String) {
        let (status, v, _) = self
            .call("POST", "/api/v1/sessions", None, Some(json!({"annotator_id": annotator}).to_string()))
            .await;
        assert_eq!(status, StatusCode::CREATED);
        (v["session_id"].as_str().unwrap().into(), v["token"].as_str().unwrap().into())
    }
}

fn first_option(next: &Value) -> (String, u64) {
    let q = &next["question"];
    (q["question_id"].as_str().unwrap().to_string(), q["options"][0]["id"].as_u64().unwrap())
}

#[tokio::test]
async fn health_and_unknown_routes() {
    let c = Client::new();
    let (s, v, _) = c.call("GET", "/api/v1/healthz", None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let (s, _, _) = c.call("GET", "/api/v1/nothing", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn session_walkthrough() {
    let c = Client::new();
    let (sid, tok) = c.create("ann-1").await;
    let next_uri = format!("/api/v1/sessions/{sid}/next");
    let resp_uri = format!("/api/v1/sessions/{sid}/responses");

    let (s, v, _) = c.call("GET", &next_uri, Some(&tok), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "question");
    let q = &v["question"];
    assert!(!q["tables"].as_array().unwrap().is_empty());
    assert!(q["tables"][0]["columns"][0]["type"].is_string());
    assert!(q["options"].as_array().unwrap().len() >= 2);
    assert_eq!(q["time_limit_secs"], 240);
    assert!(q["utterance"].as_str().unwrap().len() > 3);

    // Missing token, unknown session.
    let (s, _, _) = c.call("GET", &next_uri, None, None).await;
    assert_eq!(s, StatusCode::UNAUTHORIZED);
    let (s, v404, _) = c.call("GET", "/api/v1/sessions/s9999/next", Some(&tok), None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v404["error"]["kind"], "unknown_session");

    // Malformed bodies.
    for bad in ["{", r#"{"response": 0}"#, r#"{"question_id": "x", "response": "maybe"}"#, r#"{"question_id": "x", "response": 0, "extra": 1}"#] {
        let (s, e, _) = c.call("POST", &resp_uri, Some(&tok), Some(bad.into())).await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
        assert_eq!(e["error"]["kind"], "malformed");
    }
    let (qid, opt) = first_option(&v);
    let out_of_range = json!({"question_id": qid, "response": 99}).to_string();
    let (s, _, _) = c.call("POST", &resp_uri, Some(&tok), Some(out_of_range)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    // Stale question id leaves state unchanged.
    let (s, e, _) = c
        .call("POST", &resp_uri, Some(&tok), Some(json!({"question_id": "tie#9", "response": 0}).to_string()))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(e["error"]["kind"], "stale_question");
    let (_, again, _) = c.call("GET", &next_uri, Some(&tok), None).await;
    assert_eq!(again, v);

    // A valid answer, then the same answer again.
    let body = json!({"question_id": qid, "response": opt, "elapsed_ms": 1200}).to_string();
    let (s, after, _) = c.call("POST", &resp_uri, Some(&tok), Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK);
    assert_ne!(after, v);
    let (_, before_dup, _) = c.call("GET", &next_uri, Some(&tok), None).await;
    let (s, e, _) = c.call("POST", &resp_uri, Some(&tok), Some(body)).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert_eq!(e["error"]["kind"], "duplicate_response");
    let (_, after_dup, _) = c.call("GET", &next_uri, Some(&tok), None).await;
    assert_eq!(before_dup, after_dup);

    let utt = q["utterance_id"].as_str().unwrap();
    let (s, post, _) = c.call("GET", &format!("/api/v1/utterances/{utt}/posterior"), None, None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(post["responses"], 1);
    let total: f64 = post["posterior"].as_array().unwrap().iter().map(|p| p["weight"].as_f64().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-9);
    let (s, _, _) = c.call("GET", "/api/v1/utterances/missing/posterior", None, None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // Answer until done; a response after that is a conflict.
    let mut cur = after_dup;
    let mut guard = 0;
    while cur["status"] == "question" {
        let (qid, opt) = first_option(&cur);
        let (s, next, _) = c
            .call("POST", &resp_uri, Some(&tok), Some(json!({"question_id": qid, "response": opt}).to_string()))
            .await;
        assert_eq!(s, StatusCode::OK);
        cur = next;
        guard += 1;
        assert!(guard < 20);
    }
    assert_eq!(cur["progress"]["completed"], cur["progress"]["total"]);
    let (s, _, _) = c
        .call("POST", &resp_uri, Some(&tok), Some(json!({"question_id": qid, "response": 0}).to_string()))
        .await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn late_answers_count_and_timeouts_skip() {
    let c = Client::new();
    let (sid, tok) = c.create("slow").await;
    let (_, v, _) = c.call("GET", &format!("/api/v1/sessions/{sid}/next"), Some(&tok), None).await;
    let utt = v["question"]["utterance_id"].as_str().unwrap().to_string();
    let (qid, opt) = first_option(&v);
    let late = json!({"question_id": qid, "response": opt, "elapsed_ms": 10 * 60 * 1000}).to_string();
    let (s, _, _) = c.call("POST", &format!("/api/v1/sessions/{sid}/responses"), Some(&tok), Some(late)).await;
    assert_eq!(s, StatusCode::OK);
    let (_, post, _) = c.call("GET", &format!("/api/v1/utterances/{utt}/posterior"), None, None).await;
    assert_eq!(post["responses"], 1);

    let (sid2, tok2) = c.create("absent").await;
    let (_, v2, _) = c.call("GET", &format!("/api/v1/sessions/{sid2}/next"), Some(&tok2), None).await;
    let utt2 = v2["question"]["utterance_id"].as_str().unwrap().to_string();
    let (_, before, _) = c.call("GET", &format!("/api/v1/utterances/{utt2}/posterior"), None, None).await;
    let qid2 = v2["question"]["question_id"].as_str().unwrap();
    let body = json!({"question_id": qid2, "response": "timeout"}).to_string();
    let (s, next, _) = c.call("POST", &format!("/api/v1/sessions/{sid2}/responses"), Some(&tok2), Some(body)).await;
    assert_eq!(s, StatusCode::OK);
    if next["status"] == "question" {
        assert_ne!(next["question"]["utterance_id"], utt2.as_str());
    }
    let (_, after, _) = c.call("GET", &format!("/api/v1/utterances/{utt2}/posterior"), None, None).await;
    assert_eq!(before, after);
}

#[tokio::test]
async fn export_is_stable_and_starts_at_prior_top1() {
    let c = Client::new();
    let (s, _, first) = c.call("GET", "/api/v1/export/annotations", None, None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, _, second) = c.call("GET", "/api/v1/export/annotations", None, None).await;
    assert_eq!(first, second);
    let (corpus, store) = common::special();
    let lines: Vec<Value> = first.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), corpus.utterances.len());
    for (line, u) in lines.iter().zip(&corpus.utterances) {
        assert_eq!(line["utterance_id"], u.id.as_str());
        let pool = &store.pools[&u.id].pool;
        let top = pool
            .clusters
            .iter()
            .fold(None::<&oselect_core::candidates::CandidateCluster>, |best, c| match best {
                Some(b) if b.weight >= c.weight => Some(b),
                _ => Some(c),
            })
            .unwrap();
        assert_eq!(line["map_sql"], top.representative_sql.as_str());
    }
}

#[tokio::test]
async fn unknown_unit_is_rejected() {
    let c = Client::new();
    let body = json!({"annotator_id": "x", "unit_id": "unit-77"}).to_string();
    let (s, v, _) = c.call("POST", "/api/v1/sessions", None, Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["kind"], "unknown_unit");
    let (s, _, _) = c
        .call("POST", "/api/v1/sessions", None, Some(json!({"annotator_id": ""}).to_string()))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
}
