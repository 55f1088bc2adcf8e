use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use promptnav_core::bayes::CoefficientStore;
use promptnav_core::sentiment::{LikelihoodAssignment, SentimentError, SentimentProvider};
use promptnav_service::{router, AppState, Providers};
use serde_json::{json, Value};
use tower::ServiceExt;

const SCENE: &str = include_str!("../../core/tests/fixtures/acceptance_scene.json");
const DANGEROUS: &str = "The environment is incredibly dangerous";

struct Failing {
    nan: bool,
}

impl SentimentProvider for Failing {
    fn tag(&self) -> &str {
        "failing"
    }
    fn assess(&self, _: &str, families: &[String], _: &CoefficientStore) -> Result<LikelihoodAssignment, SentimentError> {
        if self.nan {
            let likelihoods = families.iter().map(|f| (f.clone(), f64::NAN)).collect();
            return Ok(LikelihoodAssignment { likelihoods, provider: "failing".into(), raw_reply: String::new() });
        }
        Err(SentimentError::MalformedReply { reason: "no JSON object".into(), raw: "I'd rather not.".into() })
    }
    fn initial_priors(&self, _: &[String]) -> Result<BTreeMap<String, f64>, SentimentError> {
        Err(SentimentError::Transport { attempts: 3, message: "connection refused".into() })
    }
}

fn providers() -> Providers {
    let mut p = Providers::lexicon();
    p.insert("failing", Arc::new(Failing { nan: false }));
    p.insert("nan", Arc::new(Failing { nan: true }));
    p
}

fn app() -> Router {
    router(AppState::new(providers()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let body = body.map_or_else(Body::empty, |b| Body::from(b.to_string()));
    call_raw(app, method, uri, body).await
}

async fn call_raw(app: &Router, method: &str, uri: &str, body: Body) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json").body(body).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, scene: &str) -> String {
    let (status, v) = call_raw(app, "POST", "/v1/scenes", Body::from(scene.to_string())).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["session"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn health_and_unknown_routes() {
    let app = app();
    assert_eq!(call(&app, "GET", "/v1/healthz", None).await, (StatusCode::OK, json!({"status": "ok"})));
    let (status, v) = call(&app, "GET", "/v2/scenes", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].is_string());
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = app();
    for (method, uri) in [
        ("GET", "/v1/scenes/nope"),
        ("POST", "/v1/scenes/nope/plan"),
        ("GET", "/v1/scenes/nope/field"),
        ("GET", "/v1/scenes/nope/coefficients"),
        ("POST", "/v1/scenes/nope/reset"),
    ] {
        let (status, v) = call(&app, method, uri, None).await;
        assert_eq!(status, StatusCode::NOT_FOUND, "{method} {uri}");
        assert!(v["error"].as_str().unwrap().contains("nope"));
    }
    let (status, _) = call(&app, "POST", "/v1/scenes/nope/prompts", Some(json!({"text": "hi"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn scene_document_is_described() {
    let app = app();
    let id = create(&app, SCENE).await;
    let (status, v) = call(&app, "GET", &format!("/v1/scenes/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["session"], json!(id));
    assert_eq!(v["grid"]["cols"], json!(60));
    assert_eq!(v["grid"]["rows"], json!(40));
    assert!(!v["grid"]["blocked"].as_array().unwrap().is_empty());
    assert_eq!(v["posteriors"]["Grinder"], json!(0.8));
}

#[tokio::test]
async fn bad_documents_are_400() {
    let app = app();
    let (status, v) = call_raw(&app, "POST", "/v1/scenes", Body::from("{not json")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].is_string());
    let outside = SCENE.replace("[5.5, 2.0]", "[9.5, 2.0]");
    assert_ne!(outside, SCENE);
    assert_eq!(call_raw(&app, "POST", "/v1/scenes", Body::from(outside)).await.0, StatusCode::BAD_REQUEST);

    let id = create(&app, SCENE).await;
    let prompts = format!("/v1/scenes/{id}/prompts");
    assert_eq!(call(&app, "POST", &prompts, Some(json!({"text": "  "}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", &prompts, Some(json!({"txt": "x"}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", &prompts, Some(json!({"text": "x", "provider": "oracle"}))).await.0, StatusCode::BAD_REQUEST);
    let plan = format!("/v1/scenes/{id}/plan");
    assert_eq!(call(&app, "POST", &plan, Some(json!({"strategy": "greedy"}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&app, "POST", &plan, Some(json!({"params": {"w1": 0.5}}))).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn prompt_raises_danger_and_bumps_the_field() {
    let app = app();
    let id = create(&app, SCENE).await;
    let (_, field0) = call(&app, "GET", &format!("/v1/scenes/{id}/field"), None).await;
    let (status, out) = call(&app, "POST", &format!("/v1/scenes/{id}/prompts"), Some(json!({"text": DANGEROUS}))).await;
    assert_eq!(status, StatusCode::OK, "{out}");
    for family in ["Grinder", "Chainsaw", "Robot"] {
        assert!(out["posteriors"][family].as_f64() > out["posteriors_before"][family].as_f64());
        assert!(out["likelihoods"][family].as_f64().unwrap() > 0.5);
    }
    assert_eq!(out["provider"], json!("lexicon"));
    let (_, field1) = call(&app, "GET", &format!("/v1/scenes/{id}/field"), None).await;
    assert_eq!(field1["field_version"].as_u64(), field0["field_version"].as_u64().map(|v| v + 1));
    assert_eq!(out["field_version"], field1["field_version"]);

    let (_, coef) = call(&app, "GET", &format!("/v1/scenes/{id}/coefficients"), None).await;
    assert_eq!(coef["families"]["Grinder"]["evidence"].as_array().unwrap().len(), 1);
    assert_eq!(coef["families"]["Grinder"]["posterior"], out["posteriors"]["Grinder"]);
}

#[tokio::test]
async fn planning_after_a_dangerous_prompt_keeps_more_distance() {
    let app = app();
    let id = create(&app, SCENE).await;
    let plan = format!("/v1/scenes/{id}/plan");
    let (status, base) = call(&app, "POST", &plan, Some(json!({"strategy": "baseline"}))).await;
    assert_eq!(status, StatusCode::OK, "{base}");
    assert_eq!(base["planner"], json!("astar"));
    call(&app, "POST", &format!("/v1/scenes/{id}/prompts"), Some(json!({"text": DANGEROUS}))).await;
    let body = json!({"strategy": "mha", "params": {"cost_mode": "cost_augmented"}});
    let (status, steered) = call(&app, "POST", &plan, Some(body)).await;
    assert_eq!(status, StatusCode::OK, "{steered}");
    assert_eq!(steered["planner"], json!("mha*"));
    assert!(steered["mdo_m"].as_f64().unwrap() > base["mdo_m"].as_f64().unwrap());
    assert!(steered["expansions"].as_u64().unwrap() > 0);
    assert_eq!(call(&app, "POST", &plan, None).await.0, StatusCode::OK);
}

#[tokio::test]
async fn unreachable_goal_is_409() {
    let app = app();
    let walled = json!({
        "grid": {"width_m": 3.0, "height_m": 1.0, "resolution_m": 0.1},
        "start": [0.5, 0.5], "goal": [2.5, 0.5],
        "obstacles": [{"id": "w", "family": "Wall", "footprint": [[1.4, 0.0], [1.6, 0.0], [1.6, 1.0], [1.4, 1.0]]}],
    });
    let id = create(&app, &walled.to_string()).await;
    let (status, v) = call(&app, "POST", &format!("/v1/scenes/{id}/plan"), None).await;
    assert_eq!(status, StatusCode::CONFLICT, "{v}");
}

#[tokio::test]
async fn provider_failure_is_502_and_leaves_state_alone() {
    let app = app();
    let id = create(&app, SCENE).await;
    call(&app, "POST", &format!("/v1/scenes/{id}/prompts"), Some(json!({"text": "careful near the grinder"}))).await;
    call(&app, "POST", &format!("/v1/scenes/{id}/plan"), None).await;
    let snapshot = |app: Router, id: String| async move {
        let scene = call(&app, "GET", &format!("/v1/scenes/{id}"), None).await.1;
        let field = call(&app, "GET", &format!("/v1/scenes/{id}/field"), None).await.1;
        let coef = call(&app, "GET", &format!("/v1/scenes/{id}/coefficients"), None).await.1;
        (scene, field, coef)
    };
    let before = snapshot(app.clone(), id.clone()).await;

    let (status, v) =
        call(&app, "POST", &format!("/v1/scenes/{id}/prompts"), Some(json!({"text": DANGEROUS, "provider": "failing"}))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);
    assert_eq!(v["raw"], json!("I'd rather not."));
    let (status, _) =
        call(&app, "POST", &format!("/v1/scenes/{id}/prompts"), Some(json!({"text": DANGEROUS, "provider": "nan"}))).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY);

    assert_eq!(snapshot(app.clone(), id.clone()).await, before);
}

#[tokio::test]
async fn failing_default_provider_cannot_seed_priors() {
    let app = router(AppState::new(providers().with_default("failing")));
    let (status, v) = call_raw(&app, "POST", "/v1/scenes", Body::from(SCENE.to_string())).await;
    // The fixture carries its own priors, so the provider is never asked.
    assert_eq!(status, StatusCode::CREATED, "{v}");
    let mut doc: Value = serde_json::from_str(SCENE).unwrap();
    doc.as_object_mut().unwrap().remove("priors");
    let (status, v) = call_raw(&app, "POST", "/v1/scenes", Body::from(doc.to_string())).await;
    assert_eq!(status, StatusCode::BAD_GATEWAY, "{v}");
}

#[tokio::test]
async fn reset_restores_priors() {
    let app = app();
    let id = create(&app, SCENE).await;
    let (_, before) = call(&app, "GET", &format!("/v1/scenes/{id}"), None).await;
    call(&app, "POST", &format!("/v1/scenes/{id}/prompts"), Some(json!({"text": DANGEROUS}))).await;
    let (status, v) = call(&app, "POST", &format!("/v1/scenes/{id}/reset"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["posteriors"], before["posteriors"]);
    let (_, coef) = call(&app, "GET", &format!("/v1/scenes/{id}/coefficients"), None).await;
    assert!(coef["families"]["Grinder"]["evidence"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn concurrent_prompts_are_serialized() {
    let app = app();
    let id = create(&app, SCENE).await;
    let tasks: Vec<_> = (0..8)
        .map(|_| {
            let (app, uri) = (app.clone(), format!("/v1/scenes/{id}/prompts"));
            tokio::spawn(async move { call(&app, "POST", &uri, Some(json!({"text": DANGEROUS}))).await.0 })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let (_, coef) = call(&app, "GET", &format!("/v1/scenes/{id}/coefficients"), None).await;
    assert_eq!(coef["families"]["Robot"]["evidence"].as_array().unwrap().len(), 8);
    let (_, field) = call(&app, "GET", &format!("/v1/scenes/{id}/field"), None).await;
    assert_eq!(field["field_version"], json!(9));
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::new(providers()).with_persistence(dir.path()).unwrap());
    let id = create(&app, SCENE).await;
    call(&app, "POST", &format!("/v1/scenes/{id}/prompts"), Some(json!({"text": DANGEROUS}))).await;
    call(&app, "POST", &format!("/v1/scenes/{id}/plan"), None).await;
    let (_, before) = call(&app, "GET", &format!("/v1/scenes/{id}"), None).await;
    let (_, field_before) = call(&app, "GET", &format!("/v1/scenes/{id}/field"), None).await;
    drop(app);

    let state = AppState::new(providers()).with_persistence(dir.path()).unwrap();
    assert_eq!(state.session_count(), 1);
    let app = router(state);
    let (status, after) = call(&app, "GET", &format!("/v1/scenes/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after, before);
    assert_eq!(call(&app, "GET", &format!("/v1/scenes/{id}/field"), None).await.1, field_before);
}
