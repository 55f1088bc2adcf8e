//! HTTP session service for interactive steering.
//!
//! Every route lives under `/v1`. A session owns a scene, its coefficient
//! store, the current potential field and a path history. Requests to one
//! session are serialized; different sessions proceed independently.

use std::collections::hash_map::RandomState;
use std::collections::{BTreeMap, HashMap};
use std::hash::{BuildHasher, Hasher};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use promptnav_core::planner::{PlanError, PlannerParams};
use promptnav_core::scene::parse_scene;
use promptnav_core::sentiment::{ProviderConfig, ProviderKind, SentimentError, SentimentProvider};
use promptnav_core::session::{scene_priors, FieldSettings, Session, SessionSnapshot, Strategy};
use promptnav_core::Error as CoreError;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Mutex as AsyncMutex;

/// Named sentiment providers a request may pick from.
#[derive(Clone)]
pub struct Providers {
    by_name: BTreeMap<String, Arc<dyn SentimentProvider>>,
    default: String,
}

impl Providers {
    /// Only the deterministic lexicon provider.
    pub fn lexicon() -> Self {
        let lexicon = ProviderConfig::lexicon().build().expect("lexicon provider builds");
        Providers { by_name: BTreeMap::from([("lexicon".into(), Arc::from(lexicon))]), default: "lexicon".into() }
    }

    /// Lexicon plus, when `PROMPTNAV_LLM_URL` is set, the remote provider.
    pub fn from_env(default: ProviderKind) -> Result<Self, SentimentError> {
        let mut providers = Providers::lexicon();
        let remote = ProviderConfig::from_env(ProviderKind::Remote)?;
        if remote.endpoint.is_some() {
            providers.insert("remote", Arc::from(remote.build()?));
        } else if default == ProviderKind::Remote {
            remote.validate()?;
        }
        providers.default = match default {
            ProviderKind::Lexicon => "lexicon".into(),
            ProviderKind::Remote => "remote".into(),
        };
        Ok(providers)
    }

    pub fn insert(&mut self, name: &str, provider: Arc<dyn SentimentProvider>) {
        self.by_name.insert(name.to_string(), provider);
    }

    pub fn with_default(mut self, name: &str) -> Self {
        self.default = name.to_string();
        self
    }

    fn get(&self, name: Option<&str>) -> Result<Arc<dyn SentimentProvider>, ApiError> {
        let name = name.unwrap_or(&self.default);
        self.by_name
            .get(name)
            .cloned()
            .ok_or_else(|| ApiError::bad_request(format!("provider `{name}` is not configured")))
    }
}

type Entry = Arc<AsyncMutex<Session>>;

#[derive(Clone)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<String, Entry>>>,
    providers: Providers,
    settings: FieldSettings,
    persist: Option<PathBuf>,
    ids: Arc<AtomicU64>,
    seed: RandomState,
}

impl AppState {
    pub fn new(providers: Providers) -> Self {
        AppState {
            sessions: Arc::default(),
            providers,
            settings: FieldSettings::default(),
            persist: None,
            ids: Arc::default(),
            seed: RandomState::new(),
        }
    }

    /// Snapshots go to `dir/<session>.json`; existing ones are loaded now.
    pub fn with_persistence(mut self, dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut sessions = self.sessions.lock().unwrap();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                let text = std::fs::read_to_string(&path)?;
                let snapshot: SessionSnapshot = serde_json::from_str(&text)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
                let session = Session::restore(&snapshot)
                    .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))?;
                sessions.insert(session.id.clone(), Arc::new(AsyncMutex::new(session)));
            }
        }
        drop(sessions);
        self.persist = Some(dir.to_path_buf());
        Ok(self)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    fn entry(&self, id: &str) -> Result<Entry, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`")))
    }

    fn fresh_id(&self) -> String {
        let mut h = self.seed.build_hasher();
        h.write_u64(self.ids.fetch_add(1, Ordering::Relaxed));
        h.write_u128(SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default().as_nanos());
        format!("{:016x}", h.finish())
    }

    fn persist(&self, session: &Session) -> Result<(), ApiError> {
        let Some(dir) = &self.persist else { return Ok(()) };
        let text = serde_json::to_string_pretty(&session.snapshot()).expect("snapshot serializes");
        let tmp = dir.join(format!(".{}.json.tmp", session.id));
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, dir.join(format!("{}.json", session.id))))
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("persisting session: {e}")))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    raw: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into(), raw: None }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, message)
    }

    /// Status for a core error. Provider trouble is 502 with the raw reply;
    /// bad likelihoods from a provider count as provider trouble too.
    fn from_core(e: CoreError, provider_call: bool) -> Self {
        let status = match &e {
            CoreError::Sentiment(SentimentError::NoFamilies | SentimentError::Config(_)) => StatusCode::BAD_REQUEST,
            CoreError::Sentiment(_) => StatusCode::BAD_GATEWAY,
            CoreError::Bayes(_) if provider_call => StatusCode::BAD_GATEWAY,
            CoreError::Plan(PlanError::NoPath) => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        let raw = match &e {
            CoreError::Sentiment(s) => s.raw_reply().map(str::to_string),
            _ => None,
        };
        ApiError { status, message: e.to_string(), raw }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(raw) = self.raw {
            body["raw"] = Value::String(raw);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Runs blocking work off the async runtime.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_scene(State(state): State<AppState>, body: Bytes) -> ApiResult {
    let text = std::str::from_utf8(&body).map_err(|_| ApiError::bad_request("body is not UTF-8"))?.to_string();
    let spec = parse_scene(&text).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let provider = state.providers.get(None)?;
    let id = state.fresh_id();
    let settings = state.settings;
    let session = blocking(move || {
        let priors = scene_priors(&spec, provider.as_ref()).map_err(|e| ApiError::from_core(e, spec.priors.is_none()))?;
        Session::new(id, spec, priors, settings).map_err(|e| ApiError::from_core(e, false))
    })
    .await??;
    state.persist(&session)?;
    let id = session.id.clone();
    state.sessions.lock().unwrap().insert(id.clone(), Arc::new(AsyncMutex::new(session)));
    Ok((StatusCode::CREATED, Json(json!({ "session": id }))).into_response())
}

fn describe(session: &Session) -> Value {
    let mut v = serde_json::to_value(session.snapshot()).expect("snapshot serializes");
    v["session"] = Value::String(session.id.clone());
    v["grid"] = json!({
        "cols": session.grid().cols,
        "rows": session.grid().rows,
        "resolution_m": session.grid().resolution,
        "blocked": session.grid().blocked_cells().collect::<Vec<_>>(),
    });
    v["posteriors"] = json!(session.store().posteriors());
    v
}

async fn get_scene(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = state.entry(&id)?;
    let session = entry.lock().await;
    Ok(Json(describe(&session)).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptBody {
    text: String,
    #[serde(default)]
    provider: Option<String>,
}

async fn post_prompt(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    let entry = state.entry(&id)?;
    let body: PromptBody = parse_body(&body)?;
    if body.text.trim().is_empty() {
        return Err(ApiError::bad_request("prompt text is empty"));
    }
    let provider = state.providers.get(body.provider.as_deref())?;
    let mut guard = entry.lock_owned().await;
    let staged = guard.clone();
    let (staged, outcome) = blocking(move || {
        let mut staged = staged;
        let outcome = staged.apply_prompt(&body.text, provider.as_ref(), now());
        (staged, outcome)
    })
    .await?;
    let outcome = outcome.map_err(|e| ApiError::from_core(e, true))?;
    state.persist(&staged)?;
    *guard = staged;
    Ok(Json(outcome).into_response())
}

async fn get_field(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = state.entry(&id)?;
    let session = entry.lock().await;
    let mut v = serde_json::to_value(session.field()).expect("field serializes");
    v["field_version"] = json!(session.field_version());
    Ok(Json(v).into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PlanBody {
    #[serde(default)]
    strategy: Strategy,
    #[serde(default)]
    params: PlannerParams,
}

async fn post_plan(State(state): State<AppState>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult {
    let entry = state.entry(&id)?;
    let body: PlanBody = if body.iter().all(u8::is_ascii_whitespace) { PlanBody::default() } else { parse_body(&body)? };
    let mut guard = entry.lock_owned().await;
    let staged = guard.clone();
    let (staged, outcome) = blocking(move || {
        let mut staged = staged;
        let outcome = staged.plan(body.strategy, &body.params);
        (staged, outcome)
    })
    .await?;
    let outcome = outcome.map_err(|e| ApiError::from_core(e, false))?;
    state.persist(&staged)?;
    *guard = staged;
    Ok(Json(outcome).into_response())
}

async fn get_coefficients(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = state.entry(&id)?;
    let session = entry.lock().await;
    let v: Value = serde_json::from_str(&session.store().to_json()).expect("store is JSON");
    Ok(Json(v).into_response())
}

async fn post_reset(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let entry = state.entry(&id)?;
    let mut guard = entry.lock().await;
    let mut staged = guard.clone();
    staged.reset().map_err(|e| ApiError::from_core(e, false))?;
    state.persist(&staged)?;
    *guard = staged;
    Ok(Json(json!({ "field_version": guard.field_version(), "posteriors": guard.store().posteriors() })).into_response())
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route")
}

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/healthz", get(healthz))
        .route("/scenes", post(create_scene))
        .route("/scenes/{id}", get(get_scene))
        .route("/scenes/{id}/prompts", post(post_prompt))
        .route("/scenes/{id}/field", get(get_field))
        .route("/scenes/{id}/plan", post(post_plan))
        .route("/scenes/{id}/coefficients", get(get_coefficients))
        .route("/scenes/{id}/reset", post(post_reset));
    Router::new().nest("/v1", v1).fallback(fallback).with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: &str, state: AppState) -> io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}/v1", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
