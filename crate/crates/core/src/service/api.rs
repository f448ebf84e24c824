use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::Rng;
use serde::Deserialize;
use serde_json::json;

use super::{aggregate, create_session, Choice, SessionConfig, SessionStore, TrialPool, TrialView};
use crate::error::Error;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    pub pool: Arc<TrialPool>,
    pub config: SessionConfig,
    /// Built evaluation app, served for every non-API path.
    pub static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(store: SessionStore, pool: TrialPool, config: SessionConfig) -> Self {
        Self { store: Arc::new(store), pool: Arc::new(pool), config, static_dir: None }
    }
}

struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        Self(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> HttpResponse {
        let status = match &self.0 {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::Conflict(_) => StatusCode::CONFLICT,
            Error::Validation(_) | Error::Parse(_) | Error::Json(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Setup(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de> + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| Error::Validation(format!("malformed body: {e}")).into())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    #[serde(default)]
    participant: serde_json::Map<String, serde_json::Value>,
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseBody {
    trial: usize,
    choice: Choice,
    confidence: i64,
}

async fn create(State(s): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateBody = parse_body(&body)?;
    let seed = req.seed.unwrap_or_else(|| rand::rng().random());
    let session = create_session(&s.config, &s.pool, seed, req.participant)?;
    let out = json!({ "session_id": session.id, "n_trials": session.trials.len() });
    s.store.insert(session)?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn trial(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    let session = s.store.snapshot(&id)?;
    Ok(match session.next_trial() {
        Some(t) => Json(json!({ "complete": false, "trial": TrialView::new(&session, t)? })),
        None => Json(json!({ "complete": true, "n_trials": session.trials.len() })),
    })
}

async fn respond(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    // check existence first so an unknown session is a 404 whatever the body
    s.store.get(&id)?;
    if body.iter().all(u8::is_ascii_whitespace) {
        return Err(Error::Validation("empty body".into()).into());
    }
    let req: ResponseBody =
        serde_json::from_slice(&body).map_err(|e| Error::Validation(format!("malformed body: {e}")))?;
    let r = s.store.respond(&id, req.trial, req.choice, req.confidence)?;
    let summary = s.store.snapshot(&id)?.summary();
    Ok((
        StatusCode::CREATED,
        Json(json!({ "trial": req.trial, "recorded": r.timestamp, "answered": summary.answered, "complete": summary.complete })),
    ))
}

async fn session_results(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(s.store.snapshot(&id)?.summary()))
}

async fn results(State(s): State<AppState>) -> impl IntoResponse {
    Json(aggregate(&s.config.model_x, &s.store.summaries()))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        _ => "application/octet-stream",
    }
}

async fn assets(State(s): State<AppState>, uri: Uri) -> HttpResponse {
    let not_found = || (StatusCode::NOT_FOUND, Json(json!({ "error": format!("no route for {}", uri.path()) }))).into_response();
    let Some(root) = &s.static_dir else { return not_found() };
    if uri.path().starts_with("/api/") {
        return not_found();
    }
    let rel = Path::new(uri.path().trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return not_found();
    }
    let mut path = root.join(rel);
    if !path.is_file() {
        // client-side routes fall back to the app shell
        path = root.join("index.html");
    }
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => not_found(),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/sessions", post(create))
        .route("/api/v1/sessions/{id}/trial", get(trial))
        .route("/api/v1/sessions/{id}/responses", post(respond))
        .route("/api/v1/sessions/{id}/results", get(session_results))
        .route("/api/v1/results", get(results))
        .fallback(assets)
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: AppState) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving evaluation API");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
