//! HTTP query service over an immutable, atomically replaceable model
//! snapshot.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use revdict_core::{Error, ReverseDictionary};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

fn default_top_n() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub definition: String,
    pub definition_language: String,
    pub target_language: String,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub surface: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResponse {
    pub candidates: Vec<Candidate>,
    pub model_id: String,
    pub timing_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_id: String,
    pub languages: Vec<String>,
    pub mode: String,
    /// Supported `definition-target` pairs.
    pub pairs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            code,
            message: message.into(),
        }
    }

    fn internal(code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            code,
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownLanguage(_) => ApiError::bad_request("unknown_language", e.to_string()),
            Error::UnsupportedPair { .. } => ApiError::bad_request("unsupported_pair", e.to_string()),
            other => ApiError::internal("internal", other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

/// Shared service state. Handlers clone the current snapshot `Arc` and never
/// hold the lock while working.
pub struct AppState {
    model: RwLock<Arc<ReverseDictionary>>,
    model_dir: PathBuf,
}

impl AppState {
    pub fn new(model: ReverseDictionary, model_dir: impl Into<PathBuf>) -> Self {
        AppState {
            model: RwLock::new(Arc::new(model)),
            model_dir: model_dir.into(),
        }
    }

    pub fn load(model_dir: impl Into<PathBuf>) -> revdict_core::Result<Self> {
        let dir = model_dir.into();
        let model = ReverseDictionary::load(&dir)?;
        Ok(Self::new(model, dir))
    }

    pub fn snapshot(&self) -> Arc<ReverseDictionary> {
        Arc::clone(&self.model.read().unwrap_or_else(|p| p.into_inner()))
    }

    fn swap(&self, model: ReverseDictionary) {
        *self.model.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(model);
    }
}

/// Origins allowed to call the API from a browser. `*` allows any.
#[derive(Debug, Clone, Default)]
pub struct CorsConfig {
    pub origins: Vec<String>,
}

fn cors_layer(cfg: &CorsConfig) -> Option<CorsLayer> {
    if cfg.origins.is_empty() {
        return None;
    }
    let base = CorsLayer::new().allow_methods(Any).allow_headers(Any);
    if cfg.origins.iter().any(|o| o == "*") {
        return Some(base.allow_origin(Any));
    }
    let origins: Vec<HeaderValue> = cfg.origins.iter().filter_map(|o| o.parse().ok()).collect();
    Some(base.allow_origin(AllowOrigin::list(origins)))
}

pub fn router(state: Arc<AppState>, cors: &CorsConfig) -> Router {
    let app = Router::new()
        .route("/v1/reverse", post(reverse))
        .route("/v1/health", get(health))
        .route("/v1/admin/reload", post(reload))
        .with_state(state);
    match cors_layer(cors) {
        Some(layer) => app.layer(layer),
        None => app,
    }
}

/// Ranks the top `top_n` candidates exactly as the model's own query does.
pub fn answer(
    model: &ReverseDictionary,
    definition: &str,
    definition_language: &str,
    target_language: &str,
    top_n: usize,
) -> revdict_core::Result<QueryResponse> {
    let start = Instant::now();
    let ranking = model.query(definition, definition_language, target_language, Some(top_n))?;
    Ok(QueryResponse {
        candidates: ranking
            .items
            .into_iter()
            .map(|w| Candidate {
                surface: w.surface,
                score: w.score,
                rank: w.rank,
            })
            .collect(),
        model_id: model.model_id().to_string(),
        timing_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

async fn reverse(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<QueryResponse>, ApiError> {
    let req: QueryRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request("malformed_json", e.to_string()))?;
    if req.top_n == 0 {
        return Err(ApiError::bad_request("invalid_request", "top_n must be at least 1"));
    }
    let model = state.snapshot();
    let response = tokio::task::spawn_blocking(move || {
        answer(&model, &req.definition, &req.definition_language, &req.target_language, req.top_n)
    })
    .await
    .map_err(|e| ApiError::internal("internal", e.to_string()))??;
    Ok(Json(response))
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let model = state.snapshot();
    Json(Health {
        status: "ok".into(),
        model_id: model.model_id().to_string(),
        languages: model.languages().to_vec(),
        mode: serde_json::to_value(model.mode())
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        pairs: model
            .supported_pairs()
            .into_iter()
            .map(|(d, t)| format!("{d}-{t}"))
            .collect(),
    })
}

/// Loads the model directory afresh and swaps it in. On failure the current
/// snapshot stays in place.
async fn reload(State(state): State<Arc<AppState>>) -> Result<Json<Health>, ApiError> {
    let dir = state.model_dir.clone();
    let model = tokio::task::spawn_blocking(move || ReverseDictionary::load(&dir))
        .await
        .map_err(|e| ApiError::internal("internal", e.to_string()))?
        .map_err(|e| ApiError::internal("reload_failed", e.to_string()))?;
    log::info!("reloaded model {}", model.model_id());
    state.swap(model);
    Ok(health(State(state)).await)
}
