//! HTTP API for the realism study. Every JSON payload carries a `v` field.
//!
//! | method | path                                         | body / result            |
//! |--------|----------------------------------------------|--------------------------|
//! | POST   | `/v1/sessions`                               | `{participant_id?}` → session |
//! | GET    | `/v1/sessions/{session}`                     | session                  |
//! | GET    | `/v1/sessions/{session}/current`             | item, or `{complete}`    |
//! | GET    | `/v1/sessions/{session}/items/{item}/image`  | image bytes              |
//! | POST   | `/v1/sessions/{session}/judgments`           | `{item_id, verdict}` → ack |
//! | GET    | `/v1/results`                                | per-method table (operator token) |

use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use chroma_core::study::{Study, StudyError, Verdict, PAYLOAD_VERSION};

/// Header carrying the operator token for `/v1/results`.
pub const OPERATOR_HEADER: &str = "x-operator-token";

pub struct AppState {
    pub study: Mutex<Study>,
    /// Results stay unavailable over HTTP unless a token is configured.
    pub operator_token: Option<String>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{session}", get(session))
        .route("/v1/sessions/{session}/current", get(current))
        .route("/v1/sessions/{session}/items/{item}/image", get(image))
        .route("/v1/sessions/{session}/judgments", post(judgment))
        .route("/v1/results", get(results))
        .with_state(state)
}

pub struct ApiError(StatusCode, &'static str, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"v": PAYLOAD_VERSION, "error": self.1, "message": self.2});
        (self.0, Json(body)).into_response()
    }
}

impl From<StudyError> for ApiError {
    fn from(e: StudyError) -> Self {
        let (status, kind) = match &e {
            StudyError::SessionNotFound(_) | StudyError::ImageNotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            StudyError::OutOfOrder { .. } | StudyError::Duplicate(_) | StudyError::Complete(_) => {
                (StatusCode::CONFLICT, "protocol")
            }
            StudyError::EmptyStore => (StatusCode::NOT_FOUND, "empty"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError(status, kind, e.to_string())
    }
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, Study> {
    state.study.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateSession {
    pub participant_id: Option<String>,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Option<Json<CreateSession>>,
) -> Result<impl IntoResponse, ApiError> {
    let req = body.map(|b| b.0).unwrap_or_default();
    let view = lock(&state).create_session(req.participant_id.as_deref())?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn session(State(state): State<Arc<AppState>>, Path(session): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(lock(&state).session_view(&session)?))
}

async fn current(State(state): State<Arc<AppState>>, Path(session): Path<String>) -> Result<Response, ApiError> {
    Ok(match lock(&state).current_item(&session)? {
        Some(item) => Json(item).into_response(),
        None => Json(json!({"v": PAYLOAD_VERSION, "session_id": session, "complete": true})).into_response(),
    })
}

async fn image(
    State(state): State<Arc<AppState>>,
    Path((session, item)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let path = lock(&state).item_path(&session, &item)?.to_path_buf();
    let bytes = std::fs::read(&path).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, "io", format!("item {item}: {e}")))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JudgmentRequest {
    pub item_id: String,
    pub verdict: Verdict,
}

async fn judgment(
    State(state): State<Arc<AppState>>,
    Path(session): Path<String>,
    Json(req): Json<JudgmentRequest>,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(lock(&state).record_judgment(&session, &req.item_id, req.verdict)?))
}

async fn results(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Result<impl IntoResponse, ApiError> {
    let Some(expected) = &state.operator_token else {
        return Err(ApiError(StatusCode::FORBIDDEN, "forbidden", "results are disabled on this server".into()));
    };
    let given = headers.get(OPERATOR_HEADER).and_then(|v| v.to_str().ok());
    if given != Some(expected.as_str()) {
        return Err(ApiError(StatusCode::FORBIDDEN, "forbidden", "operator token required".into()));
    }
    Ok(Json(lock(&state).results()?))
}
