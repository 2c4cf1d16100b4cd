//! HTTP+JSON service for interactive translation sessions.
//!
//! Endpoints (all bodies JSON, all responses carry `"v": 1`):
//!
//! | method | path | success |
//! |---|---|---|
//! | POST | `/v1/sessions` | 201 [`SessionView`] with `owner_token` |
//! | POST | `/v1/sessions/{id}/feedback` | 200 [`SessionView`] |
//! | POST | `/v1/sessions/{id}/accept` | 200 [`Accepted`] |
//! | GET | `/v1/sessions/{id}` | 200 [`SessionView`] with `log` |
//! | GET | `/v1/status` | 200 [`Status`] |
//!
//! Feedback and accept must carry the owner token in `X-Session-Token`.
//! Errors are `{"error", "detail"}` with status 400, 401, 403, 404, 409, 422,
//! 429 or 500.

pub mod api;
pub mod error;
pub mod state;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;

pub use api::*;
pub use error::ApiError;
pub use state::{AppState, ModelSlot, ServiceConfig};

pub const OWNER_HEADER: &str = "x-session-token";

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/feedback", post(post_feedback))
        .route("/v1/sessions/{id}/accept", post(post_accept))
        .route("/v1/status", get(get_status))
        .fallback(|| async { ApiError::NotFound("no such endpoint".into()) })
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(state: Shared, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Binds the configured address and serves on a fresh runtime.
pub fn run(state: AppState) -> std::io::Result<()> {
    let addr = state.config().addr;
    tokio::runtime::Runtime::new()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        serve(Arc::new(state), listener).await
    })
}

async fn auth(State(state): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config().token {
        let given = req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if given.and_then(|v| v.strip_prefix("Bearer ")) != Some(token.as_str()) {
            return ApiError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let value: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(format!("malformed JSON: {e}")))?;
    if let Some(v) = value.get("v") {
        if v.as_u64() != Some(u64::from(WIRE_VERSION)) {
            return Err(ApiError::BadRequest(format!("unsupported schema version {v}")));
        }
    }
    serde_json::from_value(value).map_err(|e| ApiError::BadRequest(e.to_string()))
}

fn session_id(raw: &str) -> Result<u64, ApiError> {
    raw.parse().map_err(|_| ApiError::BadRequest(format!("invalid session id {raw:?}")))
}

fn owner(headers: &HeaderMap) -> Option<String> {
    headers.get(OWNER_HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned)
}

/// Runs model work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(format!("worker failed: {e}")))?
}

async fn create_session(State(state): State<Shared>, body: Bytes) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let view = blocking(move || state.create_session(&req.source)).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn post_feedback(
    State(state): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<SessionView>, ApiError> {
    let id = session_id(&id)?;
    let req: Feedback = parse_body(&body)?;
    let owner = owner(&headers);
    Ok(Json(blocking(move || state.feedback(id, owner.as_deref(), &req)).await?))
}

async fn post_accept(
    State(state): State<Shared>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<Accepted>, ApiError> {
    let id = session_id(&id)?;
    let req: Accept = if body.iter().all(u8::is_ascii_whitespace) { Accept::default() } else { parse_body(&body)? };
    let owner = owner(&headers);
    Ok(Json(blocking(move || state.accept(id, owner.as_deref(), &req)).await?))
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let id = session_id(&id)?;
    Ok(Json(blocking(move || state.session(id)).await?))
}

async fn get_status(State(state): State<Shared>) -> Json<Status> {
    Json(state.status())
}
