//! HTTP JSON API over a [`CalibrationSession`].
//!
//! Reads share the session lock; every decision goes through the same lock,
//! so the log and the in-memory manifest change together.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::calibration::{CalibrationDecision, CalibrationSession, Progress, QueueFilter, QueueItem};
use crate::error::Error;
use crate::imaging::{encode_lossless_with, load_image, LosslessCodec};

pub const DEFAULT_QUEUE_LIMIT: usize = 50;

pub type SharedSession = Arc<Mutex<CalibrationSession>>;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownImage(_) => StatusCode::NOT_FOUND,
            Error::ImageNotActive(_) => StatusCode::CONFLICT,
            Error::UnknownCategory(_) | Error::InvalidInput(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn lock(s: &SharedSession) -> MutexGuard<'_, CalibrationSession> {
    s.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

#[derive(Debug, Deserialize)]
pub struct QueueParams {
    pub limit: Option<usize>,
    pub category_id: Option<u32>,
}

async fn queue(State(s): State<SharedSession>, Query(p): Query<QueueParams>) -> Json<Vec<QueueItem>> {
    let filter = QueueFilter {
        category_id: p.category_id,
        limit: Some(p.limit.unwrap_or(DEFAULT_QUEUE_LIMIT)),
    };
    Json(lock(&s).state().queue(filter))
}

/// Served as PNG so browsers can show formatted copies of any encoding.
async fn image(State(s): State<SharedSession>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let path = {
        let guard = lock(&s);
        let rec = guard.state().manifest().record(&id).ok_or(Error::UnknownImage(id.clone()))?;
        rec.pixel_path().to_path_buf()
    };
    let png = tokio::task::spawn_blocking(move || encode_lossless_with(&load_image(&path)?, LosslessCodec::Png))
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryView {
    pub id: u32,
    pub name: String,
    pub group: String,
    pub synonyms: Vec<String>,
    pub active_count: u64,
}

async fn categories(State(s): State<SharedSession>) -> Json<Vec<CategoryView>> {
    let guard = lock(&s);
    let counts = guard.category_counts();
    Json(
        guard
            .state()
            .manifest()
            .categories
            .iter()
            .map(|c| CategoryView {
                id: c.id,
                name: c.name.clone(),
                group: c.group.clone(),
                synonyms: c.synonyms.clone(),
                active_count: counts.get(&c.id).copied().unwrap_or(0),
            })
            .collect(),
    )
}

async fn progress(State(s): State<SharedSession>) -> Json<Progress> {
    Json(lock(&s).state().progress())
}

async fn decision(
    State(s): State<SharedSession>,
    Json(mut d): Json<CalibrationDecision>,
) -> Result<Json<Progress>, ApiError> {
    if d.timestamp == 0 {
        d.timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |t| t.as_secs());
    }
    let mut guard = lock(&s);
    guard.decide(d)?;
    Ok(Json(guard.state().progress()))
}

pub fn router(session: SharedSession) -> Router {
    Router::new()
        .route("/api/queue", get(queue))
        .route("/api/image/{id}", get(image))
        .route("/api/categories", get(categories))
        .route("/api/progress", get(progress))
        .route("/api/decision", post(decision))
        .with_state(session)
}

/// Serves until ctrl-c.
pub async fn serve(session: SharedSession, addr: SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(addr.to_string(), e))?;
    let local = listener.local_addr().map_err(|e| Error::io(addr.to_string(), e))?;
    eprintln!("calibration server on http://{local}");
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(local.to_string(), e))
}
