//! HTTP routes over [`MoodService`].

use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path, Request, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use moodloop_core::library::TrackId;
use moodloop_core::time::Timestamp;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;
use tower::ServiceExt;
use tower_http::services::{ServeDir, ServeFile};

use crate::service::{Command, ControlRequest, MoodService, ServiceError, StateSnapshot};

/// Frames are base64 images; leave room for a full-resolution JPEG.
const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameBody {
    pub image_b64: String,
    pub captured_at_ms: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self(e)
    }
}

impl ApiError {
    pub fn status_and_code(&self) -> (StatusCode, &'static str) {
        use moodloop_core::frame::FrameError as F;
        use moodloop_core::player::PlayerError as P;
        match &self.0 {
            ServiceError::UnknownSession(_) => (StatusCode::NOT_FOUND, "UnknownSession"),
            ServiceError::InvalidSessionId => (StatusCode::BAD_REQUEST, "InvalidSessionId"),
            ServiceError::Frame(e) => {
                let code = match e {
                    F::EmptyPayload => "EmptyPayload",
                    F::InvalidEncoding(_) => "InvalidEncoding",
                    F::UnsupportedImageFormat(_) => "UnsupportedImageFormat",
                    F::DetectorUnavailable(_) => "DetectorUnavailable",
                    F::RegionOutOfBounds { .. } => "RegionOutOfBounds",
                    F::BackendFailure(_) => "BackendFailure",
                    F::NormalizationFailure => "NormalizationFailure",
                };
                let status = if e.is_client_error() { StatusCode::BAD_REQUEST } else { StatusCode::SERVICE_UNAVAILABLE };
                (status, code)
            }
            ServiceError::FrameTooSoon { .. } => (StatusCode::TOO_MANY_REQUESTS, "FrameTooSoon"),
            ServiceError::StaleFrame { .. } => (StatusCode::CONFLICT, "StaleFrame"),
            ServiceError::Player(P::UnknownMood(_)) => (StatusCode::NOT_FOUND, "UnknownMood"),
            ServiceError::Player(P::UnknownTrack(_)) | ServiceError::UnknownTrack(_) => {
                (StatusCode::NOT_FOUND, "UnknownTrack")
            }
            ServiceError::FileVanished(_) => (StatusCode::GONE, "FileVanished"),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "BadRequest"),
            ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        let body = ErrorBody { error: code.to_owned(), message: self.0.to_string() };
        let mut response = (status, Json(body)).into_response();
        if let ServiceError::FrameTooSoon { retry_ms, .. } = self.0 {
            let secs = retry_ms.div_ceil(1000).max(1);
            response.headers_mut().insert("retry-after", secs.into());
        }
        response
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(ServiceError::BadRequest(format!("bad JSON body: {e}"))))
}

pub fn router(service: Arc<MoodService>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/frames", post(submit_frame))
        .route("/api/sessions/{id}/state", get(get_state))
        .route("/api/sessions/{id}/control", post(control))
        .route("/api/sessions/{id}/events", get(events))
        .route("/api/playlists", get(playlists))
        .route("/api/audio/{track_id}", get(audio))
        .route("/api/metrics", get(metrics))
        .route("/api/config", get(client_config))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn create_session(State(svc): State<Arc<MoodService>>) -> impl IntoResponse {
    (StatusCode::CREATED, Json(json!({ "session_id": svc.create_session() })))
}

async fn submit_frame(
    State(svc): State<Arc<MoodService>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<StateSnapshot>> {
    let frame: FrameBody = parse_json(&body)?;
    drop(body);
    let snapshot = svc.submit_frame(&id, frame.image_b64, frame.captured_at_ms.map(Timestamp)).await?;
    Ok(Json(snapshot))
}

async fn get_state(State(svc): State<Arc<MoodService>>, Path(id): Path<String>) -> ApiResult<Json<StateSnapshot>> {
    Ok(Json(svc.get_state(&id).await?))
}

async fn control(State(svc): State<Arc<MoodService>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<StateSnapshot>> {
    let request: ControlRequest = parse_json(&body)?;
    let command = Command::try_from(request)?;
    Ok(Json(svc.control(&id, command).await?))
}

async fn playlists(State(svc): State<Arc<MoodService>>) -> impl IntoResponse {
    Json(json!({ "playlists": svc.playlists() }))
}

async fn metrics(State(svc): State<Arc<MoodService>>) -> impl IntoResponse {
    Json(json!({ "stages": svc.metrics().summaries() }))
}

async fn client_config(State(svc): State<Arc<MoodService>>) -> impl IntoResponse {
    let s = svc.settings();
    let moods: Vec<_> = svc
        .moods()
        .moods()
        .map(|m| json!({ "mood": m, "manual_only": svc.moods().is_manual_only(m) }))
        .collect();
    Json(json!({
        "capture_interval_ms": s.capture_interval_ms,
        "aggregation_strategy": s.strategy,
        "smoothing_capacity": s.smoothing_capacity,
        "override_lockout_s": s.override_lockout_s,
        "min_frame_spacing_ms": s.min_frame_spacing_ms,
        "moods": moods,
    }))
}

async fn audio(State(svc): State<Arc<MoodService>>, Path(track_id): Path<String>, request: Request) -> ApiResult<Response> {
    let path = svc.audio_path(&TrackId::new(track_id))?;
    let response = ServeFile::new(path)
        .oneshot(request)
        .await
        .unwrap_or_else(|never: Infallible| match never {});
    Ok(response.map(Body::new))
}

fn sse_event(snapshot: &StateSnapshot) -> Event {
    Event::default()
        .event("state")
        .id(snapshot.seq.to_string())
        .json_data(snapshot)
        .expect("snapshots serialize")
}

async fn events(
    State(svc): State<Arc<MoodService>>,
    Path(id): Path<String>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let (current, rx) = svc.subscribe(&id).await?;
    // Starts with the current state, then every later one. A lagging
    // subscriber gets the latest state instead of the ones it missed.
    let stream = stream::unfold((Some(current), rx, 0u64, svc, id), |(pending, mut rx, last_seq, svc, id)| async move {
        if let Some(snap) = pending {
            let seq = snap.seq;
            return Some((Ok(sse_event(&snap)), (None, rx, seq, svc, id)));
        }
        loop {
            let snap = match rx.recv().await {
                Ok(snap) => snap,
                Err(RecvError::Lagged(_)) => svc.get_state(&id).await.ok()?,
                Err(RecvError::Closed) => return None,
            };
            if snap.seq > last_seq {
                let seq = snap.seq;
                return Some((Ok(sse_event(&snap)), (None, rx, seq, svc, id)));
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
