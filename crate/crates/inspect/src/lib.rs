//! Interactive single-frame inspection over HTTP.
//!
//! `POST /api/inspect` forwards one image and a free-form prompt to the model
//! and returns its reply verbatim. Nothing on this path is parsed, validated
//! or persisted; replies are qualitative and every response says so.
//!
//! Routes:
//! - `POST /api/inspect` with `{"prompt", "image": "data:<type>;base64,...", "session_id"?}`
//! - `GET /api/videos` lists registered videos
//! - `GET /api/frames/{video_id}?t=<seconds>` returns the grid frame nearest `t`
//! - `GET /healthz`
//! - `/` serves the UI's static assets, or a placeholder page without them

mod frames;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use framelens_core::chat::{ChatMessage, ChatRequest, ContentPart, Role};
use framelens_core::gateway::{send_with_retry, ChatBackend, ProviderError, ProviderErrorKind, RetryPolicy};
use framelens_core::media::{decode_still, MediaError, MediaTool, StillFormat, DEFAULT_INTERVAL_S};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::services::ServeDir;
use tracing::{info, warn};

pub use frames::{RegisteredVideo, VideoTable};

pub const DISCLAIMER: &str = "qualitative inspection \u{2014} not a structured artifact";
pub const DEFAULT_MAX_TOKENS: u32 = 512;
pub const FRAME_INDEX_HEADER: &str = "x-frame-index";
pub const FRAME_TIMESTAMP_HEADER: &str = "x-frame-timestamp";

/// Request body limit; inline images are base64 so this allows ~15 MB stills.
const BODY_LIMIT: usize = 20 * 1024 * 1024;

#[derive(Debug, Clone, Deserialize)]
pub struct InspectRequest {
    pub prompt: String,
    /// Inline image as a `data:` URL.
    pub image: String,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectResponse {
    pub text: String,
    pub model_id: String,
    pub latency_ms: u64,
    pub disclaimer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone)]
pub struct InspectOptions {
    pub retry: RetryPolicy,
    pub max_tokens: u32,
    pub temperature: f64,
    pub interval_s: f64,
    pub static_dir: Option<PathBuf>,
}

impl Default for InspectOptions {
    fn default() -> Self {
        Self {
            retry: RetryPolicy::default(),
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
            interval_s: DEFAULT_INTERVAL_S,
            static_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum InspectError {
    #[error(transparent)]
    Media(#[from] MediaError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Inner {
    backend: Arc<dyn ChatBackend>,
    tool: MediaTool,
    options: InspectOptions,
    videos: RwLock<VideoTable>,
}

/// Shared service state. Cheap to clone.
#[derive(Clone)]
pub struct InspectState(Arc<Inner>);

impl InspectState {
    pub fn new(backend: Arc<dyn ChatBackend>, tool: MediaTool, options: InspectOptions) -> Self {
        Self(Arc::new(Inner {
            backend,
            tool,
            options,
            videos: RwLock::new(VideoTable::default()),
        }))
    }

    /// Probes `path` and makes its frames available under the returned id.
    pub fn register_video(&self, path: &Path) -> Result<String, MediaError> {
        let id = self.0.videos.read().unwrap().next_id(path);
        let video = RegisteredVideo::probe(&self.0.tool, id, path, self.0.options.interval_s)?;
        let mut table = self.0.videos.write().unwrap();
        // Re-check under the write lock in case another registration won.
        let id = table.next_id(path);
        let video = RegisteredVideo { video_id: id.clone(), ..video };
        info!(video_id = %id, path = %path.display(), "registered video");
        table.insert(video);
        Ok(id)
    }
}

fn error_body(status: StatusCode, kind: &str, message: impl Into<String>) -> Response {
    (status, Json(json!({"error": kind, "message": message.into()}))).into_response()
}

/// Client-facing status and message for a provider failure. Details stay in
/// the server log.
fn provider_response(err: &ProviderError) -> Response {
    let (status, message) = match err.kind {
        ProviderErrorKind::RateLimited => (StatusCode::TOO_MANY_REQUESTS, "the model provider is rate limiting requests"),
        ProviderErrorKind::AuthFailed => (StatusCode::BAD_GATEWAY, "the model provider rejected the service credentials"),
        ProviderErrorKind::Timeout => (StatusCode::GATEWAY_TIMEOUT, "the model provider did not answer in time"),
        _ => (StatusCode::BAD_GATEWAY, "the model provider request failed"),
    };
    error_body(status, err.kind.as_str(), message)
}

async fn inspect(
    State(state): State<InspectState>,
    body: Result<Json<InspectRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, "invalid_request", e.body_text()),
    };
    if req.prompt.trim().is_empty() {
        return error_body(StatusCode::BAD_REQUEST, "invalid_request", "prompt must not be empty");
    }
    let (media_type, data) = match ContentPart::parse_data_url(&req.image) {
        Ok(v) => v,
        Err(e) => return error_body(StatusCode::BAD_REQUEST, "invalid_image", e),
    };
    if let Err(e) = decode_still(&data) {
        return error_body(StatusCode::BAD_REQUEST, "invalid_image", format!("image does not decode: {e}"));
    }

    let inner = &state.0;
    let request = ChatRequest {
        model: inner.backend.model_id().to_string(),
        messages: vec![ChatMessage::new(
            Role::User,
            vec![ContentPart::Image { media_type, data }, ContentPart::text(req.prompt)],
        )],
        max_tokens: inner.options.max_tokens,
        temperature: inner.options.temperature,
    };
    let started = Instant::now();
    match send_with_retry(inner.backend.as_ref(), &request, &inner.options.retry).await {
        Ok(text) => Json(InspectResponse {
            text,
            model_id: request.model,
            latency_ms: started.elapsed().as_millis() as u64,
            disclaimer: DISCLAIMER.to_string(),
            session_id: req.session_id,
        })
        .into_response(),
        Err(err) => {
            warn!(session = ?req.session_id, error = %err, "inspection request failed");
            provider_response(&err)
        }
    }
}

#[derive(Debug, Deserialize)]
struct FrameQuery {
    t: f64,
}

async fn frame(
    State(state): State<InspectState>,
    UrlPath(video_id): UrlPath<String>,
    query: Result<Query<FrameQuery>, axum::extract::rejection::QueryRejection>,
) -> Response {
    let video = match state.0.videos.read().unwrap().get(&video_id) {
        Some(v) => v.clone(),
        None => return error_body(StatusCode::NOT_FOUND, "unknown_video", format!("no video registered as {video_id:?}")),
    };
    let Ok(Query(FrameQuery { t })) = query else {
        return error_body(StatusCode::BAD_REQUEST, "invalid_request", "query parameter t (seconds) is required");
    };
    if !t.is_finite() || t < 0.0 {
        return error_body(StatusCode::BAD_REQUEST, "invalid_request", "t must be a non-negative number of seconds");
    }
    let Some(index) = video.nearest_grid_index(t) else {
        return error_body(
            StatusCode::RANGE_NOT_SATISFIABLE,
            "beyond_duration",
            format!("t={t} is past the end of the video ({}s)", video.meta.duration_s),
        );
    };
    let timestamp = video.grid[index];
    let tool = state.0.tool.clone();
    let meta = video.meta.clone();
    let format = StillFormat::Png;
    let result = tokio::task::spawn_blocking(move || {
        tool.extract_frame_rgb(&meta, timestamp).and_then(|rgb| format.encode(&rgb))
    })
    .await
    .expect("frame task panicked");
    match result {
        Ok(bytes) => {
            let headers = [
                (axum::http::header::CONTENT_TYPE, HeaderValue::from_static(format.media_type())),
                (HeaderName::from_static(FRAME_INDEX_HEADER), HeaderValue::from(index as u64)),
                (
                    HeaderName::from_static(FRAME_TIMESTAMP_HEADER),
                    HeaderValue::from_str(&timestamp.to_string()).expect("numeric header"),
                ),
            ];
            (headers, bytes).into_response()
        }
        Err(e) => {
            warn!(%video_id, timestamp, error = %e, "frame extraction failed");
            error_body(StatusCode::INTERNAL_SERVER_ERROR, "decode_failure", "frame could not be decoded")
        }
    }
}

async fn videos(State(state): State<InspectState>) -> Json<serde_json::Value> {
    let table = state.0.videos.read().unwrap();
    let list: Vec<_> = table
        .list()
        .into_iter()
        .map(|v| {
            json!({
                "video_id": v.video_id,
                "duration_s": v.meta.duration_s,
                "fps": v.meta.fps,
                "width": v.meta.width,
                "height": v.meta.height,
                "interval_s": v.interval_s,
                "frame_count": v.grid.len(),
            })
        })
        .collect();
    Json(json!({ "videos": list }))
}

async fn placeholder() -> Html<&'static str> {
    Html(
        "<!doctype html><html><head><meta charset=\"utf-8\"><title>framelens inspect</title></head>\
         <body><h1>framelens inspect</h1><p>The web UI is not installed. The API is available under <code>/api</code>.</p></body></html>",
    )
}

pub fn router(state: InspectState) -> Router {
    let api = Router::new()
        .route("/api/inspect", post(inspect))
        .route("/api/videos", get(videos))
        .route("/api/frames/{video_id}", get(frame))
        .route("/healthz", get(|| async { "ok" }))
        .layer(DefaultBodyLimit::max(BODY_LIMIT));
    let api = match &state.0.options.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder)),
    };
    api.with_state(state)
}

/// Binds `host:port` and serves until `shutdown` resolves.
pub async fn serve(
    state: InspectState,
    host: &str,
    port: u16,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), InspectError> {
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .map_err(|source| InspectError::Bind {
            addr: format!("{host}:{port}"),
            source,
        })?;
    let addr: SocketAddr = listener.local_addr()?;
    info!(%addr, "inspect service listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    Ok(())
}
