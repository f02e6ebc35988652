//! Scriptable chat-completions provider for offline runs and failure-injection
//! tests.
//!
//! A [`FailureScript`] is an ordered schedule of per-request behaviors,
//! consumed one per request under a single lock. Once the schedule is
//! exhausted every request gets the script's default reply. Script files are
//! JSON:
//!
//! ```json
//! {
//!   "schedule": [
//!     {"kind": "http_status", "code": 429, "retry_after_s": 0.5},
//!     {"kind": "reply_text", "text": "I cannot help with that."},
//!     {"kind": "malformed_text", "text": "<<<not an envelope>>>"},
//!     {"kind": "delay", "seconds": 2.0, "then": {"kind": "fixture", "path": "batch_ok.txt"}},
//!     {"kind": "synthesize"}
//!   ],
//!   "default": {"kind": "synthesize"}
//! }
//! ```
//!
//! Fixture paths are resolved relative to the script file. `synthesize`
//! generates a well-formed detections payload for whatever frames the request
//! carries, so scripted runs work for any video.

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

#[derive(Debug, Error)]
pub enum MockError {
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("cannot read failure script {path}: {source}")]
    Script {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid failure script {path}: {source}")]
    ScriptFormat {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One scripted reaction to a request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Behavior {
    /// 200 with the fixture file's text as the assistant message.
    Fixture { path: PathBuf },
    /// 200 with the given assistant text.
    ReplyText { text: String },
    /// 200 with a generated, well-formed detections payload.
    Synthesize,
    /// Non-success status with an optional `Retry-After` header.
    HttpStatus {
        code: u16,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        retry_after_s: Option<f64>,
    },
    /// 200 whose body is not a chat-completions envelope.
    MalformedText { text: String },
    /// Waits, then behaves as `then`.
    Delay { seconds: f64, then: Box<Behavior> },
}

fn default_behavior() -> Behavior {
    Behavior::Synthesize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureScript {
    #[serde(default)]
    pub schedule: Vec<Behavior>,
    #[serde(default = "default_behavior")]
    pub default: Behavior,
}

impl Default for FailureScript {
    fn default() -> Self {
        Self {
            schedule: Vec::new(),
            default: default_behavior(),
        }
    }
}

impl FailureScript {
    pub fn new(schedule: Vec<Behavior>) -> Self {
        Self {
            schedule,
            ..Self::default()
        }
    }

    pub fn with_default(mut self, default: Behavior) -> Self {
        self.default = default;
        self
    }

    /// Loads a script file, resolving fixture paths against its directory.
    pub fn load(path: &Path) -> Result<Self, MockError> {
        let text = std::fs::read_to_string(path).map_err(|source| MockError::Script {
            path: path.to_path_buf(),
            source,
        })?;
        let mut script: FailureScript =
            serde_json::from_str(&text).map_err(|source| MockError::ScriptFormat {
                path: path.to_path_buf(),
                source,
            })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for b in script.schedule.iter_mut().chain(std::iter::once(&mut script.default)) {
            resolve_paths(b, base);
        }
        Ok(script)
    }
}

fn resolve_paths(b: &mut Behavior, base: &Path) {
    match b {
        Behavior::Fixture { path } if path.is_relative() => *path = base.join(&*path),
        Behavior::Delay { then, .. } => resolve_paths(then, base),
        _ => {}
    }
}

/// A request as the mock received it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub body: Value,
    /// Whether a bearer token was presented. The token itself is not kept.
    pub authorized: bool,
}

#[derive(Debug)]
struct MockState {
    schedule: VecDeque<Behavior>,
    default: Behavior,
    recorded: Vec<RecordedRequest>,
}

type Shared = Arc<Mutex<MockState>>;

/// Running mock server.
pub struct MockProvider {
    addr: SocketAddr,
    state: Shared,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<()>>,
}

impl MockProvider {
    /// Binds `127.0.0.1:port` (0 picks a free port) and starts serving on the
    /// current tokio runtime.
    pub async fn serve(script: FailureScript, port: u16) -> Result<Self, MockError> {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AddrInUse => MockError::PortInUse(port),
                _ => MockError::Io(e),
            })?;
        let addr = listener.local_addr()?;
        let state: Shared = Arc::new(Mutex::new(MockState {
            schedule: script.schedule.into(),
            default: script.default,
            recorded: Vec::new(),
        }));
        let app = Router::new()
            .route("/chat/completions", post(completions))
            .route("/v1/chat/completions", post(completions))
            .route("/__requests", get(list_requests))
            .with_state(state.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let _ = axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
        Ok(Self {
            addr,
            state,
            shutdown: Some(tx),
            task: Some(task),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.state.lock().unwrap().recorded.clone()
    }

    pub fn request_count(&self) -> usize {
        self.state.lock().unwrap().recorded.len()
    }

    /// Replaces the schedule and clears recorded requests.
    pub fn reset(&self, script: FailureScript) {
        let mut state = self.state.lock().unwrap();
        state.schedule = script.schedule.into();
        state.default = script.default;
        state.recorded.clear();
    }

    pub async fn shutdown(mut self) {
        self.stop().await;
    }

    async fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(task) = self.task.take() {
            let _ = task.await;
        }
    }
}

impl Drop for MockProvider {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

async fn list_requests(State(state): State<Shared>) -> Json<Value> {
    let recorded = state.lock().unwrap().recorded.clone();
    Json(json!({ "requests": recorded }))
}

async fn completions(State(state): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let parsed: Value = serde_json::from_slice(&body)
        .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&body).into_owned()));
    let authorized = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("Bearer ") && v.len() > 7);
    let behavior = {
        let mut s = state.lock().unwrap();
        s.recorded.push(RecordedRequest {
            body: parsed.clone(),
            authorized,
        });
        s.schedule.pop_front().unwrap_or_else(|| s.default.clone())
    };
    respond(behavior, &parsed).await
}

async fn respond(mut behavior: Behavior, request: &Value) -> Response {
    while let Behavior::Delay { seconds, then } = behavior {
        tokio::time::sleep(Duration::from_secs_f64(seconds.max(0.0))).await;
        behavior = *then;
    }
    match behavior {
        Behavior::Fixture { path } => match tokio::fs::read_to_string(&path).await {
            Ok(text) => envelope(request, &text),
            Err(e) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                format!("mock fixture {} unreadable: {e}", path.display()),
            )
                .into_response(),
        },
        Behavior::ReplyText { text } => envelope(request, &text),
        Behavior::Synthesize => envelope(request, &synthesize_reply(request)),
        Behavior::HttpStatus {
            code,
            retry_after_s,
        } => {
            let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
            let mut resp = (
                status,
                Json(json!({"error": {"message": format!("scripted status {code}")}})),
            )
                .into_response();
            if let Some(secs) = retry_after_s {
                if let Ok(v) = format!("{secs}").parse() {
                    resp.headers_mut().insert(header::RETRY_AFTER, v);
                }
            }
            resp
        }
        Behavior::MalformedText { text } => {
            ([(header::CONTENT_TYPE, "text/plain")], text).into_response()
        }
        Behavior::Delay { .. } => unreachable!("delays unwrapped above"),
    }
}

fn envelope(request: &Value, text: &str) -> Response {
    let model = request.get("model").cloned().unwrap_or(Value::Null);
    Json(json!({
        "id": "mock-completion",
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop"
        }]
    }))
    .into_response()
}

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"frame_index=(\d+) width=(\d+) height=(\d+)").unwrap())
}

fn keys_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"exactly these keys: ((?:"[a-z][a-z0-9_]*"(?:, )?)+)"#).unwrap())
}

fn texts(request: &Value) -> Vec<&str> {
    let mut out = Vec::new();
    for m in request.get("messages").and_then(Value::as_array).into_iter().flatten() {
        match m.get("content") {
            Some(Value::String(s)) => out.push(s.as_str()),
            Some(Value::Array(parts)) => out.extend(
                parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)),
            ),
            _ => {}
        }
    }
    out
}

/// A deterministic, contract-conforming reply for the frames tagged in the
/// request: frame `i` gets `1 + i % 2` people side by side, every requested
/// attribute set to `"neutral"`. Wrapped in a code fence like a chatty model.
pub fn synthesize_reply(request: &Value) -> String {
    let texts = texts(request);
    let keys: Vec<String> = texts
        .iter()
        .find_map(|t| keys_re().captures(t))
        .map(|c| {
            c[1].split(", ")
                .map(|k| k.trim_matches('"').to_string())
                .collect()
        })
        .unwrap_or_else(|| vec!["emotion".to_string()]);
    let mut payload = serde_json::Map::new();
    for t in &texts {
        for c in tag_re().captures_iter(t) {
            let (i, w, h): (u32, u32, u32) = (
                c[1].parse().unwrap_or(0),
                c[2].parse().unwrap_or(0),
                c[3].parse().unwrap_or(0),
            );
            let people = 1 + i % 2;
            let slot = w / people;
            let dets: Vec<Value> = (0..people)
                .map(|p| {
                    let attrs: serde_json::Map<String, Value> =
                        keys.iter().map(|k| (k.clone(), json!("neutral"))).collect();
                    json!({
                        "person_id": p,
                        "bbox": {
                            "x_min": p * slot + slot / 8,
                            "y_min": h / 4,
                            "x_max": (p + 1) * slot - slot / 8,
                            "y_max": h * 3 / 4,
                        },
                        "confidence": 0.9 - 0.1 * p as f64,
                        "analysis_result": attrs,
                    })
                })
                .collect();
            payload.insert(i.to_string(), Value::Array(dets));
        }
    }
    format!(
        "```json\n{}\n```",
        serde_json::to_string(&Value::Object(payload)).expect("payload serializes")
    )
}
