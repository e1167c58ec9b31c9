//! HTTP JSON facade over [`Engine`].
//!
//! Every non-2xx response carries an [`ApiError`] body. Blocking engine work
//! runs on the blocking pool so slow providers never stall the reactor.

use std::future::{Future, IntoFuture};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::config::AuthConfig;
use crate::langbridge::AudioRef;
use crate::moderation::{ItemStatus, QueueError};
use crate::pipeline::{AskRequest, Engine, ResolveError};
use crate::store::StoreError;

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub trace_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}

pub struct Failure {
    status: StatusCode,
    body: ApiError,
}

impl Failure {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ApiError {
                code: code.into(),
                message: message.into(),
                trace_id: format!("{:016x}", rand::random::<u64>()),
                details: None,
            },
        }
    }

    fn details(mut self, v: serde_json::Value) -> Self {
        self.body.details = Some(v);
        self
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        tracing::warn!(trace_id = %self.body.trace_id, status = self.status.as_u16(), code = %self.body.code, "request failed");
        (self.status, Json(self.body)).into_response()
    }
}

impl From<JsonRejection> for Failure {
    fn from(r: JsonRejection) -> Self {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            return Self::new(r.status(), "payload_too_large", r.body_text());
        }
        Self::bad_request(r.body_text())
    }
}

impl From<BytesRejection> for Failure {
    fn from(r: BytesRejection) -> Self {
        if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
            return Self::new(r.status(), "payload_too_large", r.body_text());
        }
        Self::bad_request(r.body_text())
    }
}

impl From<QueryRejection> for Failure {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}

#[derive(Clone)]
pub struct AppState {
    engine: Option<Arc<Engine>>,
    auth: AuthConfig,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> Self {
        Self {
            auth: engine.config().auth.clone(),
            engine: Some(engine),
        }
    }

    /// A service with no engine yet: every endpoint answers 503.
    pub fn uninitialized(auth: AuthConfig) -> Self {
        Self { engine: None, auth }
    }

    fn engine(&self) -> Result<Arc<Engine>, Failure> {
        self.engine
            .clone()
            .ok_or_else(|| Failure::new(StatusCode::SERVICE_UNAVAILABLE, "not_initialized", "engine is not initialized"))
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Tier {
    User,
    Admin,
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

fn authorize(state: &AppState, headers: &HeaderMap, tier: Tier) -> Result<(), Failure> {
    let given = bearer(headers);
    let admin_ok = state.auth.admin_token.as_deref().is_some_and(|t| given == Some(t));
    let ok = match tier {
        Tier::Admin => state.auth.admin_token.is_none() || admin_ok,
        Tier::User => match &state.auth.user_token {
            None => true,
            Some(t) => given == Some(t.as_str()) || admin_ok,
        },
    };
    if ok {
        Ok(())
    } else {
        Err(Failure::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token"))
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Failure> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Failure::internal(format!("worker failed: {e}")))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AskBody {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub audio_uri: Option<String>,
    #[serde(default)]
    pub lang: Option<String>,
    #[serde(default)]
    pub session_id: Option<String>,
}

impl AskBody {
    pub fn into_request(self) -> Result<AskRequest, Failure> {
        let audio = match (&self.text, self.audio_uri) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Failure::bad_request("exactly one of text and audio_uri is required"))
            }
            (_, Some(uri)) => Some(AudioRef::new(&uri).map_err(|e| Failure::bad_request(e.to_string()))?),
            (Some(t), None) if t.trim().is_empty() => return Err(Failure::bad_request("text is empty")),
            _ => None,
        };
        Ok(AskRequest {
            query_text: self.text,
            audio,
            language: self.lang,
            session_id: self.session_id.unwrap_or_default(),
            route: None,
        })
    }
}

async fn ask(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Result<Json<AskBody>, JsonRejection>,
) -> Result<Response, Failure> {
    authorize(&state, &headers, Tier::User)?;
    let Json(body) = body?;
    let request = body.into_request()?;
    let engine = state.engine()?;
    let env = blocking(move || engine.answer(&request)).await?;
    Ok(Json(env).into_response())
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    status: Option<String>,
    cursor: Option<String>,
    limit: Option<usize>,
}

async fn queue(
    State(state): State<AppState>,
    headers: HeaderMap,
    params: Result<Query<QueueParams>, QueryRejection>,
) -> Result<Response, Failure> {
    authorize(&state, &headers, Tier::Admin)?;
    let Query(p) = params?;
    let status = match p.status.as_deref() {
        None | Some("") | Some("all") => None,
        Some(s) => Some(s.parse::<ItemStatus>().map_err(|_| Failure::bad_request(format!("unknown status {s}")))?),
    };
    let limit = p.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    let engine = state.engine()?;
    let page = engine.queue().list(status, p.cursor.as_deref(), limit);
    match page {
        Ok(page) => Ok(Json(page).into_response()),
        Err(QueueError::BadCursor) => Err(Failure::new(StatusCode::BAD_REQUEST, "invalid_cursor", "invalid cursor")),
        Err(e) => Err(Failure::internal(e.to_string())),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolveBody {
    pub answer: String,
    pub theme: String,
    #[serde(default)]
    pub sub_theme: String,
}

async fn resolve(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<String>,
    body: Result<Json<ResolveBody>, JsonRejection>,
) -> Result<Response, Failure> {
    authorize(&state, &headers, Tier::Admin)?;
    let Json(body) = body?;
    let engine = state.engine()?;
    let out = blocking(move || engine.resolve_moderation(&id, &body.answer, &body.theme, &body.sub_theme)).await?;
    match out {
        Ok(r) => Ok(Json(r).into_response()),
        Err(e @ ResolveError::NotFound(_)) => Err(Failure::new(StatusCode::NOT_FOUND, "not_found", e.to_string())),
        Err(e @ ResolveError::NotOpen) => Err(Failure::new(StatusCode::CONFLICT, "not_open", e.to_string())),
        Err(e @ ResolveError::EmptyAnswer) => {
            Err(Failure::new(StatusCode::UNPROCESSABLE_ENTITY, "empty_answer", e.to_string()))
        }
        Err(ResolveError::RailRejected(v)) => {
            let details = serde_json::to_value(&v).unwrap_or_default();
            Err(Failure::new(StatusCode::UNPROCESSABLE_ENTITY, "rail_rejected", "answer rejected by output rails")
                .details(details))
        }
        Err(e @ ResolveError::Store(StoreError::Record(_))) => {
            Err(Failure::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_record", e.to_string()))
        }
        Err(e) => Err(Failure::internal(e.to_string())),
    }
}

async fn import(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Result<Bytes, BytesRejection>,
) -> Result<Response, Failure> {
    authorize(&state, &headers, Tier::Admin)?;
    let body = body?;
    let text = String::from_utf8(body.to_vec()).map_err(|_| Failure::bad_request("body is not UTF-8"))?;
    let engine = state.engine()?;
    let out = blocking(move || engine.write(|store| store.ingest_str(&text, chrono::Utc::now()))).await?;
    match out {
        Ok(Ok(report)) => Ok(Json(report).into_response()),
        Ok(Err(e)) => Err(Failure::internal(e.to_string())),
        Err(e) => Err(Failure::internal(e.to_string())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub corpus_version: u64,
    pub index_version: u64,
}

async fn health(State(state): State<AppState>) -> Result<Response, Failure> {
    let engine = state.engine()?;
    let h = blocking(move || Health {
        status: "ok".into(),
        corpus_version: engine.corpus_version(),
        index_version: engine.index_version(),
    })
    .await?;
    Ok(Json(h).into_response())
}

async fn metrics(State(state): State<AppState>) -> Result<Response, Failure> {
    let engine = state.engine()?;
    let text = engine.telemetry().render();
    Ok(([(header::CONTENT_TYPE, "text/plain; version=0.0.4")], text).into_response())
}

async fn not_found() -> Failure {
    Failure::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn wrong_method() -> Failure {
    Failure::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed")
}

pub fn router(state: AppState, max_body_bytes: usize) -> Router {
    Router::new()
        .route("/v1/ask", post(ask))
        .route("/v1/moderation/queue", get(queue))
        .route("/v1/moderation/{id}/resolve", post(resolve))
        .route("/v1/corpus/import", post(import))
        .route("/v1/health", get(health))
        .route("/v1/metrics", get(metrics))
        .fallback(not_found)
        .method_not_allowed_fallback(wrong_method)
        .layer(DefaultBodyLimit::max(max_body_bytes))
        .with_state(state)
}

/// Serve until `shutdown` resolves, then stop accepting and give in-flight
/// requests `deadline` to finish.
pub async fn serve(
    engine: Arc<Engine>,
    listener: tokio::net::TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let deadline = Duration::from_millis(engine.config().limits.shutdown_deadline_ms);
    let app = router(AppState::new(engine.clone()), engine.config().limits.max_body_bytes);
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let server = axum::serve(listener, app).with_graceful_shutdown(async {
        let _ = rx.await;
    });
    let mut handle = tokio::spawn(server.into_future());
    tokio::select! {
        r = &mut handle => return r.map_err(std::io::Error::other)?,
        _ = shutdown => {}
    }
    tracing::info!("shutting down");
    let _ = tx.send(());
    match tokio::time::timeout(deadline, &mut handle).await {
        Ok(r) => r.map_err(std::io::Error::other)??,
        Err(_) => {
            tracing::warn!(deadline_ms = deadline.as_millis() as u64, "in-flight requests cut off");
            handle.abort();
        }
    }
    let e = engine.clone();
    tokio::task::spawn_blocking(move || e.checkpoint())
        .await
        .map_err(std::io::Error::other)?
        .map_err(std::io::Error::other)?;
    Ok(())
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
